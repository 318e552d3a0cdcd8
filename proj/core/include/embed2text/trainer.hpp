#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "embed2text/corpus.hpp"
#include "embed2text/embedder.hpp"
#include "embed2text/model.hpp"

namespace embed2text {

struct TrainHyper {
  double lr = 2e-4;
  int epochs = 100;
  int batch_size = 128;
  double warmup_frac = 0.05;  // fraction of total steps spent in warmup
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
  uint64_t seed = 0;
  int workers = 1;
  int log_every = 25;
  std::string metrics_path;  // per-step JSONL; empty disables
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;
};

// Owned by exactly one training job.
struct TrainState {
  InverterConfig config;
  ModelParams params;
  AdamState opt;
  double best_eval_nll = std::numeric_limits<double>::infinity();
  uint64_t seed = 0;
};

// One Adam update with the given learning rate. Gradients are consumed as-is;
// clipping happens in the train loop.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainHyper& hp, double lr);

double global_grad_norm(const ModelParams& grads);

// Conditioned-example builders.
// Base role: empty hypothesis, hyp_emb = phi(empty string).
std::vector<ConditionedExample> make_base_examples(const std::vector<InversionExample>& dataset,
                                                   const EmbeddingVector& phi_empty);
// Corrector role: generated hypothesis plus its re-embedding.
std::vector<ConditionedExample> make_corrector_examples(
    const std::vector<HypothesisRecord>& records);

struct StepMetrics {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
};
using StepCallback = std::function<void(const StepMetrics&)>;

// Minimizes token-level NLL with Adam under warmup + linear-decay scheduling.
// Deterministic for a fixed (seed, workers) pair. Throws on non-finite loss.
// Resumes from `resume` when provided (config must match).
TrainState train_model(const InverterConfig& config,
                       const std::vector<ConditionedExample>& dataset, const TrainHyper& hp,
                       const std::optional<TrainState>& resume = std::nullopt,
                       const StepCallback& on_step = nullptr);

// Mean token NLL over a dataset.
double eval_nll(const InversionModel& model, const std::vector<ConditionedExample>& dataset,
                int workers = 1, int batch_size = 128);
// Teacher-forced token accuracy.
double eval_token_accuracy(const InversionModel& model,
                           const std::vector<ConditionedExample>& dataset, int workers = 1,
                           int batch_size = 128);

// Checkpoint directory layout: config.json + weights.bin + optimizer.bin.
void save_checkpoint(const std::string& dir, const TrainState& state, const std::string& role);
struct LoadedCheckpoint {
  TrainState state;
  std::string role;
};
LoadedCheckpoint load_checkpoint(const std::string& dir);

// phi(empty string) under the substitution policy recorded in the descriptor.
EmbeddingVector embed_empty_marker(Embedder& embedder);

}  // namespace embed2text
