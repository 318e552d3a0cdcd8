#include "embed2text/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "embed2text/common.hpp"
#include "embed2text/nn.hpp"

namespace embed2text {

namespace {

using nlohmann::json;

json config_to_json(const InverterConfig& cfg) {
  return json{{"tokenizer_id", cfg.tokenizer_id},
              {"vocab", cfg.vocab},
              {"d_embedding", cfg.d_embedding},
              {"d_enc", cfg.d_enc},
              {"enc_layers", cfg.enc_layers},
              {"dec_layers", cfg.dec_layers},
              {"heads", cfg.heads},
              {"d_ffn", cfg.d_ffn},
              {"proj_len", cfg.proj_len},
              {"max_tokens", cfg.max_tokens},
              {"seed", cfg.seed},
              {"embedder_model_id", cfg.embedder_model_id}};
}

InverterConfig config_from_json(const json& j) {
  InverterConfig cfg;
  cfg.tokenizer_id = j.at("tokenizer_id").get<std::string>();
  cfg.vocab = j.at("vocab").get<int>();
  cfg.d_embedding = j.at("d_embedding").get<int>();
  cfg.d_enc = j.at("d_enc").get<int>();
  cfg.enc_layers = j.at("enc_layers").get<int>();
  cfg.dec_layers = j.at("dec_layers").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.d_ffn = j.at("d_ffn").get<int>();
  cfg.proj_len = j.at("proj_len").get<int>();
  cfg.max_tokens = j.at("max_tokens").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.embedder_model_id = j.at("embedder_model_id").get<std::string>();
  cfg.validate();
  return cfg;
}

constexpr char kWeightsMagic[4] = {'E', '2', 'T', 'W'};

void write_params(std::ofstream& out, const ModelParams& params) {
  const auto mats = param_list(params);
  const uint32_t version = 1;
  const uint64_t count = mats.size();
  out.write(kWeightsMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const Mat* m : mats) {
    const uint32_t rows = uint32_t(m->rows()), cols = uint32_t(m->cols());
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    out.write(reinterpret_cast<const char*>(m->data()),
              std::streamsize(sizeof(double)) * m->size());
  }
}

void read_params(std::ifstream& in, ModelParams& params, const std::string& what) {
  auto mats = param_list(params);
  char magic[4];
  uint32_t version = 0;
  uint64_t count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 8);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0 || version != 1 ||
      count != mats.size()) {
    throw ConfigError(what + ": not a compatible weights blob");
  }
  for (Mat* m : mats) {
    uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in || rows != uint32_t(m->rows()) || cols != uint32_t(m->cols())) {
      throw ConfigError(what + ": weight shape mismatch against config");
    }
    in.read(reinterpret_cast<char*>(m->data()), std::streamsize(sizeof(double)) * m->size());
  }
  if (!in) throw ConfigError(what + ": truncated weights blob");
}

// Deterministic multi-worker batch pass: contiguous chunks, reduced in chunk
// order.
InversionModel::BatchResult parallel_pass(const InversionModel& model,
                                          std::span<const ConditionedExample> batch, int workers,
                                          ModelParams* grads) {
  const int B = int(batch.size());
  if (workers < 1) workers = 1;
  workers = std::min(workers, B);
  if (workers <= 1) {
    return grads ? model.forward_backward(batch, *grads) : model.forward_only(batch);
  }
  std::vector<InversionModel::BatchResult> results(static_cast<size_t>(workers));
  std::vector<ModelParams> chunk_grads;
  if (grads) {
    chunk_grads.reserve(size_t(workers));
    for (int w = 0; w < workers; ++w) chunk_grads.push_back(zeros_like(*grads));
  }
  std::vector<std::thread> threads;
  const int per = (B + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int lo = w * per;
    const int hi = std::min(B, lo + per);
    if (lo >= hi) break;
    threads.emplace_back([&, w, lo, hi] {
      const auto chunk = batch.subspan(size_t(lo), size_t(hi - lo));
      results[size_t(w)] =
          grads ? model.forward_backward(chunk, chunk_grads[size_t(w)]) : model.forward_only(chunk);
    });
  }
  for (auto& t : threads) t.join();

  InversionModel::BatchResult total;
  for (const auto& r : results) {
    total.loss_sum += r.loss_sum;
    total.tokens += r.tokens;
    total.correct += r.correct;
  }
  if (grads) {
    // forward_backward scales grads by 1/chunk_tokens; re-weight chunks so the
    // sum equals the whole-batch mean-loss gradient.
    auto out = param_list(*grads);
    for (int w = 0; w < int(chunk_grads.size()); ++w) {
      const double weight =
          total.tokens > 0 ? double(results[size_t(w)].tokens) / double(total.tokens) : 0.0;
      auto part = param_list(chunk_grads[size_t(w)]);
      for (size_t i = 0; i < out.size(); ++i) *out[i] += weight * (*part[i]);
    }
  }
  return total;
}

}  // namespace

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainHyper& hp, double lr) {
  ++state.step;
  const double b1 = hp.adam_beta1, b2 = hp.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, double(state.step));
  const double bc2 = 1.0 - std::pow(b2, double(state.step));
  auto p = param_list(params);
  auto g = param_list(grads);
  auto m = param_list(state.m);
  auto v = param_list(state.v);
  for (size_t i = 0; i < p.size(); ++i) {
    *m[i] = b1 * (*m[i]) + (1.0 - b1) * (*g[i]);
    *v[i] = b2 * (*v[i]).array().matrix() + (1.0 - b2) * g[i]->array().square().matrix();
    const auto mhat = m[i]->array() / bc1;
    const auto vhat = v[i]->array() / bc2;
    p[i]->array() -= lr * mhat / (vhat.sqrt() + hp.adam_eps);
  }
}

double global_grad_norm(const ModelParams& grads) {
  double sq = 0.0;
  for (const Mat* m : param_list(grads)) sq += m->squaredNorm();
  return std::sqrt(sq);
}

std::vector<ConditionedExample> make_base_examples(const std::vector<InversionExample>& dataset,
                                                   const EmbeddingVector& phi_empty) {
  std::vector<ConditionedExample> out;
  out.reserve(dataset.size());
  for (const auto& ex : dataset) {
    ConditionedExample ce;
    ce.target_emb = Eigen::Map<const Vec>(ex.target_embedding.values.data(),
                                          Eigen::Index(ex.target_embedding.values.size()));
    ce.hyp_emb =
        Eigen::Map<const Vec>(phi_empty.values.data(), Eigen::Index(phi_empty.values.size()));
    ce.has_feedback = true;
    ce.hyp_ids = {};
    ce.target_ids = ex.tokens.ids;
    out.push_back(std::move(ce));
  }
  return out;
}

std::vector<ConditionedExample> make_corrector_examples(
    const std::vector<HypothesisRecord>& records) {
  std::vector<ConditionedExample> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    ConditionedExample ce;
    ce.target_emb =
        Eigen::Map<const Vec>(rec.example.target_embedding.values.data(),
                              Eigen::Index(rec.example.target_embedding.values.size()));
    ce.hyp_emb = Eigen::Map<const Vec>(rec.hypothesis_embedding.values.data(),
                                       Eigen::Index(rec.hypothesis_embedding.values.size()));
    ce.has_feedback = true;
    ce.hyp_ids = rec.hypothesis.ids;
    ce.target_ids = rec.example.tokens.ids;
    out.push_back(std::move(ce));
  }
  return out;
}

TrainState train_model(const InverterConfig& config,
                       const std::vector<ConditionedExample>& dataset, const TrainHyper& hp,
                       const std::optional<TrainState>& resume, const StepCallback& on_step) {
  config.validate();
  if (dataset.empty()) throw ConfigError("train_model: dataset is empty");
  if (hp.batch_size < 1 || hp.epochs < 1) {
    throw ConfigError("train_model: batch_size and epochs must be >= 1");
  }

  TrainState state;
  if (resume) {
    state = *resume;
  } else {
    state.config = config;
    state.seed = hp.seed;
    InversionModel fresh(config);
    state.params = fresh.params();
    state.opt.m = zeros_like(state.params);
    state.opt.v = zeros_like(state.params);
  }

  const long steps_per_epoch = long((dataset.size() + size_t(hp.batch_size) - 1) / size_t(hp.batch_size));
  const long total_steps = steps_per_epoch * hp.epochs;
  const long warmup = std::max<long>(1, long(hp.warmup_frac * double(total_steps)));

  std::ofstream metrics;
  if (!hp.metrics_path.empty()) {
    metrics.open(hp.metrics_path, resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw ConfigError("train_model: cannot write metrics to " + hp.metrics_path);
  }

  InversionModel model(config, std::move(state.params));
  ModelParams grads = zeros_like(model.params());
  Rng shuffle_rng(splitmix64(hp.seed ^ 0x7ea1c0de));

  long step = state.opt.step;
  const long target_steps = state.opt.step + total_steps;
  while (step < target_steps) {
    const std::vector<size_t> order = shuffle_rng.permutation(dataset.size());
    for (size_t start = 0; start < order.size() && step < target_steps;
         start += size_t(hp.batch_size)) {
      const size_t end = std::min(order.size(), start + size_t(hp.batch_size));
      std::vector<ConditionedExample> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);

      for (Mat* g : param_list(grads)) g->setZero();
      const auto res = parallel_pass(model, batch, hp.workers, &grads);
      const double loss = res.mean_loss();
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_model: non-finite loss at step " + std::to_string(step) +
                                 " (lr=" + std::to_string(nn::lr_schedule(step, target_steps,
                                                                          warmup, hp.lr)) +
                                 ", batch=" + std::to_string(batch.size()) + ")");
      }
      if (hp.clip_norm > 0.0) {
        const double norm = global_grad_norm(grads);
        if (norm > hp.clip_norm) {
          const double scale = hp.clip_norm / norm;
          for (Mat* g : param_list(grads)) (*g) *= scale;
        }
      }
      const double lr = nn::lr_schedule(step, target_steps, warmup, hp.lr);
      adam_step(model.params(), grads, state.opt, hp, lr);
      ++step;

      if (on_step) on_step(StepMetrics{step, loss, lr});
      if (metrics.is_open() && (step % std::max(1, hp.log_every) == 0 || step == target_steps)) {
        metrics << json{{"step", step}, {"loss", loss}, {"lr", lr}}.dump() << "\n";
      }
    }
  }

  state.params = std::move(model.params());
  state.config = config;
  InversionModel eval_model(config, state.params);
  state.best_eval_nll = eval_nll(eval_model, dataset, hp.workers, hp.batch_size);
  return state;
}

double eval_nll(const InversionModel& model, const std::vector<ConditionedExample>& dataset,
                int workers, int batch_size) {
  if (dataset.empty()) return 0.0;
  double loss_sum = 0.0;
  long tokens = 0;
  for (size_t start = 0; start < dataset.size(); start += size_t(batch_size)) {
    const size_t end = std::min(dataset.size(), start + size_t(batch_size));
    const auto res = parallel_pass(
        model, std::span<const ConditionedExample>(dataset.data() + start, end - start), workers,
        nullptr);
    loss_sum += res.loss_sum;
    tokens += res.tokens;
  }
  return tokens > 0 ? loss_sum / double(tokens) : 0.0;
}

double eval_token_accuracy(const InversionModel& model,
                           const std::vector<ConditionedExample>& dataset, int workers,
                           int batch_size) {
  if (dataset.empty()) return 0.0;
  long tokens = 0, correct = 0;
  for (size_t start = 0; start < dataset.size(); start += size_t(batch_size)) {
    const size_t end = std::min(dataset.size(), start + size_t(batch_size));
    const auto res = parallel_pass(
        model, std::span<const ConditionedExample>(dataset.data() + start, end - start), workers,
        nullptr);
    tokens += res.tokens;
    correct += res.correct;
  }
  return tokens > 0 ? double(correct) / double(tokens) : 0.0;
}

void save_checkpoint(const std::string& dir, const TrainState& state, const std::string& role) {
  std::filesystem::create_directories(dir);
  {
    json j;
    j["role"] = role;
    j["config"] = config_to_json(state.config);
    j["step"] = state.opt.step;
    j["best_eval_nll"] = state.best_eval_nll;
    j["seed"] = state.seed;
    std::ofstream out(dir + "/config.json", std::ios::trunc);
    if (!out) throw ConfigError("save_checkpoint: cannot write " + dir + "/config.json");
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("save_checkpoint: cannot write " + dir + "/weights.bin");
    write_params(out, state.params);
  }
  {
    std::ofstream out(dir + "/optimizer.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("save_checkpoint: cannot write " + dir + "/optimizer.bin");
    const uint64_t step = uint64_t(state.opt.step);
    out.write(reinterpret_cast<const char*>(&step), 8);
    write_params(out, state.opt.m);
    write_params(out, state.opt.v);
  }
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  LoadedCheckpoint out;
  {
    std::ifstream in(dir + "/config.json");
    if (!in) throw ConfigError("load_checkpoint: cannot open " + dir + "/config.json");
    json j = json::parse(in, nullptr, true);
    out.role = j.at("role").get<std::string>();
    out.state.config = config_from_json(j.at("config"));
    out.state.best_eval_nll = j.at("best_eval_nll").get<double>();
    out.state.seed = j.at("seed").get<uint64_t>();
  }
  InversionModel shape(out.state.config);
  out.state.params = shape.params();
  out.state.opt.m = zeros_like(out.state.params);
  out.state.opt.v = zeros_like(out.state.params);
  {
    std::ifstream in(dir + "/weights.bin", std::ios::binary);
    if (!in) throw ConfigError("load_checkpoint: cannot open " + dir + "/weights.bin");
    read_params(in, out.state.params, dir + "/weights.bin");
  }
  {
    std::ifstream in(dir + "/optimizer.bin", std::ios::binary);
    if (!in) throw ConfigError("load_checkpoint: cannot open " + dir + "/optimizer.bin");
    uint64_t step = 0;
    in.read(reinterpret_cast<char*>(&step), 8);
    out.state.opt.step = long(step);
    read_params(in, out.state.opt.m, dir + "/optimizer.bin(m)");
    read_params(in, out.state.opt.v, dir + "/optimizer.bin(v)");
  }
  return out;
}

EmbeddingVector embed_empty_marker(Embedder& embedder) {
  return embedder.embed_one("");  // embedder substitutes its empty-input text
}

}  // namespace embed2text
