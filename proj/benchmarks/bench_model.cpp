#include <benchmark/benchmark.h>

#include "embed2text/inversion.hpp"
#include "embed2text/model.hpp"
#include "embed2text/rng.hpp"
#include "embed2text/trainer.hpp"

using namespace embed2text;

namespace {

InverterConfig bench_config() {
  InverterConfig cfg;
  cfg.vocab = 259;
  cfg.d_embedding = 32;
  cfg.d_enc = 64;
  cfg.enc_layers = 1;
  cfg.dec_layers = 2;
  cfg.heads = 4;
  cfg.d_ffn = 128;
  cfg.proj_len = 4;
  cfg.max_tokens = 8;
  cfg.seed = 1;
  return cfg;
}

std::vector<ConditionedExample> bench_batch(const InverterConfig& cfg, int count) {
  Rng rng(9);
  std::vector<ConditionedExample> out;
  for (int i = 0; i < count; ++i) {
    ConditionedExample ex;
    ex.target_emb = Vec::NullaryExpr(cfg.d_embedding, [&](Eigen::Index) { return rng.next_gauss(); });
    ex.hyp_emb = Vec::NullaryExpr(cfg.d_embedding, [&](Eigen::Index) { return rng.next_gauss(); });
    for (int j = 0; j < cfg.max_tokens; ++j) {
      ex.hyp_ids.push_back(int(rng.next_below(256)));
      ex.target_ids.push_back(int(rng.next_below(256)));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

static void BM_TrainStep(benchmark::State& state) {
  const InverterConfig cfg = bench_config();
  InversionModel model(cfg);
  const auto batch = bench_batch(cfg, int(state.range(0)));
  ModelParams grads = zeros_like(model.params());
  for (auto _ : state) {
    for (Mat* g : param_list(grads)) g->setZero();
    benchmark::DoNotOptimize(model.forward_backward(batch, grads));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(128);

static void BM_GreedyDecode(benchmark::State& state) {
  const InverterConfig cfg = bench_config();
  InversionModel model(cfg);
  Rng rng(2);
  const Vec e = Vec::NullaryExpr(cfg.d_embedding, [&](Eigen::Index) { return rng.next_gauss(); });
  std::vector<int> hyp(8, 65);
  const Mat memory = model.encode(e, e, hyp);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.decode_beam(memory, 1, 1));
  }
}
BENCHMARK(BM_GreedyDecode);

static void BM_SbeamRound(benchmark::State& state) {
  const InverterConfig cfg = bench_config();
  auto embedder = make_synthetic_embedder(SyntheticGranularity::kBytes, 32, 4);
  auto tokenizer = make_tokenizer("bytes");
  InverterStack stack{std::make_shared<InversionModel>(cfg),
                      std::make_shared<InversionModel>(cfg), tokenizer,
                      embed_empty_marker(*embedder)};
  const auto target = embedder->embed_one("benchmark target");
  for (auto _ : state) {
    QueryLedger ledger(embedder);
    BeamConfig bc;
    bc.width = int(state.range(0));
    bc.max_rounds = 1;
    benchmark::DoNotOptimize(invert_sbeam(stack, ledger, target, bc));
  }
}
BENCHMARK(BM_SbeamRound)->Arg(1)->Arg(4);
