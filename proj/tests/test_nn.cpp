#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "embed2text/common.hpp"
#include "embed2text/corpus.hpp"
#include "embed2text/model.hpp"
#include "embed2text/nn.hpp"
#include "embed2text/trainer.hpp"
#include "support/test_util.hpp"

using namespace embed2text;

namespace {

InverterConfig tiny_config() {
  InverterConfig cfg;
  cfg.vocab = 12;
  cfg.d_embedding = 4;
  cfg.d_enc = 8;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.heads = 2;
  cfg.d_ffn = 16;
  cfg.proj_len = 2;
  cfg.max_tokens = 3;
  cfg.seed = 3;
  return cfg;
}

std::vector<ConditionedExample> tiny_batch(const InverterConfig& cfg, int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<ConditionedExample> out;
  for (int i = 0; i < count; ++i) {
    ConditionedExample ex;
    ex.target_emb = Vec::NullaryExpr(cfg.d_embedding, [&](Eigen::Index) { return rng.next_gauss(); });
    ex.hyp_emb = Vec::NullaryExpr(cfg.d_embedding, [&](Eigen::Index) { return rng.next_gauss(); });
    ex.has_feedback = true;
    const int n_hyp = int(rng.next_below(uint64_t(cfg.max_tokens) + 1));
    const int n_tgt = 1 + int(rng.next_below(uint64_t(cfg.max_tokens)));
    for (int j = 0; j < n_hyp; ++j) ex.hyp_ids.push_back(int(rng.next_below(uint64_t(cfg.vocab - 3))));
    for (int j = 0; j < n_tgt; ++j) ex.target_ids.push_back(int(rng.next_below(uint64_t(cfg.vocab - 3))));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TEST_CASE("emb_to_seq shapes and zero case") {
  InverterConfig cfg = tiny_config();
  cfg.d_embedding = 4;
  cfg.proj_len = 2;
  cfg.d_enc = 3;
  cfg.heads = 1;
  InversionModel model(cfg);
  auto& head = model.params().head_target;
  head.w1.setZero();
  head.w2.setZero();
  const Vec e = Vec::Ones(4);
  const Mat out = emb_to_seq(head, e);
  CHECK(out.rows() == 2);
  CHECK(out.cols() == 3);
  CHECK(out.norm() == 0.0);

  // default projection length is 16
  CHECK(InverterConfig{}.proj_len == 16);
  InverterConfig def;
  def.seed = 1;
  InversionModel def_model(def);
  CHECK(emb_to_seq(def_model.params().head_target, Vec::Ones(def.d_embedding)).rows() == 16);
}

TEST_CASE("emb_to_seq matches hand-computed W2*gelu(W1*e) at d=2, s=1, d_enc=2") {
  ProjectionHead head;
  head.proj_len = 1;
  head.d_enc = 2;
  head.w1.resize(2, 2);
  head.w1 << 1.0, 0.0, 0.0, 1.0;
  head.w2.resize(2, 2);
  head.w2 << 0.5, -0.25, 1.5, 2.0;
  Vec e(2);
  e << 0.3, -0.7;

  const auto gelu = [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); };
  const double h0 = gelu(0.3), h1 = gelu(-0.7);
  const Mat out = emb_to_seq(head, e);
  CHECK(out(0, 0) == doctest::Approx(0.5 * h0 - 0.25 * h1).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(1.5 * h0 + 2.0 * h1).epsilon(1e-12));
}

TEST_CASE("emb_to_seq analytic gradients match central finite differences") {
  // d=3, s=2, d_enc=2: scalar loss sum(C .* out)
  const int d = 3, s = 2, d_enc = 2;
  Rng rng(17);
  ProjectionHead head;
  head.proj_len = s;
  head.d_enc = d_enc;
  head.w1 = Mat::NullaryExpr(d, d, [&](Eigen::Index, Eigen::Index) { return rng.next_gauss(); });
  head.w2 =
      Mat::NullaryExpr(s * d_enc, d, [&](Eigen::Index, Eigen::Index) { return rng.next_gauss(); });
  const Vec e = Vec::NullaryExpr(d, [&](Eigen::Index) { return rng.next_gauss(); });
  const Mat C =
      Mat::NullaryExpr(s, d_enc, [&](Eigen::Index, Eigen::Index) { return rng.next_gauss(); });

  ProjectionHead grad = head;
  grad.w1.setZero();
  grad.w2.setZero();
  const Vec de = emb_to_seq_bwd(head, e, C, grad);

  const double h = 1e-6;
  const auto loss_at = [&](const ProjectionHead& hd, const Vec& ev) {
    return (C.array() * emb_to_seq(hd, ev).array()).sum();
  };
  const auto check_rel = [&](double analytic, double fd) {
    const double denom = std::max({1e-8, std::abs(analytic), std::abs(fd)});
    CHECK(std::abs(analytic - fd) / denom < 1e-4);
  };

  for (int i = 0; i < d; ++i) {
    Vec ep = e, em = e;
    ep(i) += h;
    em(i) -= h;
    check_rel(de(i), (loss_at(head, ep) - loss_at(head, em)) / (2 * h));
  }
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      ProjectionHead hp = head, hm = head;
      hp.w1(i, j) += h;
      hm.w1(i, j) -= h;
      check_rel(grad.w1(i, j), (loss_at(hp, e) - loss_at(hm, e)) / (2 * h));
    }
  }
  for (int i = 0; i < s * d_enc; ++i) {
    for (int j = 0; j < d; ++j) {
      ProjectionHead hp = head, hm = head;
      hp.w2(i, j) += h;
      hm.w2(i, j) -= h;
      check_rel(grad.w2(i, j), (loss_at(hp, e) - loss_at(hm, e)) / (2 * h));
    }
  }
}

TEST_CASE("assemble_corrector_input has length 3s+n") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    InverterConfig cfg = tiny_config();
    cfg.proj_len = 1 + int(rng.next_below(6));
    cfg.max_tokens = 1 + int(rng.next_below(9));
    InversionModel model(cfg);
    const int n = int(rng.next_below(uint64_t(cfg.max_tokens) + 1));
    std::vector<int> hyp(size_t(n), 1);
    const Vec e = Vec::Ones(cfg.d_embedding);
    const Vec ehat = 0.5 * Vec::Ones(cfg.d_embedding);
    const Mat in = assemble_corrector_input(model.params(), cfg, e, ehat, hyp);
    CHECK(in.rows() == 3 * cfg.proj_len + n);
    CHECK(in.cols() == cfg.d_enc);
  }
}

TEST_CASE("assemble_corrector_input base and edge cases") {
  InverterConfig cfg = tiny_config();
  InversionModel model(cfg);
  const Vec e = Vec::Ones(cfg.d_embedding);

  SUBCASE("n=0 base case gives 3s rows") {
    const Mat in = assemble_corrector_input(model.params(), cfg, e, e, {});
    CHECK(in.rows() == 3 * cfg.proj_len);
  }
  SUBCASE("e_hyp == e makes the third segment EmbToSeq(0)") {
    const Mat in = assemble_corrector_input(model.params(), cfg, e, e, {});
    const Mat expected = emb_to_seq(model.params().head_diff, Vec::Zero(cfg.d_embedding));
    CHECK((in.middleRows(2 * cfg.proj_len, cfg.proj_len) - expected).norm() == 0.0);
  }
  SUBCASE("disabled feedback zeroes the hypothesis segments") {
    const Mat in = assemble_corrector_input(model.params(), cfg, e, std::nullopt, {});
    CHECK(in.middleRows(cfg.proj_len, 2 * cfg.proj_len).norm() == 0.0);
    CHECK(in.topRows(cfg.proj_len).norm() > 0.0);
  }
  SUBCASE("dimension mismatch is a contract error") {
    CHECK_THROWS_AS((void)assemble_corrector_input(model.params(), cfg, Vec::Ones(2), e, {}),
                    ContractError);
  }
}

TEST_CASE("full-model analytic gradients match finite differences on sampled parameters") {
  const InverterConfig cfg = tiny_config();
  InversionModel model(cfg);
  const auto batch = tiny_batch(cfg, 3, 11);

  ModelParams grads = zeros_like(model.params());
  (void)model.forward_backward(batch, grads);

  auto params = param_list(model.params());
  auto glist = param_list(grads);
  Rng rng(23);
  const double h = 1e-6;
  int checked = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Mat* m = params[pi];
    if (m->size() == 0) continue;
    for (int k = 0; k < 2; ++k) {  // two random entries per tensor
      const Eigen::Index idx = Eigen::Index(rng.next_below(uint64_t(m->size())));
      const double orig = m->data()[idx];
      m->data()[idx] = orig + h;
      const double lp = model.forward_only(batch).mean_loss();
      m->data()[idx] = orig - h;
      const double lm = model.forward_only(batch).mean_loss();
      m->data()[idx] = orig;
      const double fd = (lp - lm) / (2 * h);
      const double an = glist[pi]->data()[idx];
      const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
      INFO("param tensor ", pi, " entry ", idx, " fd=", fd, " analytic=", an);
      CHECK(std::abs(fd - an) / denom < 2e-4);
      ++checked;
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("lr schedule starts at zero and decays to zero") {
  CHECK(nn::lr_schedule(0, 100, 10, 2e-4) == 0.0);
  CHECK(nn::lr_schedule(10, 100, 10, 2e-4) == doctest::Approx(2e-4));
  CHECK(nn::lr_schedule(5, 100, 10, 2e-4) == doctest::Approx(1e-4));
  CHECK(nn::lr_schedule(100, 100, 10, 2e-4) == 0.0);
  CHECK(nn::lr_schedule(55, 100, 10, 2e-4) == doctest::Approx(1e-4));
}

TEST_CASE("training loss drops by at least 20% over 100 steps on 512 tiny examples") {
  InverterConfig cfg = tiny_config();
  cfg.vocab = 259;
  cfg.d_embedding = 16;
  cfg.d_enc = 32;
  cfg.d_ffn = 64;
  cfg.heads = 2;
  cfg.max_tokens = 4;
  cfg.seed = 9;

  auto embedder = make_synthetic_embedder(SyntheticGranularity::kBytes, 16, 2);
  cfg.embedder_model_id = embedder->descriptor().model_id;
  const auto docs = generate_synthetic_documents(512, 2, 4, 256, 31);
  auto tok = make_tokenizer("bytes");
  std::vector<IngestedDoc> ingested;
  for (const auto& d : docs) ingested.push_back({d.doc_id, tok->make_sequence(d.text), {}});
  const auto dataset = build_inversion_dataset(ingested, *embedder, nullptr, nullptr);
  const auto examples = make_base_examples(dataset, embed_empty_marker(*embedder));

  TrainHyper hp;
  hp.lr = 1e-3;
  hp.epochs = 13;  // 512/64 = 8 steps per epoch -> >= 100 steps
  hp.batch_size = 64;
  hp.seed = 1;

  double first_loss = -1.0, step100_loss = -1.0;
  (void)train_model(cfg, examples, hp, std::nullopt, [&](const StepMetrics& m) {
    if (m.step == 1) first_loss = m.loss;
    if (m.step == 100) step100_loss = m.loss;
  });
  REQUIRE(first_loss > 0.0);
  REQUIRE(step100_loss > 0.0);
  CHECK(step100_loss <= 0.8 * first_loss);
}

TEST_CASE("overfit corrector reaches 95% token accuracy and copies perfect hypotheses") {
  InverterConfig cfg = tiny_config();
  cfg.vocab = 259;
  cfg.d_embedding = 16;
  cfg.d_enc = 32;
  cfg.d_ffn = 64;
  cfg.heads = 2;
  cfg.max_tokens = 4;
  cfg.proj_len = 2;
  cfg.seed = 19;

  auto embedder = make_synthetic_embedder(SyntheticGranularity::kBytes, 16, 8);
  cfg.embedder_model_id = embedder->descriptor().model_id;
  auto tok = make_tokenizer("bytes");
  const auto docs = generate_synthetic_documents(512, 2, 4, 256, 41);
  std::vector<IngestedDoc> ingested;
  for (const auto& d : docs) ingested.push_back({d.doc_id, tok->make_sequence(d.text), {}});
  const auto dataset = build_inversion_dataset(ingested, *embedder, nullptr, nullptr);

  // corrector records with corrupted hypotheses (no trained base needed),
  // diversified through the production augmentation path
  Rng rng(4);
  std::vector<HypothesisRecord> records;
  std::vector<std::string> hyp_texts;
  for (const auto& ex : dataset) {
    HypothesisRecord rec;
    rec.example = ex;
    std::vector<int> ids = ex.tokens.ids;
    ids[rng.next_below(ids.size())] = int(rng.next_below(256));
    rec.hypothesis = tok->from_ids(std::move(ids));
    hyp_texts.push_back(rec.hypothesis.text);
    records.push_back(std::move(rec));
  }
  const auto embs = embed_batch(hyp_texts, *embedder);
  for (size_t i = 0; i < records.size(); ++i) records[i].hypothesis_embedding = embs[i];
  HypothesisAugmentOptions aug;
  aug.copies_per_example = 2;  // exact copy + one wide corruption
  aug.seed = 23;
  records = augment_hypothesis_records(records, *tok, *embedder, nullptr, aug);

  TrainHyper hp;
  hp.lr = 2e-3;
  hp.epochs = 65;  // 1536/128 = 12 steps per epoch
  hp.batch_size = 128;
  hp.seed = 19;
  const auto examples = make_corrector_examples(records);
  TrainState state = train_model(cfg, examples, hp);
  InversionModel corrector(cfg, state.params);

  CHECK(eval_token_accuracy(corrector, examples) >= 0.95);

  // perfect hypothesis in, same sequence out: teacher-forced accuracy on
  // (e, x, phi(x)) pairs
  std::vector<HypothesisRecord> perfect;
  for (const auto& ex : dataset) {
    HypothesisRecord rec;
    rec.example = ex;
    rec.hypothesis = ex.tokens;
    rec.hypothesis_embedding = ex.target_embedding;
    perfect.push_back(std::move(rec));
  }
  CHECK(eval_token_accuracy(corrector, make_corrector_examples(perfect)) >= 0.99);
}

TEST_CASE("seeded training reproduces step-10 losses exactly") {
  const InverterConfig cfg = tiny_config();
  const auto data = tiny_batch(cfg, 64, 7);
  TrainHyper hp;
  hp.lr = 1e-3;
  hp.epochs = 1;
  hp.batch_size = 8;
  hp.seed = 5;

  std::vector<double> losses_a, losses_b;
  (void)train_model(cfg, data, hp, std::nullopt,
                    [&](const StepMetrics& m) { losses_a.push_back(m.loss); });
  (void)train_model(cfg, data, hp, std::nullopt,
                    [&](const StepMetrics& m) { losses_b.push_back(m.loss); });
  REQUIRE(losses_a.size() == losses_b.size());
  REQUIRE(losses_a.size() >= 8);
  for (size_t i = 0; i < losses_a.size(); ++i) CHECK(losses_a[i] == losses_b[i]);
}

TEST_CASE("checkpoint round-trip preserves eval NLL within 1e-6") {
  testutil::TempDir tmp("ckpt");
  const InverterConfig cfg = tiny_config();
  const auto data = tiny_batch(cfg, 32, 13);
  TrainHyper hp;
  hp.lr = 1e-3;
  hp.epochs = 2;
  hp.batch_size = 8;
  hp.seed = 2;
  TrainState state = train_model(cfg, data, hp);

  InversionModel before(cfg, state.params);
  const double nll_before = eval_nll(before, data);

  save_checkpoint(tmp.file("ck"), state, "base");
  const LoadedCheckpoint loaded = load_checkpoint(tmp.file("ck"));
  CHECK(loaded.role == "base");
  CHECK(loaded.state.opt.step == state.opt.step);

  InversionModel after(loaded.state.config, loaded.state.params);
  const double nll_after = eval_nll(after, data);
  CHECK(std::abs(nll_before - nll_after) < 1e-6);
}

TEST_CASE("resumed training continues the step count") {
  const InverterConfig cfg = tiny_config();
  const auto data = tiny_batch(cfg, 32, 13);
  TrainHyper hp;
  hp.lr = 1e-3;
  hp.epochs = 1;
  hp.batch_size = 8;
  hp.seed = 2;
  TrainState state = train_model(cfg, data, hp);
  const long after_first = state.opt.step;
  CHECK(after_first == 4);
  TrainState resumed = train_model(cfg, data, hp, state);
  CHECK(resumed.opt.step == 2 * after_first);
}

TEST_CASE("nucleus and beam decode parameter validation") {
  const InverterConfig cfg = tiny_config();
  InversionModel model(cfg);
  const Mat memory = model.encode(Vec::Ones(cfg.d_embedding), std::nullopt, {});
  CHECK_THROWS_AS((void)model.decode_beam(memory, 0, 1), ConfigError);
  Rng rng(1);
  CHECK_THROWS_AS((void)model.decode_nucleus(memory, 0.0, 1, rng), ConfigError);
  CHECK_THROWS_AS((void)model.decode_nucleus(memory, 1.5, 1, rng), ConfigError);
}
