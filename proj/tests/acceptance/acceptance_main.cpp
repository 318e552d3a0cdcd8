// Desk-scale acceptance suite. Builds the full pipeline from scratch —
// synthetic corpus, base inverter, corrector — then checks every gate at its
// pinned threshold, printing one pass/fail line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "embed2text/common.hpp"
#include "embed2text/corpus.hpp"
#include "embed2text/defense.hpp"
#include "embed2text/embedder.hpp"
#include "embed2text/inversion.hpp"
#include "embed2text/metrics.hpp"
#include "embed2text/rng.hpp"
#include "embed2text/trainer.hpp"
#include "support/reference_bleu.hpp"

using namespace embed2text;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string pct(double num, double den) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f%% (%g/%g)", 100.0 * num / den, num, den);
  return buf;
}

double elapsed_s(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// pipeline pieces
// ---------------------------------------------------------------------------

struct Pipeline {
  std::shared_ptr<Embedder> embedder;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::vector<InversionExample> dataset;
  std::vector<InversionExample> eval_slice;  // 200 examples from the training corpus
  std::shared_ptr<InversionModel> base;
  std::shared_ptr<InversionModel> corrector;
  EmbeddingVector phi_empty;

  InverterStack stack() const { return InverterStack{base, corrector, tokenizer, phi_empty}; }
};

constexpr int kCorpusSize = 2000;
constexpr int kEvalSlice = 200;
constexpr int kBaseEpochs = 10;
constexpr int kCorrectorEpochs = 30;
constexpr int kAugmentCopies = 4;

Pipeline build_pipeline() {
  Pipeline p;
  p.embedder = make_synthetic_embedder(SyntheticGranularity::kBytes, 32, 2024);
  p.tokenizer = make_tokenizer("bytes");
  p.phi_empty = embed_empty_marker(*p.embedder);

  const auto docs = generate_synthetic_documents(kCorpusSize, 4, 8, 256, 71);
  std::vector<IngestedDoc> ingested;
  for (const auto& d : docs) ingested.push_back({d.doc_id, p.tokenizer->make_sequence(d.text), {}});
  p.dataset = build_inversion_dataset(ingested, *p.embedder, nullptr, nullptr);

  InverterConfig cfg;
  cfg.tokenizer_id = "bytes";
  cfg.vocab = p.tokenizer->vocab_size();
  cfg.d_embedding = 32;
  cfg.d_enc = 64;
  cfg.enc_layers = 1;
  cfg.dec_layers = 2;
  cfg.heads = 4;
  cfg.d_ffn = 128;
  cfg.proj_len = 4;
  cfg.max_tokens = 8;
  cfg.seed = 11;
  cfg.embedder_model_id = p.embedder->descriptor().model_id;

  const auto t0 = std::chrono::steady_clock::now();
  TrainHyper hp;
  hp.lr = 2e-3;
  hp.batch_size = 128;
  hp.seed = 11;
  hp.epochs = kBaseEpochs;
  TrainState base_state = train_model(cfg, make_base_examples(p.dataset, p.phi_empty), hp);
  p.base = std::make_shared<InversionModel>(cfg, base_state.params);
  std::printf("# base trained: %ld steps, %.0fs\n", base_state.opt.step, elapsed_s(t0));

  const Vec empty_vec =
      Eigen::Map<const Vec>(p.phi_empty.values.data(), Eigen::Index(p.phi_empty.values.size()));
  auto records = generate_hypothesis_dataset(
      [&](const InversionExample& ex) {
        const Vec e = Eigen::Map<const Vec>(ex.target_embedding.values.data(),
                                            Eigen::Index(ex.target_embedding.values.size()));
        auto decoded = p.base->decode_beam(p.base->encode(e, empty_vec, {}), 1, 1);
        return p.tokenizer->from_ids(std::move(decoded.at(0).ids));
      },
      p.dataset, *p.embedder, nullptr);
  HypothesisAugmentOptions aug;
  aug.copies_per_example = kAugmentCopies;
  aug.seed = 91;
  records = augment_hypothesis_records(records, *p.tokenizer, *p.embedder, nullptr, aug);

  const auto t1 = std::chrono::steady_clock::now();
  InverterConfig ccfg = cfg;
  ccfg.seed = 12;
  TrainHyper chp = hp;
  chp.epochs = kCorrectorEpochs;
  chp.seed = 12;
  TrainState corr_state = train_model(ccfg, make_corrector_examples(records), chp);
  p.corrector = std::make_shared<InversionModel>(ccfg, corr_state.params);
  std::printf("# corrector trained: %ld steps, %.0fs (train NLL %.4f)\n", corr_state.opt.step,
              elapsed_s(t1), corr_state.best_eval_nll);

  Rng pick(5);
  const auto perm = pick.permutation(p.dataset.size());
  for (int i = 0; i < kEvalSlice; ++i) p.eval_slice.push_back(p.dataset[perm[size_t(i)]]);
  return p;
}

// zero-violation monotonicity check over a stored trace
bool trace_is_monotone(const CorrectionTrace& trace) {
  double prev = -2.0;
  for (const auto& round : trace.rounds) {
    double best = -2.0;
    for (const auto& m : round.beam) {
      if (!m.has_cosine) return true;  // only feedback traces carry cosines
      best = std::max(best, m.cosine);
    }
    if (best < prev) return false;
    prev = best;
  }
  return true;
}

}  // namespace

int main() {
  const auto t_start = std::chrono::steady_clock::now();
  std::printf("# building desk-scale pipeline: %d sequences, vocab 256, d=32\n", kCorpusSize);
  Pipeline p = build_pipeline();
  const InverterStack stack = p.stack();

  std::vector<CorrectionTrace> all_feedback_traces;
  all_feedback_traces.reserve(1200);

  // ---- criterion 1: tiny end-to-end recovery -------------------------------
  long sbeam_exact = 0, strictly_improved = 0;
  {
    for (const auto& ex : p.eval_slice) {
      QueryLedger ledger(p.embedder);
      BeamConfig bc;
      bc.width = 4;
      bc.max_rounds = 20;
      CorrectionTrace trace = invert_sbeam(stack, ledger, ex.target_embedding, bc);
      if (trace.final_member.seq.text == ex.tokens.text) ++sbeam_exact;
      if (trace.final_member.cosine > trace.rounds.front().beam.front().cosine) {
        ++strictly_improved;
      }
      all_feedback_traces.push_back(std::move(trace));
    }
    const bool pass_exact = sbeam_exact >= long(0.80 * kEvalSlice);
    const bool pass_improved = strictly_improved >= long(0.90 * kEvalSlice);
    report(1, pass_exact && pass_improved, "20-round sbeam b=4 recovery on 200-example slice",
           "exact " + pct(double(sbeam_exact), kEvalSlice) + ", strictly improved over base " +
               pct(double(strictly_improved), kEvalSlice));
  }

  // ---- criterion 2: oracle equivalence on the enumerable space -------------
  {
    auto tiny_embedder = make_synthetic_embedder(SyntheticGranularity::kBytes, 32, 501);
    std::vector<int> vocab;
    for (char c = 'a'; c <= 'j'; ++c) vocab.push_back(int(uint8_t(c)));

    // corpus = the whole space (110 strings of length 1-2)
    std::vector<IngestedDoc> space;
    int doc_i = 0;
    for (int len = 1; len <= 2; ++len) {
      std::vector<size_t> odo(size_t(len), 0);
      while (true) {
        std::string text;
        for (int k = 0; k < len; ++k) text.push_back(char('a' + int(odo[size_t(k)])));
        space.push_back(
            {"s" + std::to_string(doc_i++), p.tokenizer->make_sequence(text), {}});
        int pos = len - 1;
        while (pos >= 0) {
          if (++odo[size_t(pos)] < 10) break;
          odo[size_t(pos)] = 0;
          --pos;
        }
        if (pos < 0) break;
      }
    }
    const auto tiny_dataset = build_inversion_dataset(space, *tiny_embedder, nullptr, nullptr);
    const auto tiny_phi_empty = embed_empty_marker(*tiny_embedder);

    InverterConfig tcfg;
    tcfg.vocab = p.tokenizer->vocab_size();
    tcfg.d_embedding = 32;
    tcfg.d_enc = 32;
    tcfg.enc_layers = 1;
    tcfg.dec_layers = 1;
    tcfg.heads = 2;
    tcfg.d_ffn = 64;
    tcfg.proj_len = 2;
    tcfg.max_tokens = 2;
    tcfg.seed = 21;
    TrainHyper thp;
    thp.lr = 2e-3;
    thp.batch_size = 32;
    thp.seed = 21;
    thp.epochs = 60;
    TrainState tb = train_model(tcfg, make_base_examples(tiny_dataset, tiny_phi_empty), thp);
    auto tiny_base = std::make_shared<InversionModel>(tcfg, tb.params);
    const Vec tiny_empty_vec = Eigen::Map<const Vec>(tiny_phi_empty.values.data(), 32);
    auto tiny_records = generate_hypothesis_dataset(
        [&](const InversionExample& ex) {
          const Vec e = Eigen::Map<const Vec>(ex.target_embedding.values.data(), 32);
          auto decoded = tiny_base->decode_beam(tiny_base->encode(e, tiny_empty_vec, {}), 1, 1);
          return p.tokenizer->from_ids(std::move(decoded.at(0).ids));
        },
        tiny_dataset, *tiny_embedder, nullptr);
    HypothesisAugmentOptions taug;
    taug.copies_per_example = 3;
    taug.seed = 31;
    tiny_records =
        augment_hypothesis_records(tiny_records, *p.tokenizer, *tiny_embedder, nullptr, taug);
    InverterConfig tccfg = tcfg;
    tccfg.seed = 22;
    TrainHyper tchp = thp;
    tchp.epochs = 80;
    tchp.seed = 22;
    TrainState tc = train_model(tccfg, make_corrector_examples(tiny_records), tchp);
    auto tiny_corrector = std::make_shared<InversionModel>(tccfg, tc.params);
    InverterStack tiny_stack{tiny_base, tiny_corrector, p.tokenizer, tiny_phi_empty};

    // Mean pooling is order-invariant and collapses repeats, so "ab"/"ba"
    // and "a"/"aa" embed identically. Sources come from the canonical
    // subspace (single tokens and strictly sorted pairs), where the embedder
    // is injective — verified by a margin check against every candidate with
    // a different token frequency distribution.
    std::vector<const InversionExample*> canonical;
    for (const auto& ex : tiny_dataset) {
      if (ex.tokens.ids.size() == 1 ||
          (ex.tokens.ids.size() == 2 && ex.tokens.ids[0] < ex.tokens.ids[1])) {
        canonical.push_back(&ex);
      }
    }
    const auto freq_key = [](const std::string& text) {
      if (text.size() == 2 && text[0] == text[1]) return std::string(1, text[0]);
      std::string key = text;
      std::sort(key.begin(), key.end());
      return key;
    };
    Rng pick(3);
    long oracle_exact = 0, sbeam_within_oracle = 0, injective = 0;
    const int targets = 50;
    for (int t = 0; t < targets; ++t) {
      const auto& ex = *canonical[pick.next_below(canonical.size())];
      long scored = 0;
      const TokenSequence oracle =
          brute_force_invert(*tiny_embedder, *p.tokenizer, vocab, 2, ex.target_embedding, &scored);
      if (oracle.text == ex.tokens.text) ++oracle_exact;
      const double oracle_cos = cosine_similarity(
          embed_batch({oracle.text}, *tiny_embedder)[0], ex.target_embedding);

      // injectivity check: every candidate with a different frequency
      // distribution stays clearly below the source's cosine of 1
      double second_best = -2.0;
      for (const auto& cand : tiny_dataset) {
        if (freq_key(cand.tokens.text) == freq_key(ex.tokens.text)) continue;
        second_best = std::max(
            second_best, cosine_similarity(cand.target_embedding, ex.target_embedding));
      }
      if (second_best < 1.0 - 1e-6) ++injective;

      QueryLedger ledger(tiny_embedder);
      BeamConfig bc;
      bc.width = 4;
      bc.max_rounds = 8;
      CorrectionTrace trace = invert_sbeam(tiny_stack, ledger, ex.target_embedding, bc);
      if (trace.final_member.cosine <= oracle_cos + 1e-9) ++sbeam_within_oracle;
      all_feedback_traces.push_back(std::move(trace));
    }
    report(2, oracle_exact == targets && sbeam_within_oracle == targets && injective == targets,
           "brute-force oracle equivalence on vocab-10/len-2 space",
           "oracle exact " + std::to_string(oracle_exact) + "/50, sbeam within oracle cosine " +
               std::to_string(sbeam_within_oracle) + "/50, injectivity margin " +
               std::to_string(injective) + "/50");
  }

  // ---- criterion 4 (run before 3 so its traces count toward the 1000) ------
  {
    long identical = 0;
    const int jobs = 100;
    for (int j = 0; j < jobs; ++j) {
      const auto& ex = p.eval_slice[size_t(j) % p.eval_slice.size()];
      BeamConfig bc;
      bc.width = 1;
      bc.max_rounds = 12;
      bc.seed = uint64_t(j);
      QueryLedger la(p.embedder), lb(p.embedder);
      CorrectionTrace ta = invert_iterative(stack, la, ex.target_embedding, bc);
      CorrectionTrace tb = invert_sbeam(stack, lb, ex.target_embedding, bc);
      if (trace_to_jsonl(ta) == trace_to_jsonl(tb)) ++identical;
      all_feedback_traces.push_back(std::move(ta));
      all_feedback_traces.push_back(std::move(tb));
    }
    report(4, identical == jobs, "sbeam(b=1) and iterative traces byte-identical",
           std::to_string(identical) + "/100 seeded jobs identical");
  }

  // ---- criterion 7: feedback ablation direction ----------------------------
  long greedy_fb_exact = 0;
  {
    long nofb_exact = 0;
    for (const auto& ex : p.eval_slice) {
      {
        QueryLedger ledger(p.embedder);
        BeamConfig bc;
        bc.width = 1;
        bc.max_rounds = 20;
        CorrectionTrace trace = invert_iterative(stack, ledger, ex.target_embedding, bc);
        if (trace.final_member.seq.text == ex.tokens.text) ++greedy_fb_exact;
        all_feedback_traces.push_back(std::move(trace));
      }
      {
        QueryLedger ledger(p.embedder);
        BeamConfig bc;
        bc.width = 1;
        bc.max_rounds = 20;
        bc.feedback_enabled = false;
        CorrectionTrace trace = invert_iterative(stack, ledger, ex.target_embedding, bc);
        if (trace.final_member.seq.text == ex.tokens.text) ++nofb_exact;
      }
    }
    const double gap = 100.0 * double(greedy_fb_exact - nofb_exact) / double(kEvalSlice);
    report(7, gap >= 10.0, "feedback beats text-only correction by >= 10 exact points",
           "feedback " + pct(double(greedy_fb_exact), kEvalSlice) + " vs no-feedback " +
               pct(double(nofb_exact), kEvalSlice));
  }

  // ---- criterion 8: initialization robustness ------------------------------
  // Same 20-round sequence-beam search as the criterion-1 recovery run, with
  // only the initializer changed; compared against that run's base-init rate.
  {
    long random_exact = 0, fixed_exact = 0;
    for (size_t i = 0; i < p.eval_slice.size(); ++i) {
      const auto& ex = p.eval_slice[i];
      {
        QueryLedger ledger(p.embedder);
        BeamConfig bc;
        bc.width = 4;
        bc.max_rounds = 20;
        bc.initializer = InitializerKind::kRandomTokens;
        bc.seed = uint64_t(i);
        CorrectionTrace trace = invert_sbeam(stack, ledger, ex.target_embedding, bc);
        if (trace.final_member.seq.text == ex.tokens.text) ++random_exact;
        all_feedback_traces.push_back(std::move(trace));
      }
      {
        QueryLedger ledger(p.embedder);
        BeamConfig bc;
        bc.width = 4;
        bc.max_rounds = 20;
        bc.initializer = InitializerKind::kFixedText;
        bc.fixed_text =
            "there's no reverse on a motorcycle, as my friend found out quite dramatically the "
            "other day";
        CorrectionTrace trace = invert_sbeam(stack, ledger, ex.target_embedding, bc);
        if (trace.final_member.seq.text == ex.tokens.text) ++fixed_exact;
        all_feedback_traces.push_back(std::move(trace));
      }
    }
    const double base_rate = 100.0 * double(sbeam_exact) / double(kEvalSlice);
    const double random_rate = 100.0 * double(random_exact) / double(kEvalSlice);
    const double fixed_rate = 100.0 * double(fixed_exact) / double(kEvalSlice);
    const bool pass = (base_rate - random_rate <= 5.0) && (base_rate - fixed_rate <= 5.0);
    char detail[160];
    std::snprintf(detail, sizeof(detail), "base-init %.1f%%, random-init %.1f%%, fixed-init %.1f%%",
                  base_rate, random_rate, fixed_rate);
    report(8, pass, "random/fixed initializers land within 5 exact points of base init", detail);
  }

  // ---- criterion 3: monotonicity over >= 1000 stored traces ----------------
  {
    long violations = 0;
    for (const auto& trace : all_feedback_traces) {
      if (!trace_is_monotone(trace)) ++violations;
    }
    report(3, all_feedback_traces.size() >= 1000 && violations == 0,
           "best-of-beam cosine non-decreasing in every stored trace",
           std::to_string(all_feedback_traces.size()) + " traces, " + std::to_string(violations) +
               " violations");
  }

  // ---- criterion 5: shape and gradient checks ------------------------------
  {
    Rng rng(17);
    long shape_failures = 0;
    for (int trial = 0; trial < 50; ++trial) {
      InverterConfig cfg;
      cfg.vocab = 32;
      cfg.d_embedding = 4 + int(rng.next_below(8));
      cfg.d_enc = 8;
      cfg.enc_layers = 1;
      cfg.dec_layers = 1;
      cfg.heads = 2;
      cfg.d_ffn = 16;
      cfg.proj_len = 1 + int(rng.next_below(8));
      cfg.max_tokens = 1 + int(rng.next_below(12));
      cfg.seed = trial;
      InversionModel model(cfg);
      const int n = int(rng.next_below(uint64_t(cfg.max_tokens) + 1));
      std::vector<int> hyp(size_t(n), 1);
      const Vec e = Vec::Ones(cfg.d_embedding);
      const Mat in = assemble_corrector_input(model.params(), cfg, e, e, hyp);
      if (in.rows() != 3 * cfg.proj_len + n || in.cols() != cfg.d_enc) ++shape_failures;
    }

    // finite-difference agreement for emb_to_seq at d=3, s=2, d_enc=2
    ProjectionHead head;
    head.proj_len = 2;
    head.d_enc = 2;
    head.w1 = Mat::NullaryExpr(3, 3, [&](Eigen::Index, Eigen::Index) { return rng.next_gauss(); });
    head.w2 = Mat::NullaryExpr(4, 3, [&](Eigen::Index, Eigen::Index) { return rng.next_gauss(); });
    const Vec e = Vec::NullaryExpr(3, [&](Eigen::Index) { return rng.next_gauss(); });
    const Mat C = Mat::NullaryExpr(2, 2, [&](Eigen::Index, Eigen::Index) { return rng.next_gauss(); });
    ProjectionHead grad = head;
    grad.w1.setZero();
    grad.w2.setZero();
    const Vec de = emb_to_seq_bwd(head, e, C, grad);
    const auto loss_at = [&](const ProjectionHead& hd, const Vec& ev) {
      return (C.array() * emb_to_seq(hd, ev).array()).sum();
    };
    double max_rel = 0.0;
    const double h = 1e-6;
    const auto rel = [](double a, double b) {
      return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
    };
    for (int i = 0; i < 3; ++i) {
      Vec ep = e, em = e;
      ep(i) += h;
      em(i) -= h;
      max_rel = std::max(max_rel, rel(de(i), (loss_at(head, ep) - loss_at(head, em)) / (2 * h)));
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        ProjectionHead hp = head, hm = head;
        hp.w1(i, j) += h;
        hm.w1(i, j) -= h;
        max_rel = std::max(
            max_rel, rel(grad.w1(i, j), (loss_at(hp, e) - loss_at(hm, e)) / (2 * h)));
      }
    }
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 3; ++j) {
        ProjectionHead hp = head, hm = head;
        hp.w2(i, j) += h;
        hm.w2(i, j) -= h;
        max_rel = std::max(
            max_rel, rel(grad.w2(i, j), (loss_at(hp, e) - loss_at(hm, e)) / (2 * h)));
      }
    }
    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "0/50 shape failures expected, got %ld; max gradient rel err %.2e",
                  shape_failures, max_rel);
    report(5, shape_failures == 0 && max_rel < 1e-4,
           "encoder input length 3s+n and emb_to_seq gradients", detail);
  }

  // ---- criterion 6: metrics oracle ------------------------------------------
  {
    Rng rng(314);
    static const char* lexicon[] = {"the", "cat", "sat", "on",  "mat",  "dog", "ran",
                                    "blue", "sky", "sun", "ice", "warm", "cold", "up"};
    const auto sentence = [&](int lo, int hi) {
      const int n = lo + int(rng.next_below(uint64_t(hi - lo + 1)));
      std::string out;
      for (int i = 0; i < n; ++i) {
        if (i) out.push_back(' ');
        out += lexicon[rng.next_below(14)];
      }
      return out;
    };
    long agree = 0;
    const int pairs = 50;
    for (int i = 0; i < pairs; ++i) {
      std::string a = sentence(1, 12);
      std::string b = (i % 5 == 0) ? a : sentence(1, 12);
      if (std::abs(bleu(a, b) - testutil::reference_bleu(a, b)) < 1e-6) ++agree;
    }
    const bool f1_case = std::abs(token_f1("a b c", "b c d") - 66.67) < 0.01;

    // exact-match reconstructions must score BLEU 100 on evaluation outputs
    long exact_implication_checked = 0, exact_implication_ok = 0;
    for (const auto& ex : p.eval_slice) {
      QueryLedger ledger(p.embedder);
      BeamConfig bc;
      bc.width = 1;
      bc.max_rounds = 4;
      const CorrectionTrace trace = invert_iterative(stack, ledger, ex.target_embedding, bc);
      const std::string& pred = trace.final_member.seq.text;
      if (exact_match(pred, ex.tokens.text, *p.tokenizer)) {
        ++exact_implication_checked;
        if (std::abs(bleu(pred, ex.tokens.text) - 100.0) < 1e-9) ++exact_implication_ok;
      }
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "reference agreement %ld/50, f1 hand case %s, exact=>bleu100 %ld/%ld",
                  agree, f1_case ? "ok" : "bad", exact_implication_ok, exact_implication_checked);
    report(6,
           agree == pairs && f1_case && exact_implication_checked > 0 &&
               exact_implication_ok == exact_implication_checked,
           "metrics agree with independent oracles", detail);
  }

  // ---- criteria 9 + 10: defense trade-off and NDCG fixtures -----------------
  {
    const bool rank1 = std::abs(ndcg_at_10({"d1"}, {{"d1", 1}}) - 1.0) < 1e-12;
    const bool rank2 =
        std::abs(ndcg_at_10({"d2", "d1"}, {{"d1", 1}}) - 0.6309) < 1e-4;
    report(10, rank1 && rank2, "NDCG hand-computed fixtures",
           std::string("rank-1 ") + (rank1 ? "ok" : "bad") + ", rank-2-of-2 " +
               (rank2 ? "ok" : "bad"));

    const RetrievalTask task = make_self_retrieval_task(p.eval_slice);
    const AttackFactory make_attack = [&](std::shared_ptr<Embedder> noisy) {
      return InvertFn([&, noisy](const InversionExample& ex) {
        QueryLedger ledger(noisy);
        BeamConfig bc;
        bc.width = 1;
        bc.max_rounds = 10;  // the defense scenario's corrective budget
        return invert_iterative(stack, ledger, ex.target_embedding, bc).final_member.seq;
      });
    };
    NoiseSweepOptions opts;
    opts.lambdas = {0.0, 0.001, 0.01, 0.1, 1.0};
    opts.noise_seed = 13;
    opts.eval.dataset_id = "acceptance";
    opts.eval.method_id = "defend";
    const auto points =
        noise_sweep(p.embedder, p.eval_slice, task, make_attack, *p.tokenizer, nullptr, opts);

    // undefended reference run for the lambda = 0 identity
    EvalOptions eopts = opts.eval;
    eopts.method_id = opts.eval.method_id + " lambda=" + std::to_string(0.0);
    const auto undefended = evaluate_dataset(make_attack(p.embedder), p.eval_slice, *p.tokenizer,
                                             *p.embedder, nullptr, eopts);

    int inversions = 0;
    double worst_inversion = 0.0;
    bool tolerated = true;
    for (size_t i = 1; i < points.size(); ++i) {
      const double rise = points[i].reconstruction.cos - points[i - 1].reconstruction.cos;
      if (rise > 0.0) {
        ++inversions;
        worst_inversion = std::max(worst_inversion, rise);
      }
    }
    tolerated = inversions == 0 || (inversions == 1 && worst_inversion <= 0.01);

    const bool zero_identity = points[0].reconstruction.bleu == undefended.bleu &&
                               points[0].reconstruction.exact == undefended.exact &&
                               points[0].reconstruction.cos == undefended.cos;
    const bool self_retrieval_one = std::abs(points[0].ndcg_at_10 - 1.0) < 1e-12;
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "cos path %.3f/%.3f/%.3f/%.3f/%.3f, inversions %d (worst %.4f), lambda0 %s, "
                  "ndcg@0 %.3f",
                  points[0].reconstruction.cos, points[1].reconstruction.cos,
                  points[2].reconstruction.cos, points[3].reconstruction.cos,
                  points[4].reconstruction.cos, inversions, worst_inversion,
                  zero_identity ? "identical" : "DIFFERS", points[0].ndcg_at_10);
    report(9, tolerated && zero_identity && self_retrieval_one,
           "noise defense trade-off shape on the lambda grid", detail);
  }

  std::printf("# acceptance finished in %.0fs: %d failure(s)\n", elapsed_s(t_start), g_failures);
  return g_failures == 0 ? 0 : 1;
}
