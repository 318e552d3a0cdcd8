#include "embed2text/inversion.hpp"

#include <algorithm>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "embed2text/common.hpp"
#include "embed2text/hash.hpp"

namespace embed2text {

namespace {

using nlohmann::json;

Vec to_vec(const EmbeddingVector& v) {
  return Eigen::Map<const Vec>(v.values.data(), Eigen::Index(v.values.size()));
}

}  // namespace

std::string to_string(InitializerKind kind) {
  switch (kind) {
    case InitializerKind::kBaseModel:
      return "base-model";
    case InitializerKind::kFixedText:
      return "fixed-text";
    case InitializerKind::kRandomTokens:
      return "random-tokens";
  }
  return "base-model";
}

void BeamConfig::validate() const {
  if (width < 1) throw ConfigError("beam config: width must be >= 1");
  if (max_rounds < 0) throw ConfigError("beam config: max_rounds must be >= 0");
  if (!feedback_enabled && width > 1) {
    throw ConfigError(
        "beam config: sequence-level beam search needs embedding feedback to rank "
        "candidates; use width 1 when feedback is disabled");
  }
  if (initializer == InitializerKind::kFixedText && fixed_text.empty()) {
    throw ConfigError("beam config: fixed-text initializer requires nonempty text");
  }
}

TokenSequence correct_once_with(const InversionModel& corrector, const Tokenizer& tokenizer,
                                const EmbeddingVector& e, const TokenSequence& hypothesis,
                                const std::optional<EmbeddingVector>& hypothesis_embedding) {
  const Vec e_vec = to_vec(e);
  std::optional<Vec> hyp_vec;
  if (hypothesis_embedding) hyp_vec = to_vec(*hypothesis_embedding);
  std::vector<int> ids = hypothesis.ids;
  if (int(ids.size()) > corrector.config().max_tokens) {
    ids.resize(size_t(corrector.config().max_tokens));
  }
  const Mat memory = corrector.encode(e_vec, hyp_vec, ids);
  auto decoded = corrector.decode_beam(memory, 1, 1);
  return tokenizer.from_ids(std::move(decoded.at(0).ids));
}

TokenSequence correct_once(const InversionModel& corrector, const Tokenizer& tokenizer,
                           const EmbeddingVector& e, const TokenSequence& hypothesis,
                           QueryLedger& ledger, bool feedback_enabled) {
  std::optional<EmbeddingVector> hyp_emb;
  if (feedback_enabled) hyp_emb = ledger.embed(hypothesis.text);
  return correct_once_with(corrector, tokenizer, e, hypothesis, hyp_emb);
}

namespace {

TokenSequence initial_hypothesis(const InverterStack& stack, const EmbeddingVector& e,
                                 const BeamConfig& config) {
  const Tokenizer& tok = *stack.tokenizer;
  switch (config.initializer) {
    case InitializerKind::kBaseModel: {
      if (!stack.base) throw ConfigError("inversion: base-model initializer without base model");
      const Mat memory = stack.base->encode(to_vec(e), to_vec(stack.phi_empty), {});
      auto decoded = stack.base->decode_beam(memory, 1, 1);
      return tok.from_ids(std::move(decoded.at(0).ids));
    }
    case InitializerKind::kFixedText: {
      const int budget = stack.corrector ? stack.corrector->config().max_tokens
                                         : (stack.base ? stack.base->config().max_tokens : 0);
      TokenSequence seq = tok.make_sequence(config.fixed_text);
      return budget > 0 ? truncate_tokens(tok, seq, budget) : seq;
    }
    case InitializerKind::kRandomTokens: {
      const int budget = stack.corrector ? stack.corrector->config().max_tokens
                                         : (stack.base ? stack.base->config().max_tokens : 1);
      Rng rng(splitmix64(config.seed ^ 0x1d147));
      std::vector<int> ids(static_cast<size_t>(budget));
      for (auto& id : ids) id = int(rng.next_below(uint64_t(tok.base_vocab())));
      return tok.from_ids(std::move(ids));
    }
  }
  throw ConfigError("inversion: unknown initializer");
}

void require_corrector(const InverterStack& stack, const BeamConfig& config) {
  if (config.max_rounds > 0 && !stack.corrector) {
    throw ConfigError("inversion: max_rounds > 0 requires a corrector model");
  }
  if (!stack.tokenizer) throw ConfigError("inversion: tokenizer missing");
}

void finish_round(CorrectionTrace& trace, TraceRound&& round, QueryLedger& ledger) {
  const auto counts = ledger.take_round();
  round.requested = counts.requested;
  round.issued = counts.issued;
  round.memo_hits = counts.memo_hits;
  trace.total_requested += counts.requested;
  trace.total_issued += counts.issued;
  trace.total_memo_hits += counts.memo_hits;
  trace.rounds.push_back(std::move(round));
}

}  // namespace

CorrectionTrace invert_iterative(const InverterStack& stack, QueryLedger& ledger,
                                 const EmbeddingVector& e, const BeamConfig& config) {
  config.validate();
  if (config.width != 1) {
    throw ConfigError("invert_iterative: width must be 1 (use invert_sbeam for b > 1)");
  }
  require_corrector(stack, config);
  const Tokenizer& tok = *stack.tokenizer;

  CorrectionTrace trace;
  TokenSequence current = initial_hypothesis(stack, e, config);
  std::optional<EmbeddingVector> current_emb;
  double current_cos = 0.0;

  {
    TraceRound round;
    round.round = 0;
    TraceMember member;
    member.seq = current;
    member.accepted = true;
    if (config.feedback_enabled) {
      current_emb = ledger.embed(current.text);
      current_cos = cosine_similarity(*current_emb, e);
      member.cosine = current_cos;
      member.has_cosine = true;
    }
    round.beam.push_back(member);
    finish_round(trace, std::move(round), ledger);
    if (config.feedback_enabled && current_cos >= kExactCosine) trace.terminated_early = true;
  }

  for (int t = 1; t <= config.max_rounds && !trace.terminated_early; ++t) {
    const TokenSequence proposal =
        correct_once_with(*stack.corrector, tok, e, current,
                          config.feedback_enabled ? current_emb : std::nullopt);
    TraceRound round;
    round.round = t;
    TraceMember member;
    if (config.feedback_enabled) {
      const EmbeddingVector prop_emb = ledger.embed(proposal.text);
      const double prop_cos = cosine_similarity(prop_emb, e);
      if (prop_cos > current_cos) {
        current = proposal;
        current_emb = prop_emb;
        current_cos = prop_cos;
        member.accepted = true;
      } else {
        member.accepted = false;  // retain the previous hypothesis
      }
      member.seq = current;
      member.cosine = current_cos;
      member.has_cosine = true;
    } else {
      current = proposal;  // no acceptance signal without feedback
      member.seq = current;
      member.accepted = true;
    }
    round.beam.push_back(member);
    finish_round(trace, std::move(round), ledger);
    if (config.feedback_enabled && current_cos >= kExactCosine) trace.terminated_early = true;
  }

  trace.final_member = trace.rounds.back().beam.front();
  return trace;
}

CorrectionTrace invert_sbeam(const InverterStack& stack, QueryLedger& ledger,
                             const EmbeddingVector& e, const BeamConfig& config) {
  config.validate();
  require_corrector(stack, config);
  if (!config.feedback_enabled) {
    // width is forced to 1 by validate(); the greedy path covers it.
    return invert_iterative(stack, ledger, e, config);
  }
  const Tokenizer& tok = *stack.tokenizer;
  const int b = config.width;

  struct Member {
    TokenSequence seq;
    EmbeddingVector emb;
    double cosine = 0.0;
  };
  std::vector<Member> beam;

  CorrectionTrace trace;
  {
    TokenSequence init = initial_hypothesis(stack, e, config);
    Member m;
    m.emb = ledger.embed(init.text);
    m.cosine = cosine_similarity(m.emb, e);
    m.seq = std::move(init);
    beam.push_back(std::move(m));

    TraceRound round;
    round.round = 0;
    round.beam.push_back(TraceMember{beam[0].seq, beam[0].cosine, true, true});
    finish_round(trace, std::move(round), ledger);
    if (beam[0].cosine >= kExactCosine) trace.terminated_early = true;
  }

  for (int t = 1; t <= config.max_rounds && !trace.terminated_early; ++t) {
    // Expand every member into b candidates by token-level beam decoding.
    std::vector<TokenSequence> candidates;
    candidates.reserve(beam.size() * size_t(b));
    for (const auto& member : beam) {
      const Mat memory =
          stack.corrector->encode(to_vec(e), to_vec(member.emb), member.seq.ids);
      auto decoded = stack.corrector->decode_beam(memory, b, b);
      for (auto& st : decoded) candidates.push_back(tok.from_ids(std::move(st.ids)));
    }
    // Score every candidate (ledger memoization absorbs duplicates).
    std::vector<Member> scored;
    scored.reserve(candidates.size());
    for (auto& cand : candidates) {
      Member m;
      m.emb = ledger.embed(cand.text);
      m.cosine = cosine_similarity(m.emb, e);
      m.seq = std::move(cand);
      scored.push_back(std::move(m));
    }
    // Pool: previous beam first (keep-best-so-far), then candidates; dedup by
    // string; rank by cosine descending (stable).
    std::unordered_set<std::string> prev_texts;
    for (const auto& member : beam) prev_texts.insert(member.seq.text);

    std::vector<Member> pool;
    pool.reserve(beam.size() + scored.size());
    std::unordered_set<std::string> seen;
    for (auto& member : beam) {
      if (seen.insert(member.seq.text).second) pool.push_back(std::move(member));
    }
    for (auto& member : scored) {
      if (seen.insert(member.seq.text).second) pool.push_back(std::move(member));
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Member& a, const Member& b2) { return a.cosine > b2.cosine; });
    if (int(pool.size()) > b) pool.resize(size_t(b));
    beam = std::move(pool);

    TraceRound round;
    round.round = t;
    for (const auto& member : beam) {
      round.beam.push_back(
          TraceMember{member.seq, member.cosine, true, prev_texts.count(member.seq.text) == 0});
    }
    finish_round(trace, std::move(round), ledger);
    if (beam.front().cosine >= kExactCosine) trace.terminated_early = true;
  }

  trace.final_member = trace.rounds.back().beam.front();
  return trace;
}

std::string trace_to_jsonl(const CorrectionTrace& trace) {
  std::string out;
  for (const auto& round : trace.rounds) {
    json members = json::array();
    for (const auto& m : round.beam) {
      json mj;
      mj["text"] = sanitize_for_display(m.seq.text);
      mj["tokens"] = m.seq.ids;
      if (m.has_cosine) {
        mj["cosine"] = m.cosine;
      } else {
        mj["cosine"] = nullptr;
      }
      mj["accepted"] = m.accepted;
      members.push_back(std::move(mj));
    }
    json line;
    line["round"] = round.round;
    line["beam"] = std::move(members);
    line["queries"] =
        json{{"requested", round.requested}, {"issued", round.issued}, {"memo_hits", round.memo_hits}};
    out += line.dump();
    out += "\n";
  }
  json summary;
  summary["final"] = json{{"text", sanitize_for_display(trace.final_member.seq.text)},
                          {"tokens", trace.final_member.seq.ids}};
  if (trace.final_member.has_cosine) summary["final"]["cosine"] = trace.final_member.cosine;
  summary["total_queries"] = json{{"requested", trace.total_requested},
                                  {"issued", trace.total_issued},
                                  {"memo_hits", trace.total_memo_hits}};
  summary["terminated_early"] = trace.terminated_early;
  out += summary.dump();
  out += "\n";
  return out;
}

TokenSequence brute_force_invert(Embedder& embedder, const Tokenizer& tokenizer,
                                 const std::vector<int>& vocabulary, int max_len,
                                 const EmbeddingVector& e, long* scored_count) {
  if (vocabulary.empty()) throw ConfigError("brute_force_invert: empty vocabulary");
  if (max_len < 1) throw ConfigError("brute_force_invert: max_len must be >= 1");
  double budget = 0.0;
  double pow_v = 1.0;
  for (int len = 1; len <= max_len; ++len) {
    pow_v *= double(vocabulary.size());
    budget += pow_v;
    if (budget > 1e6) {
      throw ConfigError("brute_force_invert: search space exceeds 1e6 candidates");
    }
  }

  long scored = 0;
  double best_cos = -2.0;
  TokenSequence best;

  std::vector<std::string> chunk_texts;
  std::vector<TokenSequence> chunk_seqs;
  constexpr size_t kChunk = 512;
  const auto flush = [&]() {
    if (chunk_texts.empty()) return;
    const auto vecs = embed_batch(chunk_texts, embedder);
    for (size_t i = 0; i < vecs.size(); ++i) {
      const double cos = cosine_similarity(vecs[i], e);
      ++scored;
      // strict improvement keeps the earliest candidate in enumeration order,
      // i.e. shortest length then lexicographic
      if (cos > best_cos) {
        best_cos = cos;
        best = chunk_seqs[i];
      }
    }
    chunk_texts.clear();
    chunk_seqs.clear();
  };

  for (int len = 1; len <= max_len; ++len) {
    std::vector<size_t> odo(size_t(len), 0);
    while (true) {
      std::vector<int> ids(static_cast<size_t>(len));
      for (int i = 0; i < len; ++i) ids[size_t(i)] = vocabulary[odo[size_t(i)]];
      TokenSequence seq = tokenizer.from_ids(std::move(ids));
      chunk_texts.push_back(seq.text);
      chunk_seqs.push_back(std::move(seq));
      if (chunk_texts.size() >= kChunk) flush();
      // lexicographic odometer increment
      int pos = len - 1;
      while (pos >= 0) {
        if (++odo[size_t(pos)] < vocabulary.size()) break;
        odo[size_t(pos)] = 0;
        --pos;
      }
      if (pos < 0) break;
    }
  }
  flush();
  if (scored_count) *scored_count = scored;
  return best;
}

ClosenessHistogram analyze_hypothesis_closeness(const std::vector<HypothesisRecord>& records,
                                                int bins) {
  if (records.empty()) throw ContractError("analyze_hypothesis_closeness: empty dataset");
  if (bins < 1) throw ConfigError("analyze_hypothesis_closeness: bins must be >= 1");
  ClosenessHistogram hist;
  hist.bins.assign(size_t(bins), 0);
  double sum = 0.0;
  for (const auto& rec : records) {
    const double cos = cosine_similarity(rec.example.target_embedding, rec.hypothesis_embedding);
    sum += cos;
    const double unit = (cos - hist.lo) / (hist.hi - hist.lo);
    int idx = int(unit * bins);
    if (idx >= bins) idx = bins - 1;  // cos == 1 lands in the top bin
    if (idx < 0) idx = 0;
    ++hist.bins[size_t(idx)];
  }
  hist.count = long(records.size());
  hist.mean = sum / double(records.size());
  return hist;
}

}  // namespace embed2text
