#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "embed2text/corpus.hpp"
#include "embed2text/embedder.hpp"
#include "embed2text/model.hpp"
#include "embed2text/tokenizer.hpp"

namespace embed2text {

// A candidate's cosine within 1e-6 of 1 is treated as an exact embedding hit
// and terminates the search.
constexpr double kExactCosine = 1.0 - 1e-6;

// Models and shared assets for one inversion run.
struct InverterStack {
  std::shared_ptr<const InversionModel> base;       // may be null for non-base initializers
  std::shared_ptr<const InversionModel> corrector;  // required for max_rounds > 0
  std::shared_ptr<const Tokenizer> tokenizer;
  EmbeddingVector phi_empty;  // phi(empty string) for base-case conditioning
};

enum class InitializerKind { kBaseModel, kFixedText, kRandomTokens };

std::string to_string(InitializerKind kind);

struct BeamConfig {
  int width = 1;       // b; 1 reduces sequence beam search to greedy correction
  int max_rounds = 20;
  bool feedback_enabled = true;  // false: no phi queries, hypothesis segments zeroed
  InitializerKind initializer = InitializerKind::kBaseModel;
  std::string fixed_text;  // initializer text for kFixedText
  uint64_t seed = 0;       // kRandomTokens stream

  void validate() const;
};

struct TraceMember {
  TokenSequence seq;
  double cosine = 0.0;
  bool has_cosine = false;
  bool accepted = false;  // entered the beam this round
};

struct TraceRound {
  int round = 0;
  std::vector<TraceMember> beam;
  long requested = 0;  // embeddings requested this round (memoized included)
  long issued = 0;     // actual phi queries
  long memo_hits = 0;
};

struct CorrectionTrace {
  std::vector<TraceRound> rounds;
  TraceMember final_member;
  long total_requested = 0;
  long total_issued = 0;
  long total_memo_hits = 0;
  bool terminated_early = false;  // cosine reached the exact-hit threshold

  double best_cosine() const { return final_member.has_cosine ? final_member.cosine : 0.0; }
};

// One correction step of the public operation: re-embeds the hypothesis
// (exactly one ledger request when feedback is enabled, zero otherwise),
// assembles the conditioning and decodes greedily.
TokenSequence correct_once(const InversionModel& corrector, const Tokenizer& tokenizer,
                           const EmbeddingVector& e, const TokenSequence& hypothesis,
                           QueryLedger& ledger, bool feedback_enabled = true);

// Same step with a precomputed hypothesis embedding (no ledger request).
TokenSequence correct_once_with(const InversionModel& corrector, const Tokenizer& tokenizer,
                                const EmbeddingVector& e, const TokenSequence& hypothesis,
                                const std::optional<EmbeddingVector>& hypothesis_embedding);

// Greedy iterative correction: propose, keep only if cosine improves.
// Requires config.width == 1.
CorrectionTrace invert_iterative(const InverterStack& stack, QueryLedger& ledger,
                                 const EmbeddingVector& e, const BeamConfig& config);

// Sequence-level beam search: each member expands into `width` candidates via
// token-level beam decoding; previous members and new candidates compete in
// one pool ranked by cosine, deduplicated by string, truncated to `width`.
CorrectionTrace invert_sbeam(const InverterStack& stack, QueryLedger& ledger,
                             const EmbeddingVector& e, const BeamConfig& config);

// Deterministic JSONL serialization: one round per line, then a summary line.
std::string trace_to_jsonl(const CorrectionTrace& trace);

// Exhaustive argmax-cosine search over all sequences of vocabulary tokens up
// to max_len, ties broken by shortest then lexicographic order. Guarded to
// at most 1e6 candidates. scored_count, when set, receives the number of
// candidates evaluated.
TokenSequence brute_force_invert(Embedder& embedder, const Tokenizer& tokenizer,
                                 const std::vector<int>& vocabulary, int max_len,
                                 const EmbeddingVector& e, long* scored_count = nullptr);

struct ClosenessHistogram {
  double lo = -1.0;
  double hi = 1.0;
  std::vector<long> bins;
  double mean = 0.0;
  long count = 0;
};

// Distribution of cos(e, phi(hypothesis)) over a hypothesis dataset.
ClosenessHistogram analyze_hypothesis_closeness(const std::vector<HypothesisRecord>& records,
                                                int bins = 50);

}  // namespace embed2text
