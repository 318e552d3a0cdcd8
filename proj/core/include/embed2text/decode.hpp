#pragma once

#include <memory>
#include <vector>

#include "embed2text/embedder.hpp"
#include "embed2text/model.hpp"
#include "embed2text/tokenizer.hpp"

namespace embed2text {

// Token-level decoding options for base-model generation.
struct DecodeConfig {
  enum class Kind { kGreedy, kBeam, kNucleus };
  Kind kind = Kind::kGreedy;
  int beam_width = 1;
  double top_p = 0.9;
  int num_return = 1;
  bool rerank = false;  // re-embed candidates, sort by cosine to the target
  uint64_t seed = 0;

  void validate() const;
};

// Generation from the base model p(x | e): conditioning is (e, empty
// hypothesis, phi(empty)). When rerank is set, candidates are embedded
// through the ledger and sorted by cosine to e descending (stable).
std::vector<TokenSequence> base_generate(const InversionModel& base, const Tokenizer& tokenizer,
                                         const EmbeddingVector& e,
                                         const EmbeddingVector& phi_empty,
                                         const DecodeConfig& decode, QueryLedger* ledger);

}  // namespace embed2text
