#include "embed2text/decode.hpp"

#include <algorithm>

#include "embed2text/common.hpp"

namespace embed2text {

void DecodeConfig::validate() const {
  if (kind == Kind::kBeam && beam_width < 1) {
    throw ConfigError("decode config: beam width must be >= 1");
  }
  if (kind == Kind::kNucleus && !(top_p > 0.0 && top_p <= 1.0)) {
    throw ConfigError("decode config: nucleus p must be in (0, 1]");
  }
  if (num_return < 1) throw ConfigError("decode config: num_return must be >= 1");
}

std::vector<TokenSequence> base_generate(const InversionModel& base, const Tokenizer& tokenizer,
                                         const EmbeddingVector& e,
                                         const EmbeddingVector& phi_empty,
                                         const DecodeConfig& decode, QueryLedger* ledger) {
  decode.validate();
  if (decode.rerank && ledger == nullptr) {
    throw ContractError("base_generate: rerank requires an embedder ledger");
  }
  const Vec e_vec = Eigen::Map<const Vec>(e.values.data(), Eigen::Index(e.values.size()));
  const Vec empty_vec =
      Eigen::Map<const Vec>(phi_empty.values.data(), Eigen::Index(phi_empty.values.size()));
  const Mat memory = base.encode(e_vec, empty_vec, {});

  std::vector<ScoredTokens> raw;
  switch (decode.kind) {
    case DecodeConfig::Kind::kGreedy:
      raw = base.decode_beam(memory, 1, 1);
      break;
    case DecodeConfig::Kind::kBeam:
      raw = base.decode_beam(memory, decode.beam_width, decode.num_return);
      break;
    case DecodeConfig::Kind::kNucleus: {
      Rng rng(splitmix64(decode.seed ^ 0x9c1e05u));
      raw = base.decode_nucleus(memory, decode.top_p, decode.num_return, rng);
      break;
    }
  }

  std::vector<TokenSequence> out;
  out.reserve(raw.size());
  for (auto& st : raw) out.push_back(tokenizer.from_ids(std::move(st.ids)));

  if (decode.rerank && out.size() > 1) {
    std::vector<std::pair<double, size_t>> scored;
    scored.reserve(out.size());
    for (size_t i = 0; i < out.size(); ++i) {
      const EmbeddingVector re = ledger->embed(out[i].text);
      scored.emplace_back(cosine_similarity(re, e), i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<TokenSequence> reranked;
    reranked.reserve(out.size());
    for (const auto& [cos, idx] : scored) reranked.push_back(std::move(out[idx]));
    out = std::move(reranked);
  }
  return out;
}

}  // namespace embed2text
