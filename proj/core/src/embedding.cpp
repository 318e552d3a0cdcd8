#include "embed2text/embedding.hpp"

#include <cmath>

#include "embed2text/common.hpp"

namespace embed2text {

double EmbeddingVector::l2_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

bool EmbeddingVector::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string to_string(EmbedderKind kind) {
  switch (kind) {
    case EmbedderKind::kLocalEncoder:
      return "local-encoder";
    case EmbedderKind::kRemoteApi:
      return "remote-api";
    case EmbedderKind::kSynthetic:
      return "synthetic";
  }
  return "synthetic";
}

EmbedderKind embedder_kind_from_string(const std::string& s) {
  if (s == "local-encoder") return EmbedderKind::kLocalEncoder;
  if (s == "remote-api") return EmbedderKind::kRemoteApi;
  if (s == "synthetic") return EmbedderKind::kSynthetic;
  throw ConfigError("unknown embedder kind: '" + s + "'");
}

void EmbedderDescriptor::validate() const {
  if (model_id.empty()) throw ConfigError("embedder descriptor: model_id must be nonempty");
  if (dimension <= 0) throw ConfigError("embedder descriptor: dimension must be > 0");
  if (max_input_tokens <= 0) {
    throw ConfigError("embedder descriptor: max_input_tokens must be > 0");
  }
}

void NoiseConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("noise config: lambda must be >= 0");
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractError("cosine_similarity: dimension mismatch");
  if (a.empty()) throw ContractError("cosine_similarity: empty vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ContractError("cosine_similarity: zero vector");
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_similarity(a.values, b.values);
}

void validate_embedding(const EmbeddingVector& v, const EmbedderDescriptor& desc) {
  if (v.dim() != desc.dimension) {
    throw ContractError("embedding dimension " + std::to_string(v.dim()) +
                        " does not match descriptor dimension " + std::to_string(desc.dimension) +
                        " for model " + desc.model_id);
  }
  if (!v.all_finite()) throw ContractError("embedding contains non-finite values");
  if (desc.unit_norm) {
    const double n = v.l2_norm();
    if (std::abs(n - 1.0) > 1e-5) {
      throw ContractError("unit-norm embedder produced norm " + std::to_string(n));
    }
  }
}

}  // namespace embed2text
