#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace embed2text {

// Fixed-length dense vector produced by an embedder.
struct EmbeddingVector {
  std::vector<double> values;
  std::string model_id;

  int dim() const { return static_cast<int>(values.size()); }
  double l2_norm() const;
  bool all_finite() const;
};

enum class EmbedderKind { kLocalEncoder, kRemoteApi, kSynthetic };

std::string to_string(EmbedderKind kind);
EmbedderKind embedder_kind_from_string(const std::string& s);

// Everything a caller may rely on about an embedder. model_id uniquely
// identifies tokenizer + weights + normalization.
struct EmbedderDescriptor {
  std::string model_id;
  int dimension = 0;
  bool unit_norm = false;
  int max_input_tokens = 0;
  EmbedderKind kind = EmbedderKind::kSynthetic;
  // Substituted when a caller embeds the empty string and the underlying
  // model cannot represent it.
  std::string empty_input_text = " ";

  void validate() const;
};

// Gaussian noise wrapper parameters: output = base + lambda * eps, eps ~ N(0,1)
// i.i.d. per coordinate.
struct NoiseConfig {
  double lambda = 0.0;
  uint64_t seed = 0;

  void validate() const;
};

// Cosine similarity in [-1, 1]. Throws ContractError on dimension mismatch or
// an all-zero input.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Checks the EmbeddingVector invariants against its descriptor
// (dimension, finiteness, unit norm within 1e-5 when declared).
void validate_embedding(const EmbeddingVector& v, const EmbedderDescriptor& desc);

}  // namespace embed2text
