#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "embed2text/embedding.hpp"

namespace embed2text {

// Black-box text encoder: query access only, no gradients. Implementations
// must be safe to call from multiple threads.
class Embedder {
 public:
  virtual ~Embedder() = default;

  virtual const EmbedderDescriptor& descriptor() const = 0;

  // One vector per input, order preserved. Inputs longer than
  // max_input_tokens are truncated (recorded, not an error); empty inputs are
  // substituted with descriptor().empty_input_text.
  virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) = 0;

  // False when outputs are not a pure function of (model_id, text); such
  // embedders bypass the persistent cache.
  virtual bool cacheable() const { return true; }

  // Number of inputs truncated to max_input_tokens so far.
  virtual long truncation_count() const { return 0; }

  EmbeddingVector embed_one(const std::string& text) {
    return embed_batch(std::vector<std::string>{text})[0];
  }
};

// Procedural embedder for desk-scale experiments: every vocabulary token owns
// a fixed seed-keyed Gaussian row in R^d; embed(x) is the L2-normalized mean
// of the rows of x's tokens.
enum class SyntheticGranularity { kBytes, kWords };

std::shared_ptr<Embedder> make_synthetic_embedder(SyntheticGranularity granularity, int dimension,
                                                  uint64_t seed, int max_input_tokens = 512);

// Parses ids of the form "synthetic-bytes-d32-seed7" / "synthetic-words-d32-seed7".
std::shared_ptr<Embedder> make_embedder_from_id(const std::string& model_id);

// File-backed linear encoder (token-row matrix + mean pooling + normalize).
std::shared_ptr<Embedder> load_local_encoder(const std::string& path);

// Materializes a bytes-granularity embedder's rows into a local-encoder file.
void export_local_encoder(Embedder& embedder, const std::string& path);

// phi_noisy(x) = phi(x) + lambda * eps with eps ~ N(0,1) i.i.d. per
// coordinate, drawn fresh per call from a seed-keyed stream. No
// re-normalization is applied; the wrapped descriptor reports
// unit_norm=false. lambda = 0 returns the base embedder itself.
std::shared_ptr<Embedder> make_noisy_embedder(std::shared_ptr<Embedder> base,
                                              const NoiseConfig& noise);

// Per-job embedding account: memoizes texts so repeated hypotheses are not
// re-queried, and itemizes requested / issued / memo-hit counts.
class QueryLedger {
 public:
  explicit QueryLedger(std::shared_ptr<Embedder> base) : base_(std::move(base)) {}

  EmbeddingVector embed(const std::string& text);

  long requested() const { return requested_; }
  long issued() const { return issued_; }
  long memo_hits() const { return memo_hits_; }

  // Counters since the last call to take_round(); used for per-round trace
  // itemization.
  struct RoundCounts {
    long requested = 0;
    long issued = 0;
    long memo_hits = 0;
  };
  RoundCounts take_round();

  const EmbedderDescriptor& descriptor() const { return base_->descriptor(); }

 private:
  std::shared_ptr<Embedder> base_;
  std::unordered_map<std::string, EmbeddingVector> memo_;
  long requested_ = 0;
  long issued_ = 0;
  long memo_hits_ = 0;
  RoundCounts round_;
};

// Validated batch embedding: checks every output against the descriptor.
std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts,
                                         Embedder& embedder);

// phi_noisy applied to a batch; identical to embed_batch when lambda = 0.
std::vector<EmbeddingVector> noisy_embed(std::shared_ptr<Embedder> embedder,
                                         const NoiseConfig& noise,
                                         const std::vector<std::string>& texts);

// The default lambda grid of the defense study.
const std::vector<double>& default_noise_grid();

}  // namespace embed2text
