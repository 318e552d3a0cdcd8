#pragma once

#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "embed2text/embedder.hpp"
#include "embed2text/embedding.hpp"

namespace embed2text {

// Append-only persistent cache of (sha256(text), vector) records for one
// embedder. Binary little-endian doubles; vectors round-trip bit-exactly.
// One file per model_id; the header pins model_id, dimension and element
// width. Concurrent readers share the in-memory index; appends take an
// exclusive lock. Corrupt records are skipped and re-embedded on demand.
class EmbeddingCache {
 public:
  // Opens (or creates) the cache file and verifies its header against the
  // descriptor. Throws ConfigError on a header mismatch.
  EmbeddingCache(std::string path, const EmbedderDescriptor& descriptor);

  std::optional<EmbeddingVector> lookup(const std::string& text) const;
  void store(const std::string& text, const EmbeddingVector& vector);

  size_t size() const;
  const std::string& path() const { return path_; }
  const std::string& model_id() const { return model_id_; }
  int dimension() const { return dimension_; }
  // Records skipped during the initial scan because of checksum or size
  // damage.
  long corrupt_records_skipped() const { return corrupt_skipped_; }

 private:
  void load_existing();
  void write_header();

  std::string path_;
  std::string model_id_;
  int dimension_ = 0;
  long corrupt_skipped_ = 0;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::vector<double>> index_;  // sha256 hex -> values
};

struct GetOrEmbedStats {
  long hits = 0;      // served from cache without querying phi
  long embedded = 0;  // texts sent to the embedder
};

// Cache-through batch embedding. Hits are returned without querying phi;
// misses are embedded in one order-preserving batch, stored, and returned.
// Non-cacheable embedders (noise wrappers) bypass the cache entirely.
std::vector<EmbeddingVector> get_or_embed(const std::vector<std::string>& texts,
                                          EmbeddingCache* cache, Embedder& embedder,
                                          GetOrEmbedStats* stats = nullptr);

}  // namespace embed2text
