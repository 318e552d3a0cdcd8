#include "embed2text/embedding_cache.hpp"

#include <cstring>
#include <fstream>
#include <mutex>

#include "embed2text/common.hpp"
#include "embed2text/hash.hpp"

namespace embed2text {

namespace {

constexpr char kCacheMagic[4] = {'E', '2', 'T', 'C'};
constexpr uint32_t kCacheVersion = 1;
constexpr uint32_t kElemWidth = sizeof(double);

std::string hex_of_digest(const std::array<uint8_t, 32>& digest) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (uint8_t b : digest) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xf]);
  }
  return out;
}

uint64_t record_checksum(const uint8_t* key, const double* values, int dim) {
  std::string buf(reinterpret_cast<const char*>(key), 32);
  buf.append(reinterpret_cast<const char*>(values), size_t(dim) * sizeof(double));
  return fnv1a64(buf);
}

}  // namespace

EmbeddingCache::EmbeddingCache(std::string path, const EmbedderDescriptor& descriptor)
    : path_(std::move(path)), model_id_(descriptor.model_id), dimension_(descriptor.dimension) {
  descriptor.validate();
  std::ifstream probe(path_, std::ios::binary);
  if (probe.good() && probe.peek() != std::ifstream::traits_type::eof()) {
    probe.close();
    load_existing();
  } else {
    probe.close();
    write_header();
  }
}

void EmbeddingCache::write_header() {
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("embedding cache: cannot create '" + path_ + "'");
  const uint32_t id_len = uint32_t(model_id_.size());
  const uint32_t dim = uint32_t(dimension_);
  out.write(kCacheMagic, 4);
  out.write(reinterpret_cast<const char*>(&kCacheVersion), 4);
  out.write(reinterpret_cast<const char*>(&dim), 4);
  out.write(reinterpret_cast<const char*>(&kElemWidth), 4);
  out.write(reinterpret_cast<const char*>(&id_len), 4);
  out.write(model_id_.data(), static_cast<std::streamsize>(model_id_.size()));
  if (!out) throw ConfigError("embedding cache: cannot write header to '" + path_ + "'");
}

void EmbeddingCache::load_existing() {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw ConfigError("embedding cache: cannot open '" + path_ + "'");
  char magic[4];
  uint32_t version = 0, dim = 0, width = 0, id_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&dim), 4);
  in.read(reinterpret_cast<char*>(&width), 4);
  in.read(reinterpret_cast<char*>(&id_len), 4);
  if (!in || std::memcmp(magic, kCacheMagic, 4) != 0) {
    throw ConfigError("embedding cache: '" + path_ + "' is not a cache file");
  }
  if (version != kCacheVersion || width != kElemWidth) {
    throw ConfigError("embedding cache: '" + path_ + "' has unsupported version/layout");
  }
  if (id_len > 4096) throw ConfigError("embedding cache: '" + path_ + "' header damaged");
  std::string file_model(id_len, '\0');
  in.read(file_model.data(), id_len);
  if (!in) throw ConfigError("embedding cache: '" + path_ + "' header truncated");
  if (file_model != model_id_ || int(dim) != dimension_) {
    throw ConfigError("embedding cache: '" + path_ + "' belongs to model '" + file_model +
                      "' (d=" + std::to_string(dim) + "), requested '" + model_id_ +
                      "' (d=" + std::to_string(dimension_) + ")");
  }

  const size_t vec_bytes = size_t(dimension_) * sizeof(double);
  std::vector<char> rec(32 + vec_bytes + 8);
  long loaded = 0;
  while (true) {
    in.read(rec.data(), static_cast<std::streamsize>(rec.size()));
    const std::streamsize got = in.gcount();
    if (got == 0) break;
    if (got < static_cast<std::streamsize>(rec.size())) {
      ++corrupt_skipped_;
      log_warn("embedding cache: '" + path_ + "' has a truncated trailing record; skipped");
      break;
    }
    const uint8_t* key = reinterpret_cast<const uint8_t*>(rec.data());
    const double* values = reinterpret_cast<const double*>(rec.data() + 32);
    uint64_t stored_sum;
    std::memcpy(&stored_sum, rec.data() + 32 + vec_bytes, 8);
    if (record_checksum(key, values, dimension_) != stored_sum) {
      ++corrupt_skipped_;
      log_warn("embedding cache: '" + path_ + "' record failed checksum; skipped");
      continue;
    }
    std::array<uint8_t, 32> digest;
    std::memcpy(digest.data(), key, 32);
    index_[hex_of_digest(digest)] = std::vector<double>(values, values + dimension_);
    ++loaded;
  }
  log_debug("embedding cache: loaded " + std::to_string(loaded) + " records from '" + path_ + "'");
}

std::optional<EmbeddingVector> EmbeddingCache::lookup(const std::string& text) const {
  const std::string key = sha256_hex(text);
  std::shared_lock lock(mu_);
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  EmbeddingVector v;
  v.values = it->second;
  v.model_id = model_id_;
  return v;
}

void EmbeddingCache::store(const std::string& text, const EmbeddingVector& vector) {
  if (vector.dim() != dimension_) {
    throw ContractError("embedding cache: vector dimension " + std::to_string(vector.dim()) +
                        " does not match cache dimension " + std::to_string(dimension_));
  }
  const auto digest = sha256(text);
  const std::string key = hex_of_digest(digest);

  std::unique_lock lock(mu_);
  if (index_.count(key)) return;  // idempotent store
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("embedding cache: cannot append to '" + path_ + "'");
  const uint64_t sum = record_checksum(digest.data(), vector.values.data(), dimension_);
  out.write(reinterpret_cast<const char*>(digest.data()), 32);
  out.write(reinterpret_cast<const char*>(vector.values.data()),
            static_cast<std::streamsize>(size_t(dimension_) * sizeof(double)));
  out.write(reinterpret_cast<const char*>(&sum), 8);
  if (!out) throw ConfigError("embedding cache: append to '" + path_ + "' failed");
  index_[key] = vector.values;
}

size_t EmbeddingCache::size() const {
  std::shared_lock lock(mu_);
  return index_.size();
}

std::vector<EmbeddingVector> get_or_embed(const std::vector<std::string>& texts,
                                          EmbeddingCache* cache, Embedder& embedder,
                                          GetOrEmbedStats* stats) {
  GetOrEmbedStats local;
  std::vector<EmbeddingVector> out(texts.size());

  if (cache == nullptr || !embedder.cacheable()) {
    if (cache != nullptr && !embedder.cacheable()) {
      log_debug("get_or_embed: embedder '" + embedder.descriptor().model_id +
                "' is not cacheable; bypassing cache");
    }
    out = embed_batch(texts, embedder);
    local.embedded = long(texts.size());
    if (stats) *stats = local;
    return out;
  }

  std::vector<size_t> miss_idx;
  std::vector<std::string> miss_texts;
  for (size_t i = 0; i < texts.size(); ++i) {
    if (auto hit = cache->lookup(texts[i])) {
      out[i] = std::move(*hit);
      ++local.hits;
    } else {
      miss_idx.push_back(i);
      miss_texts.push_back(texts[i]);
    }
  }
  if (!miss_texts.empty()) {
    std::vector<EmbeddingVector> fresh = embed_batch(miss_texts, embedder);
    local.embedded = long(miss_texts.size());
    for (size_t k = 0; k < miss_idx.size(); ++k) {
      cache->store(miss_texts[k], fresh[k]);
      out[miss_idx[k]] = std::move(fresh[k]);
    }
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace embed2text
