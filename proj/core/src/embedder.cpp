#include "embed2text/embedder.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>

#include "embed2text/common.hpp"
#include "embed2text/hash.hpp"
#include "embed2text/rng.hpp"
#include "embed2text/tokenizer.hpp"

namespace embed2text {

namespace {

std::vector<double> gaussian_row(uint64_t model_seed, uint64_t token_key, int dim) {
  Rng rng(splitmix64(model_seed ^ splitmix64(token_key + 0x51ed2701)));
  return rng.gauss_vector(static_cast<size_t>(dim));
}

void normalize_or_throw(std::vector<double>& v, const std::string& what) {
  double s = 0.0;
  for (double x : v) s += x * x;
  if (s == 0.0) throw ContractError(what + ": zero-norm embedding");
  const double inv = 1.0 / std::sqrt(s);
  for (double& x : v) x *= inv;
}

class SyntheticEmbedder final : public Embedder {
 public:
  SyntheticEmbedder(SyntheticGranularity granularity, int dimension, uint64_t seed,
                    int max_input_tokens)
      : granularity_(granularity), seed_(seed) {
    desc_.model_id = "synthetic-" +
                     std::string(granularity == SyntheticGranularity::kBytes ? "bytes" : "words") +
                     "-d" + std::to_string(dimension) + "-seed" + std::to_string(seed);
    desc_.dimension = dimension;
    desc_.unit_norm = true;
    desc_.max_input_tokens = max_input_tokens;
    desc_.kind = EmbedderKind::kSynthetic;
    desc_.empty_input_text = granularity == SyntheticGranularity::kBytes ? " " : "the";
    desc_.validate();
  }

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  long truncation_count() const override { return truncations_.load(); }

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& raw : texts) {
      const std::string& text = raw.empty() ? desc_.empty_input_text : raw;
      std::vector<uint64_t> keys = token_keys(text);
      if (static_cast<int>(keys.size()) > desc_.max_input_tokens) {
        keys.resize(static_cast<size_t>(desc_.max_input_tokens));
        truncations_.fetch_add(1);
        log_debug("synthetic embedder truncated an input to " +
                  std::to_string(desc_.max_input_tokens) + " tokens");
      }
      if (keys.empty()) throw ContractError("synthetic embedder: input has no tokens");

      std::vector<double> acc(static_cast<size_t>(desc_.dimension), 0.0);
      for (uint64_t key : keys) {
        const std::vector<double> row = gaussian_row(seed_, key, desc_.dimension);
        for (int i = 0; i < desc_.dimension; ++i) acc[static_cast<size_t>(i)] += row[size_t(i)];
      }
      const double inv_n = 1.0 / static_cast<double>(keys.size());
      for (double& x : acc) x *= inv_n;
      normalize_or_throw(acc, desc_.model_id);

      EmbeddingVector v;
      v.values = std::move(acc);
      v.model_id = desc_.model_id;
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::vector<uint64_t> token_keys(const std::string& text) const {
    std::vector<uint64_t> keys;
    if (granularity_ == SyntheticGranularity::kBytes) {
      keys.reserve(text.size());
      for (unsigned char c : text) keys.push_back(uint64_t(c));
    } else {
      for (const auto& w : split_words(text)) keys.push_back(fnv1a64(w));
    }
    return keys;
  }

  SyntheticGranularity granularity_;
  uint64_t seed_;
  EmbedderDescriptor desc_;
  std::atomic<long> truncations_{0};
};

// local-encoder file: "E2TL" | u32 version | u32 dim | u32 rows | u32 id_len |
// id bytes | rows*dim little-endian doubles. Rows are indexed by byte value.
constexpr char kLocalMagic[4] = {'E', '2', 'T', 'L'};

class LocalEncoderEmbedder final : public Embedder {
 public:
  LocalEncoderEmbedder(std::string model_id, int dimension, std::vector<double> rows,
                       int max_input_tokens)
      : rows_(std::move(rows)) {
    desc_.model_id = std::move(model_id);
    desc_.dimension = dimension;
    desc_.unit_norm = true;
    desc_.max_input_tokens = max_input_tokens;
    desc_.kind = EmbedderKind::kLocalEncoder;
    desc_.empty_input_text = " ";
    desc_.validate();
  }

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  long truncation_count() const override { return truncations_.load(); }

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    const int d = desc_.dimension;
    for (const auto& raw : texts) {
      const std::string& text = raw.empty() ? desc_.empty_input_text : raw;
      size_t n = text.size();
      if (n > static_cast<size_t>(desc_.max_input_tokens)) {
        n = static_cast<size_t>(desc_.max_input_tokens);
        truncations_.fetch_add(1);
      }
      std::vector<double> acc(static_cast<size_t>(d), 0.0);
      for (size_t i = 0; i < n; ++i) {
        const size_t base = size_t(uint8_t(text[i])) * size_t(d);
        for (int j = 0; j < d; ++j) acc[size_t(j)] += rows_[base + size_t(j)];
      }
      for (double& x : acc) x /= static_cast<double>(n);
      normalize_or_throw(acc, desc_.model_id);
      EmbeddingVector v;
      v.values = std::move(acc);
      v.model_id = desc_.model_id;
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  EmbedderDescriptor desc_;
  std::vector<double> rows_;  // 256 * dim
  std::atomic<long> truncations_{0};
};

class NoisyEmbedder final : public Embedder {
 public:
  NoisyEmbedder(std::shared_ptr<Embedder> base, const NoiseConfig& noise)
      : base_(std::move(base)), noise_(noise), rng_(splitmix64(noise.seed ^ 0xfeedface)) {
    desc_ = base_->descriptor();
    char buf[64];
    std::snprintf(buf, sizeof(buf), "+noise-l%g-s%llu", noise_.lambda,
                  static_cast<unsigned long long>(noise_.seed));
    desc_.model_id += buf;
    desc_.unit_norm = false;  // noise is added without re-normalization
  }

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  bool cacheable() const override { return false; }
  long truncation_count() const override { return base_->truncation_count(); }

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out = base_->embed_batch(texts);
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& v : out) {
      for (double& x : v.values) x += noise_.lambda * rng_.next_gauss();
      v.model_id = desc_.model_id;
    }
    return out;
  }

 private:
  std::shared_ptr<Embedder> base_;
  NoiseConfig noise_;
  EmbedderDescriptor desc_;
  std::mutex mu_;
  Rng rng_;
};

}  // namespace

std::shared_ptr<Embedder> make_synthetic_embedder(SyntheticGranularity granularity, int dimension,
                                                  uint64_t seed, int max_input_tokens) {
  if (dimension <= 0) throw ConfigError("synthetic embedder: dimension must be > 0");
  return std::make_shared<SyntheticEmbedder>(granularity, dimension, seed, max_input_tokens);
}

std::shared_ptr<Embedder> make_embedder_from_id(const std::string& model_id) {
  SyntheticGranularity gran;
  const char* rest = nullptr;
  if (model_id.rfind("synthetic-bytes-", 0) == 0) {
    gran = SyntheticGranularity::kBytes;
    rest = model_id.c_str() + strlen("synthetic-bytes-");
  } else if (model_id.rfind("synthetic-words-", 0) == 0) {
    gran = SyntheticGranularity::kWords;
    rest = model_id.c_str() + strlen("synthetic-words-");
  } else {
    throw ConfigError("cannot construct embedder from model_id '" + model_id +
                      "'; only synthetic-* ids are parseable");
  }
  int dim = 0;
  unsigned long long seed = 0;
  if (std::sscanf(rest, "d%d-seed%llu", &dim, &seed) != 2) {
    throw ConfigError("malformed synthetic model_id '" + model_id + "'");
  }
  return make_synthetic_embedder(gran, dim, seed);
}

std::shared_ptr<Embedder> load_local_encoder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("local encoder: cannot open '" + path + "'");
  char magic[4];
  uint32_t version = 0, dim = 0, rows = 0, id_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&dim), 4);
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&id_len), 4);
  if (!in || std::memcmp(magic, kLocalMagic, 4) != 0 || version != 1) {
    throw ConfigError("local encoder: '" + path + "' is not a valid weights file");
  }
  if (rows != 256 || dim == 0 || dim > 65536 || id_len > 4096) {
    throw ConfigError("local encoder: '" + path + "' has an unsupported layout");
  }
  std::string model_id(id_len, '\0');
  in.read(model_id.data(), id_len);
  std::vector<double> data(size_t(rows) * size_t(dim));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw ConfigError("local encoder: '" + path + "' is truncated");
  return std::make_shared<LocalEncoderEmbedder>(std::move(model_id), int(dim), std::move(data),
                                                512);
}

void export_local_encoder(Embedder& embedder, const std::string& path) {
  const EmbedderDescriptor& desc = embedder.descriptor();
  const int d = desc.dimension;
  // Recover per-byte rows from single-token embeddings: a one-token input's
  // embedding is its row normalized, which reproduces the same encoder up to
  // per-row scale and therefore the same cosine geometry.
  std::vector<double> rows(256 * size_t(d), 0.0);
  std::vector<std::string> singles;
  singles.reserve(256);
  for (int b = 0; b < 256; ++b) singles.push_back(std::string(1, char(uint8_t(b))));
  const auto vecs = embedder.embed_batch(singles);
  for (int b = 0; b < 256; ++b) {
    for (int j = 0; j < d; ++j) rows[size_t(b) * size_t(d) + size_t(j)] = vecs[size_t(b)].values[size_t(j)];
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("local encoder: cannot write '" + path + "'");
  const std::string model_id = "local-" + desc.model_id;
  const uint32_t version = 1, dim = uint32_t(d), nrows = 256,
                 id_len = uint32_t(model_id.size());
  out.write(kLocalMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&dim), 4);
  out.write(reinterpret_cast<const char*>(&nrows), 4);
  out.write(reinterpret_cast<const char*>(&id_len), 4);
  out.write(model_id.data(), static_cast<std::streamsize>(model_id.size()));
  out.write(reinterpret_cast<const char*>(rows.data()),
            static_cast<std::streamsize>(rows.size() * sizeof(double)));
  if (!out) throw ConfigError("local encoder: write to '" + path + "' failed");
}

std::shared_ptr<Embedder> make_noisy_embedder(std::shared_ptr<Embedder> base,
                                              const NoiseConfig& noise) {
  noise.validate();
  if (noise.lambda == 0.0) return base;  // bit-exact zero-noise reduction
  return std::make_shared<NoisyEmbedder>(std::move(base), noise);
}

EmbeddingVector QueryLedger::embed(const std::string& text) {
  ++requested_;
  ++round_.requested;
  auto it = memo_.find(text);
  if (it != memo_.end()) {
    ++memo_hits_;
    ++round_.memo_hits;
    return it->second;
  }
  EmbeddingVector v = base_->embed_one(text);
  ++issued_;
  ++round_.issued;
  memo_.emplace(text, v);
  return v;
}

QueryLedger::RoundCounts QueryLedger::take_round() {
  RoundCounts out = round_;
  round_ = RoundCounts{};
  return out;
}

std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts,
                                         Embedder& embedder) {
  if (texts.empty()) throw ContractError("embed_batch: batch must be nonempty");
  std::vector<EmbeddingVector> out = embedder.embed_batch(texts);
  if (out.size() != texts.size()) {
    throw ContractError("embed_batch: embedder returned wrong count");
  }
  for (const auto& v : out) validate_embedding(v, embedder.descriptor());
  return out;
}

std::vector<EmbeddingVector> noisy_embed(std::shared_ptr<Embedder> embedder,
                                         const NoiseConfig& noise,
                                         const std::vector<std::string>& texts) {
  auto wrapped = make_noisy_embedder(std::move(embedder), noise);
  return embed_batch(texts, *wrapped);
}

const std::vector<double>& default_noise_grid() {
  static const std::vector<double> grid = {0.0, 0.001, 0.01, 0.1, 1.0};
  return grid;
}

}  // namespace embed2text
