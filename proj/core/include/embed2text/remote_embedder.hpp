#pragma once

#include <memory>
#include <string>
#include <vector>

#include "embed2text/embedder.hpp"
#include "embed2text/embedding.hpp"
#include "embed2text/embedding_cache.hpp"

namespace embed2text {

// Connection settings for an OpenAI-compatible embeddings endpoint.
// Wire format: POST {path} with {"input": [...], "model": "..."} and a
// bearer token; response {"data": [{"embedding": [...], "index": i}, ...]}
// re-sorted by index.
struct RemoteEndpoint {
  std::string base_url;  // e.g. "https://api.example.com" or "http://127.0.0.1:8089"
  std::string api_key;
  std::string model_name;
  std::string path = "/v1/embeddings";
  int max_attempts = 5;
  int backoff_initial_ms = 500;
  double backoff_multiplier = 2.0;
  int max_in_flight = 4;
  int timeout_sec = 30;
};

// Reads EMBED_API_BASE_URL and EMBED_API_KEY. Throws ConfigError when the
// base URL is unset.
RemoteEndpoint remote_endpoint_from_env(const std::string& model_name);

class RemoteEmbedder final : public Embedder {
 public:
  // `cache` may be null; when set, responses are written through it and
  // repeated inputs are served without network calls.
  RemoteEmbedder(RemoteEndpoint endpoint, EmbedderDescriptor descriptor,
                 std::shared_ptr<EmbeddingCache> cache = nullptr);
  ~RemoteEmbedder() override;

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

  // HTTP attempts made over the lifetime of this client (retries included).
  long attempts_logged() const;

 private:
  struct Impl;
  EmbedderDescriptor desc_;
  std::unique_ptr<Impl> impl_;
};

// Raw network fetch without cache involvement: retries transient failures
// (HTTP 429/5xx, transport errors) with exponential backoff, throws
// TransportError after max_attempts or on a non-retryable status.
// attempts_out, when set, receives the number of HTTP attempts made.
std::vector<EmbeddingVector> fetch_remote_embeddings(const std::vector<std::string>& texts,
                                                     const RemoteEndpoint& endpoint,
                                                     const EmbedderDescriptor& descriptor,
                                                     long* attempts_out = nullptr);

}  // namespace embed2text
