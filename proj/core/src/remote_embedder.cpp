#include "embed2text/remote_embedder.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "embed2text/common.hpp"

namespace embed2text {

namespace {

using nlohmann::json;

bool is_retryable_status(int status) {
  return status == 429 || status == 500 || status == 502 || status == 503 || status == 504;
}

std::string body_excerpt(const std::string& body) {
  constexpr size_t kMax = 200;
  if (body.size() <= kMax) return body;
  return body.substr(0, kMax) + "...";
}

}  // namespace

RemoteEndpoint remote_endpoint_from_env(const std::string& model_name) {
  RemoteEndpoint ep;
  const char* base = std::getenv("EMBED_API_BASE_URL");
  if (base == nullptr || *base == '\0') {
    throw ConfigError("EMBED_API_BASE_URL is not set");
  }
  ep.base_url = base;
  if (const char* key = std::getenv("EMBED_API_KEY")) ep.api_key = key;
  ep.model_name = model_name;
  return ep;
}

std::vector<EmbeddingVector> fetch_remote_embeddings(const std::vector<std::string>& texts,
                                                     const RemoteEndpoint& endpoint,
                                                     const EmbedderDescriptor& descriptor,
                                                     long* attempts_out) {
  if (texts.empty()) throw ContractError("fetch_remote_embeddings: batch must be nonempty");

  json payload;
  payload["input"] = texts;
  payload["model"] = endpoint.model_name;
  const std::string body = payload.dump();

  httplib::Client client(endpoint.base_url);
  client.set_connection_timeout(endpoint.timeout_sec, 0);
  client.set_read_timeout(endpoint.timeout_sec, 0);
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  }

  long attempts = 0;
  std::string last_error;
  double backoff_ms = endpoint.backoff_initial_ms;
  json response;

  for (int attempt = 1; attempt <= endpoint.max_attempts; ++attempt) {
    ++attempts;
    auto res = client.Post(endpoint.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      log_warn("remote embedder attempt " + std::to_string(attempt) + ": " + last_error);
    } else if (res->status == 200) {
      try {
        response = json::parse(res->body);
      } catch (const json::exception& e) {
        if (attempts_out) *attempts_out = attempts;
        throw TransportError(std::string("remote embedder: unparseable response: ") + e.what());
      }
      if (attempts_out) *attempts_out = attempts;

      if (!response.contains("data") || !response["data"].is_array()) {
        throw TransportError("remote embedder: response missing 'data' array: " +
                             body_excerpt(res->body));
      }
      const auto& data = response["data"];
      if (data.size() != texts.size()) {
        throw TransportError("remote embedder: expected " + std::to_string(texts.size()) +
                             " embeddings, got " + std::to_string(data.size()));
      }
      std::vector<EmbeddingVector> out(texts.size());
      std::vector<bool> seen(texts.size(), false);
      for (const auto& item : data) {
        const size_t idx = item.at("index").get<size_t>();
        if (idx >= texts.size() || seen[idx]) {
          throw TransportError("remote embedder: bad or duplicate index in response");
        }
        seen[idx] = true;
        EmbeddingVector v;
        v.values = item.at("embedding").get<std::vector<double>>();
        v.model_id = descriptor.model_id;
        if (v.dim() != descriptor.dimension) {
          throw ContractError("remote embedder: response dimension " + std::to_string(v.dim()) +
                              " does not match descriptor dimension " +
                              std::to_string(descriptor.dimension));
        }
        out[idx] = std::move(v);
      }
      return out;
    } else if (is_retryable_status(res->status)) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + body_excerpt(res->body);
      log_warn("remote embedder attempt " + std::to_string(attempt) + ": " + last_error);
    } else {
      if (attempts_out) *attempts_out = attempts;
      throw TransportError("remote embedder: non-retryable HTTP " + std::to_string(res->status) +
                           ": " + body_excerpt(res->body));
    }
    if (attempt < endpoint.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(long(backoff_ms)));
      backoff_ms *= endpoint.backoff_multiplier;
    }
  }
  if (attempts_out) *attempts_out = attempts;
  throw TransportError("remote embedder: giving up after " + std::to_string(attempts) +
                       " attempts; last error: " + last_error);
}

struct RemoteEmbedder::Impl {
  RemoteEndpoint endpoint;
  std::shared_ptr<EmbeddingCache> cache;
  std::atomic<long> attempts{0};

  // max-in-flight limiter
  std::mutex mu;
  std::condition_variable cv;
  int in_flight = 0;

  void acquire() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return in_flight < endpoint.max_in_flight; });
    ++in_flight;
  }
  void release() {
    {
      std::lock_guard lock(mu);
      --in_flight;
    }
    cv.notify_one();
  }
};

RemoteEmbedder::RemoteEmbedder(RemoteEndpoint endpoint, EmbedderDescriptor descriptor,
                               std::shared_ptr<EmbeddingCache> cache)
    : desc_(std::move(descriptor)), impl_(std::make_unique<Impl>()) {
  desc_.kind = EmbedderKind::kRemoteApi;
  desc_.validate();
  if (endpoint.max_in_flight < 1) throw ConfigError("remote embedder: max_in_flight must be >= 1");
  impl_->endpoint = std::move(endpoint);
  impl_->cache = std::move(cache);
}

RemoteEmbedder::~RemoteEmbedder() = default;

long RemoteEmbedder::attempts_logged() const { return impl_->attempts.load(); }

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(const std::vector<std::string>& texts) {
  if (texts.empty()) throw ContractError("embed_batch: batch must be nonempty");
  std::vector<EmbeddingVector> out(texts.size());
  std::vector<size_t> miss_idx;
  std::vector<std::string> miss_texts;
  for (size_t i = 0; i < texts.size(); ++i) {
    const std::string& text = texts[i].empty() ? desc_.empty_input_text : texts[i];
    if (impl_->cache) {
      if (auto hit = impl_->cache->lookup(text)) {
        out[i] = std::move(*hit);
        out[i].model_id = desc_.model_id;
        continue;
      }
    }
    miss_idx.push_back(i);
    miss_texts.push_back(text);
  }

  if (!miss_texts.empty()) {
    impl_->acquire();
    long attempts = 0;
    std::vector<EmbeddingVector> fresh;
    try {
      fresh = fetch_remote_embeddings(miss_texts, impl_->endpoint, desc_, &attempts);
    } catch (...) {
      impl_->attempts.fetch_add(attempts);
      impl_->release();
      throw;
    }
    impl_->attempts.fetch_add(attempts);
    impl_->release();
    for (size_t k = 0; k < miss_idx.size(); ++k) {
      if (impl_->cache) impl_->cache->store(miss_texts[k], fresh[k]);
      out[miss_idx[k]] = std::move(fresh[k]);
    }
  }
  return out;
}

}  // namespace embed2text
