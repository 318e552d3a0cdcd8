#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "embed2text/common.hpp"
#include "embed2text/remote_embedder.hpp"
#include "support/test_util.hpp"

using namespace embed2text;
using nlohmann::json;

namespace {

// OpenAI-compatible mock: deterministic 4-dim embeddings derived from the
// input text, optional scripted failures, request counting.
class MockServer {
 public:
  MockServer() {
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++requests_;
      {
        const int current = ++in_flight_;
        int seen = max_in_flight_.load();
        while (current > seen && !max_in_flight_.compare_exchange_weak(seen, current)) {
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      if (fail_first_ > 0 && n <= fail_first_) {
        res.status = fail_status_;
        res.set_content("{\"error\": \"scripted failure\"}", "application/json");
        --in_flight_;
        return;
      }
      const json body = json::parse(req.body);
      json data = json::array();
      const auto& inputs = body.at("input");
      // respond in reverse order on purpose; the client must re-sort by index
      for (size_t i = inputs.size(); i-- > 0;) {
        const std::string text = inputs[i].get<std::string>();
        json item;
        item["index"] = i;
        item["embedding"] = embedding_for(text);
        data.push_back(std::move(item));
      }
      json out;
      out["data"] = std::move(data);
      out["model"] = body.at("model");
      res.set_content(out.dump(), "application/json");
      --in_flight_;
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockServer() {
    server_.stop();
    thread_.join();
  }

  static std::vector<double> embedding_for(const std::string& text) {
    std::vector<double> v(4, 0.0);
    for (size_t i = 0; i < text.size(); ++i) {
      v[i % 4] += double(uint8_t(text[i])) / 255.0;
    }
    v[0] += 1.0;  // never all-zero
    return v;
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int requests() const { return requests_.load(); }
  int max_in_flight() const { return max_in_flight_.load(); }
  void script_failures(int count, int status) {
    fail_first_ = count;
    fail_status_ = status;
    requests_ = 0;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> requests_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  int fail_first_ = 0;
  int fail_status_ = 429;
};

EmbedderDescriptor remote_descriptor() {
  EmbedderDescriptor desc;
  desc.model_id = "mock-remote-4d";
  desc.dimension = 4;
  desc.unit_norm = false;
  desc.max_input_tokens = 8192;
  desc.kind = EmbedderKind::kRemoteApi;
  return desc;
}

RemoteEndpoint endpoint_for(const MockServer& server) {
  RemoteEndpoint ep;
  ep.base_url = server.base_url();
  ep.api_key = "test-key";
  ep.model_name = "mock-model";
  ep.backoff_initial_ms = 1;
  return ep;
}

}  // namespace

TEST_CASE("mock server vectors surface in input order") {
  MockServer server;
  RemoteEmbedder client(endpoint_for(server), remote_descriptor());
  const std::vector<std::string> texts = {"alpha", "beta", "gamma"};
  const auto out = client.embed_batch(texts);
  REQUIRE(out.size() == 3);
  for (size_t i = 0; i < texts.size(); ++i) {
    CHECK(out[i].values == MockServer::embedding_for(texts[i]));
    CHECK(out[i].model_id == "mock-remote-4d");
  }
}

TEST_CASE("second identical request is served from the cache with zero network calls") {
  MockServer server;
  testutil::TempDir tmp("remote");
  auto cache = std::make_shared<EmbeddingCache>(tmp.file("cache.bin"), remote_descriptor());
  RemoteEmbedder client(endpoint_for(server), remote_descriptor(), cache);

  (void)client.embed_batch({"hello", "world"});
  const int after_first = server.requests();
  CHECK(after_first == 1);
  (void)client.embed_batch({"hello", "world"});
  CHECK(server.requests() == after_first);  // zero additional network calls
  CHECK(cache->size() == 2);
}

TEST_CASE("two transient 429s then success: three attempts logged") {
  MockServer server;
  server.script_failures(2, 429);
  RemoteEmbedder client(endpoint_for(server), remote_descriptor());
  const auto out = client.embed_batch({"retry me"});
  CHECK(out.size() == 1);
  CHECK(client.attempts_logged() == 3);
  CHECK(server.requests() == 3);
}

TEST_CASE("non-retryable status raises a transport error with the body excerpt") {
  MockServer server;
  server.script_failures(1000, 401);
  RemoteEmbedder client(endpoint_for(server), remote_descriptor());
  CHECK_THROWS_AS((void)client.embed_batch({"denied"}), TransportError);
  CHECK(server.requests() == 1);  // no retries on 401
  try {
    (void)client.embed_batch({"denied"});
  } catch (const TransportError& e) {
    CHECK(std::string(e.what()).find("401") != std::string::npos);
    CHECK(std::string(e.what()).find("scripted failure") != std::string::npos);
  }
}

TEST_CASE("retry budget exhaustion raises a transport error") {
  MockServer server;
  server.script_failures(1000, 503);
  RemoteEndpoint ep = endpoint_for(server);
  ep.max_attempts = 3;
  RemoteEmbedder client(ep, remote_descriptor());
  CHECK_THROWS_AS((void)client.embed_batch({"never"}), TransportError);
  CHECK(server.requests() == 3);
}

TEST_CASE("dimension mismatch against the descriptor is a contract error") {
  MockServer server;
  EmbedderDescriptor desc = remote_descriptor();
  desc.dimension = 7;  // server returns 4
  RemoteEmbedder client(endpoint_for(server), desc);
  CHECK_THROWS_AS((void)client.embed_batch({"shape"}), ContractError);
}

TEST_CASE("max-in-flight limit is enforced") {
  MockServer server;
  RemoteEndpoint ep = endpoint_for(server);
  ep.max_in_flight = 1;
  RemoteEmbedder client(ep, remote_descriptor());

  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] { (void)client.embed_batch({"t" + std::to_string(i)}); });
  }
  for (auto& t : threads) t.join();
  CHECK(server.max_in_flight() == 1);
}

TEST_CASE("endpoint from environment requires the base url") {
  unsetenv("EMBED_API_BASE_URL");
  CHECK_THROWS_AS((void)remote_endpoint_from_env("m"), ConfigError);
  setenv("EMBED_API_BASE_URL", "http://127.0.0.1:9", 1);
  setenv("EMBED_API_KEY", "k", 1);
  const auto ep = remote_endpoint_from_env("model-x");
  CHECK(ep.base_url == "http://127.0.0.1:9");
  CHECK(ep.api_key == "k");
  CHECK(ep.model_name == "model-x");
}
