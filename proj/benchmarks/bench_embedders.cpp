#include <benchmark/benchmark.h>

#include "embed2text/corpus.hpp"
#include "embed2text/embedder.hpp"
#include "embed2text/embedding_cache.hpp"
#include "embed2text/metrics.hpp"
#include "embed2text/rng.hpp"

using namespace embed2text;

namespace {

std::vector<std::string> make_texts(size_t count, size_t len) {
  Rng rng(7);
  std::vector<std::string> texts(count);
  for (auto& t : texts) {
    t.resize(len);
    for (auto& c : t) c = char('a' + rng.next_below(26));
  }
  return texts;
}

}  // namespace

static void BM_SyntheticEmbedBatch(benchmark::State& state) {
  auto embedder = make_synthetic_embedder(SyntheticGranularity::kBytes, 32, 1);
  const auto texts = make_texts(size_t(state.range(0)), 8);
  for (auto _ : state) {
    auto out = embedder->embed_batch(texts);
    benchmark::DoNotOptimize(out);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SyntheticEmbedBatch)->Range(8, 1024);

static void BM_CosineSimilarity(benchmark::State& state) {
  Rng rng(3);
  EmbeddingVector a{rng.gauss_vector(size_t(state.range(0))), "m"};
  EmbeddingVector b{rng.gauss_vector(size_t(state.range(0))), "m"};
  for (auto _ : state) {
    benchmark::DoNotOptimize(cosine_similarity(a, b));
  }
}
BENCHMARK(BM_CosineSimilarity)->Range(32, 2048);

static void BM_CacheLookup(benchmark::State& state) {
  auto embedder = make_synthetic_embedder(SyntheticGranularity::kBytes, 32, 1);
  const std::string path = "/tmp/embed2text-bench-cache.bin";
  std::remove(path.c_str());
  EmbeddingCache cache(path, embedder->descriptor());
  const auto texts = make_texts(1024, 8);
  (void)get_or_embed(texts, &cache, *embedder);
  size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cache.lookup(texts[i++ & 1023]));
  }
  std::remove(path.c_str());
}
BENCHMARK(BM_CacheLookup);

static void BM_SentenceBleu(benchmark::State& state) {
  Rng rng(5);
  const auto texts = make_texts(64, 40);
  size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bleu(texts[i & 63], texts[(i + 1) & 63]));
    ++i;
  }
}
BENCHMARK(BM_SentenceBleu);

BENCHMARK_MAIN();
