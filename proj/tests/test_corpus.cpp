#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "embed2text/common.hpp"
#include "embed2text/corpus.hpp"
#include "embed2text/embedding_cache.hpp"
#include "support/test_util.hpp"

using namespace embed2text;

namespace {

std::shared_ptr<Embedder> test_embedder() {
  return make_synthetic_embedder(SyntheticGranularity::kBytes, 16, 9);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace

TEST_CASE("ingest_corpus truncates to the token budget") {
  testutil::TempDir tmp("corpus");
  const std::string long_text(100, 'x');
  write_lines(tmp.file("c.jsonl"),
              {R"({"doc_id":"a","text":")" + long_text + R"("})",
               R"({"doc_id":"b","text":"short"})"});
  IngestStats stats;
  const auto docs = ingest_corpus(tmp.file("c.jsonl"), "bytes", 32, &stats);
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].tokens.ids.size() == 32);
  CHECK(docs[0].tokens.text == std::string(32, 'x'));
  CHECK(docs[1].tokens.text == "short");  // shorter than budget: unchanged
  CHECK(stats.truncated == 1);
}

TEST_CASE("ingest_corpus skips malformed lines and drops empty docs") {
  testutil::TempDir tmp("corpus");
  write_lines(tmp.file("c.jsonl"), {R"({"doc_id":"a","text":"ok"})", "{not json", R"({"text":"no id"})",
                                    R"({"doc_id":"e","text":""})"});
  IngestStats stats;
  const auto docs = ingest_corpus(tmp.file("c.jsonl"), "bytes", 8, &stats);
  CHECK(docs.size() == 1);
  CHECK(stats.malformed_skipped == 2);
  CHECK(stats.empty_dropped == 1);
  CHECK_THROWS_AS((void)ingest_corpus(tmp.file("c.jsonl"), "no-such-tokenizer", 8, nullptr),
                  ConfigError);
}

TEST_CASE("corpus jsonl round-trips non-UTF-8 texts through text_b64") {
  testutil::TempDir tmp("corpus");
  std::string raw;
  raw.push_back(char(0x80));
  raw.push_back(char(0x00));
  raw.push_back('A');
  write_corpus_jsonl(tmp.file("c.jsonl"), {Document{"bin", raw, {}}, Document{"txt", "plain", {}}});
  const auto docs = ingest_corpus(tmp.file("c.jsonl"), "bytes", 16, nullptr);
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].tokens.text == raw);
  CHECK(docs[1].tokens.text == "plain");
}

TEST_CASE("truncation is idempotent") {
  auto tok = make_tokenizer("bytes");
  const TokenSequence seq = tok->make_sequence("0123456789");
  const TokenSequence once = truncate_tokens(*tok, seq, 4);
  const TokenSequence twice = truncate_tokens(*tok, once, 4);
  CHECK(once.ids == twice.ids);
  CHECK(once.text == "0123");
}

TEST_CASE("build_inversion_dataset embeds truncated text through the cache") {
  testutil::TempDir tmp("corpus");
  auto emb = test_embedder();
  EmbeddingCache cache(tmp.file("cache.bin"), emb->descriptor());

  std::vector<Document> docs;
  for (int i = 0; i < 10; ++i) docs.push_back({"d" + std::to_string(i), "text " + std::to_string(i), {}});
  docs.push_back({"dup0", "text 0", {}});  // duplicate text
  write_corpus_jsonl(tmp.file("c.jsonl"), docs);
  const auto ingested = ingest_corpus(tmp.file("c.jsonl"), "bytes", 32, nullptr);

  GetOrEmbedStats stats;
  const auto dataset = build_inversion_dataset(ingested, *emb, &cache, &stats);
  REQUIRE(dataset.size() == 11);
  for (const auto& ex : dataset) {
    CHECK(ex.target_embedding.dim() == 16);
    // every example satisfies cos(phi(detok(tokens)), target) == 1
    const auto re = embed_batch({ex.tokens.text}, *emb)[0];
    CHECK(cosine_similarity(re, ex.target_embedding) == doctest::Approx(1.0).epsilon(1e-6));
  }
  // duplicate texts share identical target embeddings
  CHECK(dataset[0].target_embedding.values == dataset[10].target_embedding.values);

  // warm rerun embeds nothing
  const auto again = build_inversion_dataset(ingested, *emb, &cache, &stats);
  CHECK(stats.embedded == 0);
  CHECK(stats.hits == 11);
}

TEST_CASE("split_train_eval is deterministic, disjoint and complete") {
  testutil::TempDir tmp("corpus");
  auto emb = test_embedder();
  const auto docs = generate_synthetic_documents(100, 3, 8, 256, 5);
  write_corpus_jsonl(tmp.file("c.jsonl"), docs);
  const auto ingested = ingest_corpus(tmp.file("c.jsonl"), "bytes", 8, nullptr);
  const auto dataset = build_inversion_dataset(ingested, *emb, nullptr, nullptr);

  const auto [train, eval] = split_train_eval(dataset, 0.1, 3);
  CHECK(train.size() == 90);
  CHECK(eval.size() == 10);

  const auto [train2, eval2] = split_train_eval(dataset, 0.1, 3);
  for (size_t i = 0; i < eval.size(); ++i) CHECK(eval[i].doc_id == eval2[i].doc_id);

  std::set<std::string> ids;
  for (const auto& ex : train) ids.insert(ex.doc_id);
  for (const auto& ex : eval) CHECK(ids.count(ex.doc_id) == 0);
  for (const auto& ex : eval) ids.insert(ex.doc_id);
  CHECK(ids.size() == dataset.size());  // union equals dataset

  CHECK_THROWS_AS((void)split_train_eval(dataset, 0.0, 1), ConfigError);
  std::vector<InversionExample> tiny(dataset.begin(), dataset.begin() + 2);
  CHECK_THROWS_AS((void)split_train_eval(tiny, 0.1, 1), ConfigError);
}

TEST_CASE("generate_hypothesis_dataset re-embeds hypotheses and keeps size") {
  auto emb = test_embedder();
  const auto docs = generate_synthetic_documents(20, 3, 8, 256, 6);
  std::vector<IngestedDoc> ingested;
  auto tok = make_tokenizer("bytes");
  for (const auto& d : docs) ingested.push_back({d.doc_id, tok->make_sequence(d.text), {}});
  const auto dataset = build_inversion_dataset(ingested, *emb, nullptr, nullptr);

  SUBCASE("identity hypothesizer gives cosine 1") {
    const auto records = generate_hypothesis_dataset(
        [](const InversionExample& ex) { return ex.tokens; }, dataset, *emb, nullptr);
    REQUIRE(records.size() == dataset.size());
    for (const auto& rec : records) {
      CHECK(cosine_similarity(rec.hypothesis_embedding, rec.example.target_embedding) ==
            doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  SUBCASE("weak hypothesizer still yields valid records") {
    const auto records = generate_hypothesis_dataset(
        [&](const InversionExample&) { return tok->make_sequence("zz"); }, dataset, *emb, nullptr);
    REQUIRE(records.size() == dataset.size());
    for (const auto& rec : records) {
      CHECK(rec.hypothesis_embedding.dim() == 16);
    }
  }
}

TEST_CASE("dataset manifest round-trips through the cache") {
  testutil::TempDir tmp("corpus");
  auto emb = test_embedder();
  EmbeddingCache cache(tmp.file("cache.bin"), emb->descriptor());

  const auto docs = generate_synthetic_documents(25, 2, 8, 256, 12);
  std::vector<IngestedDoc> ingested;
  auto tok = make_tokenizer("bytes");
  for (const auto& d : docs) ingested.push_back({d.doc_id, tok->make_sequence(d.text), {}});
  const auto dataset = build_inversion_dataset(ingested, *emb, &cache, nullptr);

  write_dataset_manifest(tmp.file("data.jsonl"), dataset, "bytes");
  const auto loaded = load_dataset_manifest(tmp.file("data.jsonl"), *emb, &cache);
  REQUIRE(loaded.size() == dataset.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].doc_id == dataset[i].doc_id);
    CHECK(loaded[i].tokens.ids == dataset[i].tokens.ids);
    CHECK(loaded[i].target_embedding.values == dataset[i].target_embedding.values);
  }
}
