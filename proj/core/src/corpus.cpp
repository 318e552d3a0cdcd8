#include "embed2text/corpus.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "embed2text/common.hpp"
#include "embed2text/hash.hpp"
#include "embed2text/rng.hpp"

namespace embed2text {

namespace {

using nlohmann::json;

// Exact text goes to "text" when UTF-8-safe, otherwise to "text_b64".
void put_text_fields(json& j, const std::string& text) {
  if (is_valid_utf8(text)) {
    j["text"] = text;
  } else {
    j["text_b64"] = base64_encode(text);
    j["text"] = sanitize_for_display(text);
  }
}

std::string get_text_fields(const json& j) {
  if (j.contains("text_b64")) return base64_decode(j.at("text_b64").get<std::string>());
  return j.at("text").get<std::string>();
}

std::vector<std::pair<std::string, std::string>> parse_name_spans(const json& j) {
  std::vector<std::pair<std::string, std::string>> spans;
  if (!j.contains("name_spans")) return spans;
  for (const auto& pair : j.at("name_spans")) {
    spans.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
  }
  return spans;
}

}  // namespace

std::vector<IngestedDoc> ingest_corpus(const std::string& path, const std::string& tokenizer_id,
                                       int max_tokens, IngestStats* stats) {
  if (max_tokens <= 0) throw ConfigError("ingest_corpus: max_tokens must be > 0");
  const auto tokenizer = make_tokenizer(tokenizer_id);
  std::ifstream in(path);
  if (!in) throw ConfigError("ingest_corpus: cannot open '" + path + "'");

  IngestStats local;
  std::vector<IngestedDoc> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++local.lines_read;
    json j;
    try {
      j = json::parse(line);
      IngestedDoc doc;
      doc.doc_id = j.at("doc_id").get<std::string>();
      const std::string text = get_text_fields(j);
      if (text.empty()) {
        ++local.empty_dropped;
        continue;
      }
      doc.name_spans = parse_name_spans(j);
      TokenSequence full = tokenizer->make_sequence(text);
      doc.tokens = truncate_tokens(*tokenizer, full, max_tokens);
      if (static_cast<int>(full.ids.size()) > max_tokens) ++local.truncated;
      if (doc.tokens.ids.empty()) {
        ++local.empty_dropped;
        continue;
      }
      out.push_back(std::move(doc));
    } catch (const json::exception& e) {
      ++local.malformed_skipped;
      log_warn("ingest_corpus: skipping malformed line " + std::to_string(line_no) + " of '" +
               path + "': " + e.what());
      continue;
    }
  }
  if (local.empty_dropped > 0) {
    log_info("ingest_corpus: dropped " + std::to_string(local.empty_dropped) +
             " empty-after-truncation documents");
  }
  if (stats) *stats = local;
  return out;
}

void write_corpus_jsonl(const std::string& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_corpus_jsonl: cannot write '" + path + "'");
  for (const auto& doc : docs) {
    json j;
    j["doc_id"] = doc.doc_id;
    put_text_fields(j, doc.text);
    if (!doc.name_spans.empty()) {
      json spans = json::array();
      for (const auto& [first, last] : doc.name_spans) spans.push_back({first, last});
      j["name_spans"] = spans;
    }
    out << j.dump() << "\n";
  }
}

std::vector<InversionExample> build_inversion_dataset(const std::vector<IngestedDoc>& docs,
                                                      Embedder& embedder, EmbeddingCache* cache,
                                                      GetOrEmbedStats* stats) {
  std::vector<InversionExample> out;
  if (docs.empty()) {
    if (stats) *stats = GetOrEmbedStats{};
    return out;
  }
  std::vector<std::string> texts;
  texts.reserve(docs.size());
  for (const auto& doc : docs) texts.push_back(doc.tokens.text);
  std::vector<EmbeddingVector> vecs = get_or_embed(texts, cache, embedder, stats);

  out.reserve(docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    InversionExample ex;
    ex.doc_id = docs[i].doc_id;
    ex.tokens = docs[i].tokens;
    ex.target_embedding = std::move(vecs[i]);
    ex.name_spans = docs[i].name_spans;
    out.push_back(std::move(ex));
  }
  return out;
}

std::pair<std::vector<InversionExample>, std::vector<InversionExample>> split_train_eval(
    const std::vector<InversionExample>& dataset, double eval_fraction, uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("split_train_eval: eval_fraction must be in (0, 1)");
  }
  const size_t n = dataset.size();
  const size_t n_eval = static_cast<size_t>(double(n) * eval_fraction);
  if (n_eval == 0 || n_eval == n) {
    throw ConfigError("split_train_eval: dataset too small for eval_fraction " +
                      std::to_string(eval_fraction));
  }
  Rng rng(splitmix64(seed ^ 0x5417u));
  const std::vector<size_t> perm = rng.permutation(n);
  std::vector<bool> is_eval(n, false);
  for (size_t i = 0; i < n_eval; ++i) is_eval[perm[i]] = true;

  std::pair<std::vector<InversionExample>, std::vector<InversionExample>> out;
  for (size_t i = 0; i < n; ++i) {
    (is_eval[i] ? out.second : out.first).push_back(dataset[i]);
  }
  return out;
}

std::vector<HypothesisRecord> generate_hypothesis_dataset(
    const std::function<TokenSequence(const InversionExample&)>& hypothesize,
    const std::vector<InversionExample>& dataset, Embedder& embedder, EmbeddingCache* cache) {
  std::vector<HypothesisRecord> out;
  out.reserve(dataset.size());
  std::vector<std::string> hyp_texts;
  hyp_texts.reserve(dataset.size());
  for (const auto& ex : dataset) {
    HypothesisRecord rec;
    rec.example = ex;
    rec.hypothesis = hypothesize(ex);
    hyp_texts.push_back(rec.hypothesis.text);
    out.push_back(std::move(rec));
  }
  if (!out.empty()) {
    std::vector<EmbeddingVector> vecs = get_or_embed(hyp_texts, cache, embedder);
    for (size_t i = 0; i < out.size(); ++i) out[i].hypothesis_embedding = std::move(vecs[i]);
  }
  return out;
}

std::vector<HypothesisRecord> augment_hypothesis_records(
    const std::vector<HypothesisRecord>& records, const Tokenizer& tokenizer, Embedder& embedder,
    EmbeddingCache* cache, const HypothesisAugmentOptions& options) {
  if (options.copies_per_example < 1) {
    throw ConfigError("augment_hypothesis_records: copies_per_example must be >= 1");
  }
  Rng rng(splitmix64(options.seed ^ 0xa46u));

  std::vector<HypothesisRecord> out = records;
  std::vector<size_t> pending;
  std::vector<std::string> texts;
  const auto add = [&](const InversionExample& ex, TokenSequence hyp) {
    HypothesisRecord rec;
    rec.example = ex;
    rec.hypothesis = std::move(hyp);
    out.push_back(std::move(rec));
    pending.push_back(out.size() - 1);
    texts.push_back(out.back().hypothesis.text);
  };

  for (const auto& rec : records) {
    const auto& truth = rec.example.tokens;
    const int copies = options.copies_per_example;
    for (int k = 0; k < copies; ++k) {
      if (k == 0) {
        add(rec.example, truth);  // exact fixed point
      } else if (k == copies - 1 && copies >= 3) {
        // unrelated random hypothesis of random length
        std::vector<int> ids(static_cast<size_t>(1 + rng.next_below(uint64_t(
                                 std::max<size_t>(1, truth.ids.size())))));
        for (auto& id : ids) id = int(rng.next_below(uint64_t(tokenizer.base_vocab())));
        add(rec.example, tokenizer.from_ids(std::move(ids)));
      } else {
        // corruption of the truth, from one flip up to every position: the
        // search trajectory visits the whole closeness spectrum
        std::vector<int> ids = truth.ids;
        if (!ids.empty()) {
          const int flips = 1 + int(rng.next_below(ids.size()));
          for (int f = 0; f < flips; ++f) {
            ids[rng.next_below(ids.size())] =
                int(rng.next_below(uint64_t(tokenizer.base_vocab())));
          }
        }
        add(rec.example, tokenizer.from_ids(std::move(ids)));
      }
    }
  }
  if (!texts.empty()) {
    const auto embs = get_or_embed(texts, cache, embedder);
    for (size_t k = 0; k < pending.size(); ++k) {
      out[pending[k]].hypothesis_embedding = embs[k];
    }
  }
  return out;
}

std::vector<Document> generate_synthetic_documents(int count, int min_len, int max_len, int vocab,
                                                   uint64_t seed) {
  if (count <= 0 || min_len <= 0 || max_len < min_len || vocab < 2 || vocab > 256) {
    throw ConfigError("generate_synthetic_documents: bad parameters");
  }
  Rng rng(splitmix64(seed ^ 0xc0bb1e5));
  std::vector<Document> docs;
  docs.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int len = min_len + int(rng.next_below(uint64_t(max_len - min_len + 1)));
    std::string text;
    text.reserve(static_cast<size_t>(len));
    for (int k = 0; k < len; ++k) {
      text.push_back(char(uint8_t(rng.next_below(uint64_t(vocab)))));
    }
    docs.push_back(Document{"doc" + std::to_string(i), std::move(text), {}});
  }
  return docs;
}

void write_dataset_manifest(const std::string& path, const std::vector<InversionExample>& dataset,
                            const std::string& tokenizer_id) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_dataset_manifest: cannot write '" + path + "'");
  for (const auto& ex : dataset) {
    json j;
    j["doc_id"] = ex.doc_id;
    j["tokenizer"] = tokenizer_id;
    j["tokens"] = ex.tokens.ids;
    j["model_id"] = ex.target_embedding.model_id;
    j["sha256"] = sha256_hex(ex.tokens.text);
    j["text"] = sanitize_for_display(ex.tokens.text);
    if (!ex.name_spans.empty()) {
      json spans = json::array();
      for (const auto& [first, last] : ex.name_spans) spans.push_back({first, last});
      j["name_spans"] = spans;
    }
    out << j.dump() << "\n";
  }
}

std::vector<InversionExample> load_dataset_manifest(const std::string& path, Embedder& embedder,
                                                    EmbeddingCache* cache) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_dataset_manifest: cannot open '" + path + "'");

  std::vector<InversionExample> out;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::string line;
  long line_no = 0;
  std::vector<std::string> texts;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const std::string tok_id = j.at("tokenizer").get<std::string>();
      if (!tokenizer || tokenizer->id() != tok_id) tokenizer = make_tokenizer(tok_id);
      InversionExample ex;
      ex.doc_id = j.at("doc_id").get<std::string>();
      ex.tokens = tokenizer->from_ids(j.at("tokens").get<std::vector<int>>());
      ex.name_spans = parse_name_spans(j);
      const std::string model_id = j.at("model_id").get<std::string>();
      if (model_id != embedder.descriptor().model_id) {
        throw ConfigError("load_dataset_manifest: manifest embedder '" + model_id +
                          "' does not match provided embedder '" +
                          embedder.descriptor().model_id + "'");
      }
      texts.push_back(ex.tokens.text);
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw ConfigError("load_dataset_manifest: bad line " + std::to_string(line_no) + " in '" +
                        path + "': " + e.what());
    }
  }
  if (!out.empty()) {
    std::vector<EmbeddingVector> vecs = get_or_embed(texts, cache, embedder);
    for (size_t i = 0; i < out.size(); ++i) out[i].target_embedding = std::move(vecs[i]);
  }
  return out;
}

}  // namespace embed2text
