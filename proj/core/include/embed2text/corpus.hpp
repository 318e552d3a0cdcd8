#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "embed2text/embedder.hpp"
#include "embed2text/embedding.hpp"
#include "embed2text/embedding_cache.hpp"
#include "embed2text/tokenizer.hpp"

namespace embed2text {

// One corpus entry. name_spans carries ground-truth (first, last) pairs for
// the name-recovery metric; it is optional and otherwise unused.
struct Document {
  std::string doc_id;
  std::string text;
  std::vector<std::pair<std::string, std::string>> name_spans;
};

// A document tokenized and truncated to the token budget. The detokenized
// truncated string is the canonical ground truth for all metrics.
struct IngestedDoc {
  std::string doc_id;
  TokenSequence tokens;
  std::vector<std::pair<std::string, std::string>> name_spans;
};

struct IngestStats {
  long lines_read = 0;
  long malformed_skipped = 0;
  long empty_dropped = 0;
  long truncated = 0;
};

// A training/evaluation pair: truncated text plus phi(truncated text).
struct InversionExample {
  std::string doc_id;
  TokenSequence tokens;
  EmbeddingVector target_embedding;
  std::vector<std::pair<std::string, std::string>> name_spans;
};

// A correction-training record: an example, a model-generated hypothesis and
// the hypothesis's re-embedding under the dataset's embedder.
struct HypothesisRecord {
  InversionExample example;
  TokenSequence hypothesis;
  EmbeddingVector hypothesis_embedding;
};

// Reads a JSONL corpus ({"doc_id": ..., "text": ... | "text_b64": ...,
// "name_spans": [[first, last], ...]?}), tokenizes and truncates each
// document. Malformed lines are skipped with the line number logged;
// documents empty after truncation are dropped and counted.
std::vector<IngestedDoc> ingest_corpus(const std::string& path, const std::string& tokenizer_id,
                                       int max_tokens, IngestStats* stats = nullptr);

// Writes documents as corpus JSONL. Non-UTF-8 texts are stored exactly in
// "text_b64" with a sanitized "text" alongside for display.
void write_corpus_jsonl(const std::string& path, const std::vector<Document>& docs);

// Embeds every truncated document through the cache.
std::vector<InversionExample> build_inversion_dataset(const std::vector<IngestedDoc>& docs,
                                                      Embedder& embedder, EmbeddingCache* cache,
                                                      GetOrEmbedStats* stats = nullptr);

// Seed-deterministic disjoint split; throws ConfigError when either side
// would be empty.
std::pair<std::vector<InversionExample>, std::vector<InversionExample>> split_train_eval(
    const std::vector<InversionExample>& dataset, double eval_fraction, uint64_t seed);

// Produces one HypothesisRecord per example. `hypothesize` is the base
// model's generator (greedy decoding in the training pipeline); hypotheses
// are re-embedded through the cache.
std::vector<HypothesisRecord> generate_hypothesis_dataset(
    const std::function<TokenSequence(const InversionExample&)>& hypothesize,
    const std::vector<InversionExample>& dataset, Embedder& embedder,
    EmbeddingCache* cache = nullptr);

// Hypothesis diversification for corrector training. Greedy hypotheses give
// the corrector exactly one (embedding, hypothesis) pair per example, which a
// desk-scale model can memorize jointly instead of keying on the embedding;
// the corrector then falls apart on hypotheses it has never seen. Each
// example gains `copies_per_example` extra records spanning the closeness
// range the search visits at inference: an exact copy of the ground truth,
// token-flip corruptions of it, and a fully random sequence. Every perturbed
// hypothesis is re-embedded through phi so records stay consistent.
struct HypothesisAugmentOptions {
  int copies_per_example = 4;
  uint64_t seed = 0;
};

std::vector<HypothesisRecord> augment_hypothesis_records(
    const std::vector<HypothesisRecord>& records, const Tokenizer& tokenizer, Embedder& embedder,
    EmbeddingCache* cache, const HypothesisAugmentOptions& options);

// Random byte-token documents for desk-scale benchmarks: lengths uniform in
// [min_len, max_len], tokens uniform in [0, vocab).
std::vector<Document> generate_synthetic_documents(int count, int min_len, int max_len, int vocab,
                                                   uint64_t seed);

// Dataset manifest: JSONL lines carrying doc_id, tokenizer, token ids and the
// (sha256, model_id) reference into the embedding cache.
void write_dataset_manifest(const std::string& path, const std::vector<InversionExample>& dataset,
                            const std::string& tokenizer_id);

// Loads a manifest; target embeddings are resolved through the cache and
// re-embedded on misses.
std::vector<InversionExample> load_dataset_manifest(const std::string& path, Embedder& embedder,
                                                    EmbeddingCache* cache);

}  // namespace embed2text
