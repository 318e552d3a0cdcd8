#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "embed2text/corpus.hpp"
#include "embed2text/embedder.hpp"
#include "embed2text/embedding_cache.hpp"
#include "embed2text/tokenizer.hpp"

namespace embed2text {

// Token source for word-match metrics. kWords splits on whitespace (the
// default reported in every run); kModelTokens uses the model tokenizer.
enum class MetricTokenMode { kWords, kModelTokens };

// Sentence BLEU in [0, 100]: up-to-4-gram clipped precisions, add-one
// smoothing on the higher-order precisions, standard brevity penalty.
// Dataset-level BLEU is the mean of per-pair scores. Empty prediction -> 0.
double bleu(const std::string& pred, const std::string& ref,
            MetricTokenMode mode = MetricTokenMode::kWords, const Tokenizer* tokenizer = nullptr);

// F1 between predicted and reference token collections, in [0, 100].
// Multiset semantics (clipped counts) by default; set_semantics reproduces
// strict set F1. Both empty -> 100, exactly one empty -> 0.
double token_f1(const std::string& pred, const std::string& ref,
                MetricTokenMode mode = MetricTokenMode::kWords, bool set_semantics = false,
                const Tokenizer* tokenizer = nullptr);

// True iff both sides are identical after the tokenizer round-trip.
bool exact_match(const std::string& pred, const std::string& ref, const Tokenizer& tokenizer);

struct PerExampleRecord {
  std::string doc_id;
  std::string pred_text;  // exact bytes
  int true_tokens = 0;
  int pred_tokens = 0;
  double bleu = 0.0;
  double token_f1 = 0.0;
  bool exact = false;
  double cos = 0.0;
};

struct ReconstructionReport {
  std::string dataset_id;
  std::string method_id;
  long n_examples = 0;
  double mean_true_tokens = 0.0;
  double mean_pred_tokens = 0.0;  // non-special tokens
  double bleu = 0.0;
  double token_f1 = 0.0;
  double exact = 0.0;  // percentage
  double cos = 0.0;    // mean cos(phi(pred), e)
  std::string bleu_variant = "bleu4-add1-smoothed-bp";
  std::string f1_mode = "words-multiset";
  std::vector<PerExampleRecord> per_example;
};

struct NameRecoveryReport {
  double first = 0.0;  // percentages over all (first, last) pairs
  double last = 0.0;
  double full = 0.0;
  long names_total = 0;
  long refs_skipped = 0;  // references without name spans
  ReconstructionReport reconstruction;
};

// first/last recovered iff the exact name appears as a word anywhere in the
// prediction; full requires "first last" as adjacent words.
NameRecoveryReport name_recovery(const std::vector<std::string>& preds,
                                 const std::vector<InversionExample>& refs);

struct FrequencyBucketReport {
  // bucket 0 holds words unseen in training; bucket k>=1 holds counts with
  // floor(log10(count)) == k-1.
  struct Bucket {
    int index = 0;
    long correct = 0;
    long incorrect = 0;
  };
  std::vector<Bucket> buckets;
};

FrequencyBucketReport frequency_bucketed_accuracy(
    const std::vector<std::string>& preds, const std::vector<std::string>& refs,
    const std::unordered_map<std::string, long>& train_word_counts);

// Word counts of a training corpus, for frequency bucketing.
std::unordered_map<std::string, long> count_words(const std::vector<IngestedDoc>& docs);

using InvertFn = std::function<TokenSequence(const InversionExample&)>;

struct EvalOptions {
  std::string dataset_id = "dataset";
  std::string method_id = "method";
  MetricTokenMode token_mode = MetricTokenMode::kWords;
  bool set_f1 = false;
  bool keep_per_example = true;
  int workers = 1;
};

// Runs inversion per example, re-embeds predictions through the cache and
// aggregates all metrics. Aggregation is order-independent (per-example
// records keyed by input order; long-double accumulation).
ReconstructionReport evaluate_dataset(const InvertFn& invert,
                                      const std::vector<InversionExample>& dataset,
                                      const Tokenizer& tokenizer, Embedder& embedder,
                                      EmbeddingCache* cache, const EvalOptions& options);

// Recomputes the cosine column from cached prediction embeddings; returns the
// absolute difference from report.cos.
double audit_cosine_column(const ReconstructionReport& report,
                           const std::vector<InversionExample>& dataset, Embedder& embedder,
                           EmbeddingCache* cache);

// JSON + aligned-text rendering. The text table appends full-scale reference
// rows for context.
void write_report_json(const std::string& path, const ReconstructionReport& report);
std::string render_report_table(const ReconstructionReport& report,
                                bool include_reference_rows = true);

// Full-scale reference numbers used in report footers and templates.
struct ReferenceRow {
  const char* setting;
  const char* method;
  double tokens;
  double pred_tokens;
  double bleu;
  double tf1;
  double exact;
  double cos;
};
const std::vector<ReferenceRow>& full_scale_reference_rows();

struct NameRecoveryReference {
  double base_first, base_last, base_full;
  double full_first, full_last, full_full;
};
const NameRecoveryReference& full_scale_name_recovery_reference();

// Defense study aggregate reference: (lambda, ndcg@10, bleu).
struct DefenseReferencePoint {
  double lambda;
  double ndcg;
  double bleu;
};
const std::vector<DefenseReferencePoint>& full_scale_defense_reference();

// Mean hypothesis closeness of the full-scale base model's training outputs.
double full_scale_hypothesis_closeness_mean();

}  // namespace embed2text
