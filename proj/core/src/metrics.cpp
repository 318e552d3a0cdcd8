#include "embed2text/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "embed2text/common.hpp"
#include "embed2text/hash.hpp"

namespace embed2text {

namespace {

using nlohmann::json;

std::vector<std::string> metric_tokens(const std::string& text, MetricTokenMode mode,
                                       const Tokenizer* tokenizer) {
  if (mode == MetricTokenMode::kWords) return split_words(text);
  if (tokenizer == nullptr) {
    throw ContractError("metric: model-token mode requires a tokenizer");
  }
  std::vector<std::string> out;
  for (int id : tokenizer->encode(text)) out.push_back(std::to_string(id));
  return out;
}

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts ngram_counts(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  if (int(tokens.size()) < n) return counts;
  for (size_t i = 0; i + size_t(n) <= tokens.size(); ++i) {
    counts[std::vector<std::string>(tokens.begin() + long(i), tokens.begin() + long(i) + n)]++;
  }
  return counts;
}

}  // namespace

double bleu(const std::string& pred, const std::string& ref, MetricTokenMode mode,
            const Tokenizer* tokenizer) {
  const std::vector<std::string> p = metric_tokens(pred, mode, tokenizer);
  const std::vector<std::string> r = metric_tokens(ref, mode, tokenizer);
  if (p.empty()) return 0.0;
  if (r.empty()) return 0.0;

  double log_prec_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const long total = std::max<long>(0, long(p.size()) - n + 1);
    if (total == 0) continue;  // no n-grams of this order: neutral factor
    const NgramCounts pc = ngram_counts(p, n);
    const NgramCounts rc = ngram_counts(r, n);
    long matched = 0;
    for (const auto& [gram, count] : pc) {
      auto it = rc.find(gram);
      if (it != rc.end()) matched += std::min(count, it->second);
    }
    double precision;
    if (n == 1) {
      if (matched == 0) return 0.0;
      precision = double(matched) / double(total);
    } else {
      precision = double(matched + 1) / double(total + 1);  // add-one smoothing
    }
    log_prec_sum += 0.25 * std::log(precision);
  }
  const double bp =
      p.size() >= r.size() ? 1.0 : std::exp(1.0 - double(r.size()) / double(p.size()));
  return 100.0 * bp * std::exp(log_prec_sum);
}

double token_f1(const std::string& pred, const std::string& ref, MetricTokenMode mode,
                bool set_semantics, const Tokenizer* tokenizer) {
  std::vector<std::string> p = metric_tokens(pred, mode, tokenizer);
  std::vector<std::string> r = metric_tokens(ref, mode, tokenizer);
  if (p.empty() && r.empty()) return 100.0;
  if (p.empty() || r.empty()) return 0.0;

  if (set_semantics) {
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }
  std::unordered_map<std::string, long> pc, rc;
  for (const auto& t : p) ++pc[t];
  for (const auto& t : r) ++rc[t];
  long overlap = 0;
  for (const auto& [tok, count] : pc) {
    auto it = rc.find(tok);
    if (it != rc.end()) overlap += std::min(count, it->second);
  }
  if (overlap == 0) return 0.0;
  // 2PR/(P+R) simplified to a form that is bitwise symmetric in (pred, ref)
  return 100.0 * 2.0 * double(overlap) / double(p.size() + r.size());
}

bool exact_match(const std::string& pred, const std::string& ref, const Tokenizer& tokenizer) {
  return tokenizer.canonicalize(pred) == tokenizer.canonicalize(ref);
}

NameRecoveryReport name_recovery(const std::vector<std::string>& preds,
                                 const std::vector<InversionExample>& refs) {
  if (preds.size() != refs.size()) {
    throw ContractError("name_recovery: preds and refs must align");
  }
  NameRecoveryReport report;
  long first_hit = 0, last_hit = 0, full_hit = 0;
  for (size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].name_spans.empty()) {
      ++report.refs_skipped;
      continue;
    }
    const std::vector<std::string> words = split_words(preds[i]);
    for (const auto& [first, last] : refs[i].name_spans) {
      ++report.names_total;
      const bool has_first = std::find(words.begin(), words.end(), first) != words.end();
      const bool has_last = std::find(words.begin(), words.end(), last) != words.end();
      bool has_full = false;
      for (size_t w = 0; w + 1 < words.size(); ++w) {
        if (words[w] == first && words[w + 1] == last) {
          has_full = true;
          break;
        }
      }
      if (has_first) ++first_hit;
      if (has_last) ++last_hit;
      if (has_full) ++full_hit;
    }
  }
  if (report.names_total > 0) {
    report.first = 100.0 * double(first_hit) / double(report.names_total);
    report.last = 100.0 * double(last_hit) / double(report.names_total);
    report.full = 100.0 * double(full_hit) / double(report.names_total);
  }
  return report;
}

namespace {
int frequency_bucket(long count) {
  if (count <= 0) return 0;
  return 1 + int(std::floor(std::log10(double(count))));
}
}  // namespace

FrequencyBucketReport frequency_bucketed_accuracy(
    const std::vector<std::string>& preds, const std::vector<std::string>& refs,
    const std::unordered_map<std::string, long>& train_word_counts) {
  if (preds.size() != refs.size()) {
    throw ContractError("frequency_bucketed_accuracy: preds and refs must align");
  }
  std::map<int, FrequencyBucketReport::Bucket> acc;
  for (size_t i = 0; i < refs.size(); ++i) {
    const std::vector<std::string> pred_words_v = split_words(preds[i]);
    const std::unordered_map<std::string, long> pred_words = [&] {
      std::unordered_map<std::string, long> m;
      for (const auto& w : pred_words_v) ++m[w];
      return m;
    }();
    for (const auto& w : split_words(refs[i])) {
      auto it = train_word_counts.find(w);
      const int bucket = frequency_bucket(it == train_word_counts.end() ? 0 : it->second);
      auto& slot = acc[bucket];
      slot.index = bucket;
      if (pred_words.count(w)) {
        ++slot.correct;
      } else {
        ++slot.incorrect;
      }
    }
  }
  FrequencyBucketReport report;
  for (auto& [idx, bucket] : acc) report.buckets.push_back(bucket);
  return report;
}

std::unordered_map<std::string, long> count_words(const std::vector<IngestedDoc>& docs) {
  std::unordered_map<std::string, long> counts;
  for (const auto& doc : docs) {
    for (const auto& w : split_words(doc.tokens.text)) ++counts[w];
  }
  return counts;
}

ReconstructionReport evaluate_dataset(const InvertFn& invert,
                                      const std::vector<InversionExample>& dataset,
                                      const Tokenizer& tokenizer, Embedder& embedder,
                                      EmbeddingCache* cache, const EvalOptions& options) {
  ReconstructionReport report;
  report.dataset_id = options.dataset_id;
  report.method_id = options.method_id;
  report.n_examples = long(dataset.size());
  report.f1_mode = std::string(options.token_mode == MetricTokenMode::kWords ? "words" : "model") +
                   (options.set_f1 ? "-set" : "-multiset");
  if (dataset.empty()) return report;

  // Inversion, parallel across examples; results land in input order.
  std::vector<TokenSequence> preds(dataset.size());
  const int workers = std::max(1, std::min<int>(options.workers, int(dataset.size())));
  if (workers == 1) {
    for (size_t i = 0; i < dataset.size(); ++i) preds[i] = invert(dataset[i]);
  } else {
    std::vector<std::thread> threads;
    std::atomic<size_t> next{0};
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        while (true) {
          const size_t i = next.fetch_add(1);
          if (i >= dataset.size()) break;
          preds[i] = invert(dataset[i]);
        }
      });
    }
    for (auto& t : threads) t.join();
  }

  // Re-embed predictions for the cosine column.
  std::vector<std::string> pred_texts;
  pred_texts.reserve(preds.size());
  for (const auto& p : preds) pred_texts.push_back(p.text);
  const std::vector<EmbeddingVector> pred_embs = get_or_embed(pred_texts, cache, embedder);

  long double sum_bleu = 0, sum_f1 = 0, sum_cos = 0, sum_true = 0, sum_pred = 0;
  long exact_count = 0;
  report.per_example.reserve(options.keep_per_example ? dataset.size() : 0);
  for (size_t i = 0; i < dataset.size(); ++i) {
    const auto& ex = dataset[i];
    const std::string& ref_text = ex.tokens.text;
    PerExampleRecord rec;
    rec.doc_id = ex.doc_id;
    rec.pred_text = preds[i].text;
    rec.true_tokens = int(ex.tokens.ids.size());
    rec.pred_tokens = int(preds[i].ids.size());
    rec.bleu = bleu(rec.pred_text, ref_text, options.token_mode, &tokenizer);
    rec.token_f1 = token_f1(rec.pred_text, ref_text, options.token_mode, options.set_f1,
                            &tokenizer);
    rec.exact = exact_match(rec.pred_text, ref_text, tokenizer);
    rec.cos = cosine_similarity(pred_embs[i], ex.target_embedding);

    sum_bleu += rec.bleu;
    sum_f1 += rec.token_f1;
    sum_cos += rec.cos;
    sum_true += rec.true_tokens;
    sum_pred += rec.pred_tokens;
    if (rec.exact) ++exact_count;
    if (options.keep_per_example) report.per_example.push_back(std::move(rec));
  }
  const long double n = (long double)(dataset.size());
  report.bleu = double(sum_bleu / n);
  report.token_f1 = double(sum_f1 / n);
  report.cos = double(sum_cos / n);
  report.mean_true_tokens = double(sum_true / n);
  report.mean_pred_tokens = double(sum_pred / n);
  report.exact = 100.0 * double(exact_count) / double(dataset.size());
  return report;
}

double audit_cosine_column(const ReconstructionReport& report,
                           const std::vector<InversionExample>& dataset, Embedder& embedder,
                           EmbeddingCache* cache) {
  if (report.per_example.size() != dataset.size()) {
    throw ContractError("audit_cosine_column: report lacks per-example records");
  }
  std::vector<std::string> pred_texts;
  pred_texts.reserve(dataset.size());
  for (const auto& rec : report.per_example) pred_texts.push_back(rec.pred_text);
  const auto embs = get_or_embed(pred_texts, cache, embedder);
  long double sum_cos = 0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    sum_cos += cosine_similarity(embs[i], dataset[i].target_embedding);
  }
  return std::abs(double(sum_cos / (long double)(dataset.size())) - report.cos);
}

void write_report_json(const std::string& path, const ReconstructionReport& report) {
  json j;
  j["dataset"] = report.dataset_id;
  j["method"] = report.method_id;
  j["n_examples"] = report.n_examples;
  j["mean_true_tokens"] = report.mean_true_tokens;
  j["mean_pred_tokens"] = report.mean_pred_tokens;
  j["bleu"] = report.bleu;
  j["token_f1"] = report.token_f1;
  j["exact"] = report.exact;
  j["cos"] = report.cos;
  j["bleu_variant"] = report.bleu_variant;
  j["f1_mode"] = report.f1_mode;
  if (!report.per_example.empty()) {
    json arr = json::array();
    for (const auto& rec : report.per_example) {
      arr.push_back(json{{"doc_id", rec.doc_id},
                         {"pred", sanitize_for_display(rec.pred_text)},
                         {"true_tokens", rec.true_tokens},
                         {"pred_tokens", rec.pred_tokens},
                         {"bleu", rec.bleu},
                         {"token_f1", rec.token_f1},
                         {"exact", rec.exact},
                         {"cos", rec.cos}});
    }
    j["per_example"] = std::move(arr);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_report_json: cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

namespace {
std::string fmt(double v, int prec = 1) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}
}  // namespace

std::string render_report_table(const ReconstructionReport& report, bool include_reference_rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %-24s %7s %7s %7s %7s %7s %7s\n", "dataset", "method",
                "tokens", "pred", "bleu", "tf1", "exact", "cos");
  out += line;
  out += std::string(96, '-') + "\n";
  std::snprintf(line, sizeof(line), "%-28s %-24s %7s %7s %7s %7s %7s %7s\n",
                report.dataset_id.c_str(), report.method_id.c_str(),
                fmt(report.mean_true_tokens).c_str(), fmt(report.mean_pred_tokens).c_str(),
                fmt(report.bleu).c_str(), fmt(report.token_f1).c_str(), fmt(report.exact).c_str(),
                fmt(report.cos, 2).c_str());
  out += line;
  if (include_reference_rows) {
    out += "\nfull-scale reference (235M-parameter models; not desk-reproducible):\n";
    for (const auto& row : full_scale_reference_rows()) {
      std::snprintf(line, sizeof(line), "%-28s %-24s %7s %7s %7s %7s %7s %7s\n", row.setting,
                    row.method, fmt(row.tokens).c_str(), fmt(row.pred_tokens).c_str(),
                    fmt(row.bleu).c_str(), fmt(row.tf1).c_str(), fmt(row.exact).c_str(),
                    fmt(row.cos, 2).c_str());
      out += line;
    }
  }
  return out;
}

const std::vector<ReferenceRow>& full_scale_reference_rows() {
  static const std::vector<ReferenceRow> rows = {
      {"gtr/nq-32", "base [0 steps]", 32, 32, 31.9, 67, 0.0, 0.91},
      {"gtr/nq-32", "base + beam", 32, 32, 34.5, 67, 1.0, 0.92},
      {"gtr/nq-32", "base + nucleus", 32, 32, 25.3, 60, 0.0, 0.88},
      {"gtr/nq-32", "corrective [1 step]", 32, 32, 50.7, 80, 0.0, 0.96},
      {"gtr/nq-32", "corrective [20 steps]", 32, 32, 83.9, 96, 40.2, 0.99},
      {"gtr/nq-32", "corrective [50 steps]", 32, 32, 85.4, 97, 40.6, 0.99},
      {"gtr/nq-32", "[50 steps + sbeam]", 32, 32, 97.3, 99, 92.0, 0.99},
      {"openai/msmarco-32", "base [0 steps]", 31.8, 31.8, 26.2, 61, 0.0, 0.94},
      {"openai/msmarco-32", "[50 steps + sbeam]", 31.8, 31.8, 83.4, 96, 60.9, 0.99},
      {"openai/msmarco-128", "base [0 steps]", 80.9, 84.2, 17.0, 54, 0.6, 0.95},
      {"openai/msmarco-128", "[50 steps + sbeam]", 80.9, 80.6, 55.0, 84, 8.0, 0.99},
  };
  return rows;
}

const NameRecoveryReference& full_scale_name_recovery_reference() {
  static const NameRecoveryReference ref = {40.0, 27.8, 10.8, 94.2, 95.3, 89.2};
  return ref;
}

const std::vector<DefenseReferencePoint>& full_scale_defense_reference() {
  static const std::vector<DefenseReferencePoint> points = {
      {0.0, 0.302, 80.372},  {0.001, 0.302, 72.347}, {0.01, 0.296, 10.334},
      {0.1, 0.002, 0.148},   {1.0, 0.001, 0.080},
  };
  return points;
}

double full_scale_hypothesis_closeness_mean() { return 0.924; }

}  // namespace embed2text
