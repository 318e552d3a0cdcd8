#include "embed2text/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "embed2text/common.hpp"

namespace embed2text {

void RetrievalTask::validate() const {
  if (queries.empty()) throw ConfigError("retrieval task: need >= 1 query");
  std::unordered_set<std::string> ids;
  for (const auto& doc : corpus) ids.insert(doc.doc_id);
  for (const auto& q : queries) {
    for (const auto& [doc_id, gain] : q.relevant) {
      if (!ids.count(doc_id)) {
        throw ConfigError("retrieval task: query '" + q.query_id + "' references missing doc '" +
                          doc_id + "'");
      }
      if (gain < 0) throw ConfigError("retrieval task: negative gain");
    }
  }
}

double ndcg_at_10(const std::vector<std::string>& ranked_doc_ids,
                  const std::vector<std::pair<std::string, int>>& relevance) {
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : ranked_doc_ids) {
      if (!seen.insert(id).second) throw ContractError("ndcg_at_10: duplicate id in ranking");
    }
  }
  if (relevance.empty()) {
    log_warn("ndcg_at_10: empty relevance map; score is 0 by definition");
    return 0.0;
  }
  std::unordered_map<std::string, int> gain;
  for (const auto& [id, g] : relevance) gain[id] = g;

  const size_t cutoff = 10;
  double dcg = 0.0;
  for (size_t i = 0; i < ranked_doc_ids.size() && i < cutoff; ++i) {
    auto it = gain.find(ranked_doc_ids[i]);
    if (it == gain.end()) continue;
    dcg += (std::pow(2.0, double(it->second)) - 1.0) / std::log2(double(i) + 2.0);
  }
  std::vector<int> gains;
  gains.reserve(relevance.size());
  for (const auto& [id, g] : relevance) gains.push_back(g);
  std::sort(gains.begin(), gains.end(), std::greater<int>());
  double idcg = 0.0;
  for (size_t i = 0; i < gains.size() && i < cutoff; ++i) {
    idcg += (std::pow(2.0, double(gains[i])) - 1.0) / std::log2(double(i) + 2.0);
  }
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

RetrievalResult run_retrieval(Embedder& embedder, const RetrievalTask& task,
                              EmbeddingCache* cache) {
  task.validate();
  std::vector<std::string> corpus_texts;
  corpus_texts.reserve(task.corpus.size());
  for (const auto& doc : task.corpus) corpus_texts.push_back(doc.text);
  const auto corpus_embs = get_or_embed(corpus_texts, cache, embedder);

  std::vector<std::string> query_texts;
  query_texts.reserve(task.queries.size());
  for (const auto& q : task.queries) query_texts.push_back(q.text);
  const auto query_embs = get_or_embed(query_texts, cache, embedder);

  RetrievalResult result;
  result.per_query.reserve(task.queries.size());
  long double sum = 0.0;
  for (size_t qi = 0; qi < task.queries.size(); ++qi) {
    // rank by cosine descending; ties broken by ascending doc id
    std::vector<size_t> order(task.corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> score(task.corpus.size());
    for (size_t i = 0; i < task.corpus.size(); ++i) {
      score[i] = cosine_similarity(query_embs[qi], corpus_embs[i]);
    }
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (score[a] != score[b]) return score[a] > score[b];
      return task.corpus[a].doc_id < task.corpus[b].doc_id;
    });
    std::vector<std::string> ranked;
    ranked.reserve(std::min<size_t>(order.size(), 10));
    for (size_t i = 0; i < order.size() && i < 10; ++i) {
      ranked.push_back(task.corpus[order[i]].doc_id);
    }
    if (task.queries[qi].relevant.empty()) ++result.empty_relevance_queries;
    const double v = ndcg_at_10(ranked, task.queries[qi].relevant);
    result.per_query.push_back(v);
    sum += v;
  }
  result.mean_ndcg = double(sum / (long double)(task.queries.size()));
  return result;
}

RetrievalTask make_self_retrieval_task(const std::vector<InversionExample>& examples) {
  RetrievalTask task;
  task.corpus.reserve(examples.size());
  task.queries.reserve(examples.size());
  for (const auto& ex : examples) {
    task.corpus.push_back(Document{ex.doc_id, ex.tokens.text, {}});
    RetrievalQuery q;
    q.query_id = "q-" + ex.doc_id;
    q.text = ex.tokens.text;
    q.relevant = {{ex.doc_id, 1}};
    task.queries.push_back(std::move(q));
  }
  return task;
}

std::vector<TradeoffPoint> noise_sweep(std::shared_ptr<Embedder> base_embedder,
                                       const std::vector<InversionExample>& eval_dataset,
                                       const RetrievalTask& retrieval_task,
                                       const AttackFactory& make_attack,
                                       const Tokenizer& tokenizer, EmbeddingCache* cache,
                                       const NoiseSweepOptions& options) {
  if (eval_dataset.empty()) throw ConfigError("noise_sweep: empty evaluation dataset");
  const std::vector<double>& lambdas =
      options.lambdas.empty() ? default_noise_grid() : options.lambdas;

  std::vector<TradeoffPoint> points;
  points.reserve(lambdas.size());
  for (size_t li = 0; li < lambdas.size(); ++li) {
    const double lambda = lambdas[li];
    NoiseConfig noise{lambda, options.noise_seed + li};
    noise.validate();
    auto noisy = make_noisy_embedder(base_embedder, noise);

    // The attacker observes noisy targets; ground truth stays clean.
    std::vector<std::string> texts;
    texts.reserve(eval_dataset.size());
    for (const auto& ex : eval_dataset) texts.push_back(ex.tokens.text);
    const auto noisy_targets = get_or_embed(texts, cache, *noisy);

    std::vector<InversionExample> attacked = eval_dataset;
    for (size_t i = 0; i < attacked.size(); ++i) {
      attacked[i].target_embedding = noisy_targets[i];
    }

    const InvertFn attack = make_attack(noisy);
    EvalOptions eval = options.eval;
    eval.method_id = eval.method_id + " lambda=" + std::to_string(lambda);

    // Score reconstructions against the clean ground truth: evaluate over the
    // clean dataset but invert from the noisy target of the matching example.
    std::unordered_map<std::string, const InversionExample*> noisy_by_id;
    for (const auto& ex : attacked) noisy_by_id[ex.doc_id] = &ex;
    const InvertFn attack_on_noisy = [&](const InversionExample& clean_ex) {
      return attack(*noisy_by_id.at(clean_ex.doc_id));
    };

    TradeoffPoint point;
    point.lambda = lambda;
    point.reconstruction = evaluate_dataset(attack_on_noisy, eval_dataset, tokenizer,
                                            *base_embedder, cache, eval);
    point.ndcg_at_10 = run_retrieval(*noisy, retrieval_task, cache).mean_ndcg;
    points.push_back(std::move(point));
  }
  return points;
}

void write_tradeoff_csv(const std::string& path, const std::vector<TradeoffPoint>& points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_tradeoff_csv: cannot write '" + path + "'");
  out << "lambda,ndcg,bleu,tf1,exact,cos\n";
  char line[256];
  for (const auto& p : points) {
    std::snprintf(line, sizeof(line), "%g,%.6f,%.4f,%.4f,%.4f,%.6f\n", p.lambda, p.ndcg_at_10,
                  p.reconstruction.bleu, p.reconstruction.token_f1, p.reconstruction.exact,
                  p.reconstruction.cos);
    out << line;
  }
}

}  // namespace embed2text
