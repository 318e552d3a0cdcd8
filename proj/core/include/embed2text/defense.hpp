#pragma once

#include <functional>
#include <string>
#include <vector>

#include "embed2text/corpus.hpp"
#include "embed2text/embedder.hpp"
#include "embed2text/metrics.hpp"

namespace embed2text {

// Nearest-neighbor retrieval benchmark: queries with graded relevant ids over
// a document corpus.
struct RetrievalQuery {
  std::string query_id;
  std::string text;
  std::vector<std::pair<std::string, int>> relevant;  // (doc_id, gain)
};

struct RetrievalTask {
  std::vector<Document> corpus;
  std::vector<RetrievalQuery> queries;

  void validate() const;
};

// NDCG truncated at rank 10, log2 discounts, exponential gains; ideal DCG from
// gains sorted descending. Empty relevance map -> 0 (flagged via warning).
// Throws ContractError on duplicate ids in the ranking.
double ndcg_at_10(const std::vector<std::string>& ranked_doc_ids,
                  const std::vector<std::pair<std::string, int>>& relevance);

struct RetrievalResult {
  double mean_ndcg = 0.0;
  std::vector<double> per_query;
  long empty_relevance_queries = 0;
};

// Embeds corpus and queries through the given embedder (noise included when
// it is wrapped), ranks by cosine descending with ties broken by ascending
// doc id.
RetrievalResult run_retrieval(Embedder& embedder, const RetrievalTask& task,
                              EmbeddingCache* cache = nullptr);

// A self-retrieval task over a dataset slice: each query is its own document.
RetrievalTask make_self_retrieval_task(const std::vector<InversionExample>& examples);

struct TradeoffPoint {
  double lambda = 0.0;
  double ndcg_at_10 = 0.0;
  ReconstructionReport reconstruction;
};

// Builds the attack for one wrapped embedder: callers receive phi_noisy and
// return the invert function used by the evaluation harness for that noise
// level. The attacker models themselves stay fixed (trained on clean
// embeddings).
using AttackFactory = std::function<InvertFn(std::shared_ptr<Embedder> noisy_embedder)>;

struct NoiseSweepOptions {
  std::vector<double> lambdas;  // defaults to the standard grid when empty
  uint64_t noise_seed = 13;
  EvalOptions eval;
};

// For each lambda: wraps the embedder, re-embeds the evaluation targets
// through phi_noisy, runs the attack against the noisy targets, scores
// reconstruction against the clean ground truth, and measures retrieval
// NDCG@10 with noisy embeddings.
std::vector<TradeoffPoint> noise_sweep(std::shared_ptr<Embedder> base_embedder,
                                       const std::vector<InversionExample>& eval_dataset,
                                       const RetrievalTask& retrieval_task,
                                       const AttackFactory& make_attack,
                                       const Tokenizer& tokenizer, EmbeddingCache* cache,
                                       const NoiseSweepOptions& options);

// CSV with header lambda,ndcg,bleu,tf1,exact,cos.
void write_tradeoff_csv(const std::string& path, const std::vector<TradeoffPoint>& points);

}  // namespace embed2text
