#pragma once
// Entity index, index-lookup (sp1) and re-encoding (sp2) scores, their
// ensemble, filtered ranks and MRR/Hits@k.

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bilink/contrastive_trainer.hpp"
#include "bilink/graph_store.hpp"
#include "bilink/prompt_engine.hpp"

namespace bilink {

struct RankingMetrics {
  double mrr = 0, hits1 = 0, hits3 = 0, hits10 = 0;
  std::size_t count = 0;

  // Hits monotone in k, 0 < MRR <= 1, MRR >= Hits@1. Throws kEvaluation.
  void check() const;
};

// MRR = mean(1/rank), Hits@k = mean(rank <= k). Throws kEvaluation when empty
// or a rank is < 1.
RankingMetrics metrics(const std::vector<long>& ranks);

// 1 + number of non-filtered entities scoring >= gold (other than gold).
// Throws kEvaluation when gold has no score or is in the filter.
long filtered_rank(const std::vector<double>& scores, int gold, const std::vector<int>& filter);

// One description embedding per candidate entity. Post-hoc updates keep the
// original so the averaged entry can always be recomputed.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  explicit EmbeddingIndex(Eigen::MatrixXd original);

  Eigen::Index size() const { return current_.rows(); }
  Eigen::Index dim() const { return current_.cols(); }
  const Eigen::MatrixXd& entries() const { return current_; }
  Eigen::VectorXd entry(int e) const { return current_.row(e).transpose(); }
  Eigen::VectorXd original(int e) const { return original_.row(e).transpose(); }

  // Stores `neighbors` as the entity's incident backward embeddings and sets
  // the entry to the mean of the original and them. Empty leaves it as is.
  void posthoc_update(int e, const std::vector<Eigen::VectorXd>& neighbors);

 private:
  Eigen::MatrixXd original_, current_;
  std::vector<std::vector<Eigen::VectorXd>> neighbors_;
};

// s(query, index[c]) for every entity. Throws kEvaluation for an empty index.
std::vector<double> sp1_scores(const Eigen::VectorXd& query, const EmbeddingIndex& index, double t);
std::vector<double> sp1_scores(const Eigen::VectorXd& query, const Eigen::MatrixXd& index, double t);

// The k highest scores, ties to the lower index. Throws kPrecondition for k < 1.
std::vector<int> top_k(const std::vector<double>& scores, int k);

// sp2 over `entity_count` entities: s(anchor, reencode(c)) for each listed
// candidate, 0 elsewhere. Throws kPrecondition when no candidate is given and
// kReferentialIntegrity for ids outside the pool.
std::vector<double> sp2_rescore(const Eigen::VectorXd& anchor, const std::vector<int>& candidates,
                                std::size_t entity_count, const std::function<Eigen::VectorXd(int)>& reencode,
                                double t);

// sp1 + w sp2.
std::vector<double> ensemble(const std::vector<double>& sp1, const std::vector<double>& sp2, double w);

struct Query {
  Direction direction = Direction::kForward;
  int known = 0;     // head for forward, tail for backward
  int relation = 0;
  int gold = 0;
  std::vector<int> filter;  // other true completions, ascending
};

// A forward and a backward query per listed triple of `g`, filtered against
// every triple of `g`.
std::vector<Query> build_queries(const Graph& g, const std::vector<int>& triples);

struct QueryRank {
  std::string key;  // edge key of the known side
  std::string gold;
  Direction direction = Direction::kForward;
  int relation = 0;
  long rank = 0;
};

struct EvalOptions {
  int sp2_k = 50;
  double w = 0.5;
  bool use_sp2 = true;
  bool posthoc = false;
  int workers = 1;
};

EvalOptions eval_options(const TrainConfig& cfg);

struct EvalResult {
  RankingMetrics forward, backward, mean;
  std::vector<QueryRank> per_query;  // forward queries then backward
};

// Ranks every query over all entities of views.eval_graph. Descriptions and
// template choices come from views.eval_context.
template <typename T>
EvalResult evaluate(LinkModel<T>& model, const SplitViews& views, const std::vector<int>& triples,
                    const EvalOptions& opt);

extern template EvalResult evaluate<float>(LinkModel<float>&, const SplitViews&, const std::vector<int>&,
                                           const EvalOptions&);
extern template EvalResult evaluate<double>(LinkModel<double>&, const SplitViews&, const std::vector<int>&,
                                            const EvalOptions&);

// Metrics of the queries whose relation is `relation`, per direction and mean.
EvalResult restrict_to_relation(const EvalResult& r, int relation);

// Mean of the two directions' metrics; count is the total.
RankingMetrics average(const RankingMetrics& a, const RankingMetrics& b);

// [{split, direction, MRR, hits1, hits3, hits10, n_queries, config_hash, seed}]
// for forward, backward and mean.
std::string eval_report_json(const EvalResult& r, const std::string& split, const std::string& config_hash,
                             std::uint64_t seed);
void write_per_query_tsv(const EvalResult& r, const std::filesystem::path& path);

}  // namespace bilink
