#include "bilink/ranking_eval.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <tuple>

namespace bilink {

void RankingMetrics::check() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kEvaluation, "metric invariant violated: " + m); };
  if (!(hits1 <= hits3 && hits3 <= hits10)) fail("hits not monotone in k");
  if (!(mrr > 0 && mrr <= 1)) fail("MRR outside (0, 1]");
  if (mrr < hits1) fail("MRR below Hits@1");
}

RankingMetrics metrics(const std::vector<long>& ranks) {
  if (ranks.empty()) throw Error(ErrorKind::kEvaluation, "metrics of an empty rank list");
  RankingMetrics m;
  for (long r : ranks) {
    if (r < 1) throw Error(ErrorKind::kEvaluation, "rank " + std::to_string(r) + " is not positive");
    m.mrr += 1.0 / static_cast<double>(r);
    m.hits1 += r <= 1 ? 1.0 : 0.0;
    m.hits3 += r <= 3 ? 1.0 : 0.0;
    m.hits10 += r <= 10 ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
  m.count = ranks.size();
  return m;
}

RankingMetrics average(const RankingMetrics& a, const RankingMetrics& b) {
  RankingMetrics m;
  m.mrr = (a.mrr + b.mrr) / 2;
  m.hits1 = (a.hits1 + b.hits1) / 2;
  m.hits3 = (a.hits3 + b.hits3) / 2;
  m.hits10 = (a.hits10 + b.hits10) / 2;
  m.count = a.count + b.count;
  return m;
}

long filtered_rank(const std::vector<double>& scores, int gold, const std::vector<int>& filter) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= scores.size())
    throw Error(ErrorKind::kEvaluation, "gold entity " + std::to_string(gold) + " has no score");
  std::vector<std::uint8_t> skip(scores.size(), 0);
  for (int f : filter) {
    if (f == gold) throw Error(ErrorKind::kEvaluation, "gold entity appears in its own filter set");
    if (f >= 0 && static_cast<std::size_t>(f) < scores.size()) skip[static_cast<std::size_t>(f)] = 1;
  }
  const double g = scores[static_cast<std::size_t>(gold)];
  long rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (static_cast<int>(i) != gold && !skip[i] && scores[i] >= g) ++rank;
  return rank;
}

EmbeddingIndex::EmbeddingIndex(Eigen::MatrixXd original)
    : original_(std::move(original)), current_(original_), neighbors_(static_cast<std::size_t>(original_.rows())) {}

void EmbeddingIndex::posthoc_update(int e, const std::vector<Eigen::VectorXd>& neighbors) {
  if (e < 0 || e >= size()) throw Error(ErrorKind::kReferentialIntegrity, "post-hoc update of an unknown entity");
  if (neighbors.empty()) return;
  for (const auto& v : neighbors)
    if (v.size() != dim()) throw Error(ErrorKind::kInputLayout, "neighbour embedding has the wrong dimension");
  neighbors_[static_cast<std::size_t>(e)] = neighbors;
  Eigen::VectorXd sum = original_.row(e).transpose();
  for (const auto& v : neighbors) sum += v;
  current_.row(e) = (sum / static_cast<double>(neighbors.size() + 1)).transpose();
}

std::vector<double> sp1_scores(const Eigen::VectorXd& query, const Eigen::MatrixXd& index, double t) {
  if (index.rows() == 0) throw Error(ErrorKind::kEvaluation, "empty embedding index");
  std::vector<double> out(static_cast<std::size_t>(index.rows()));
  for (Eigen::Index c = 0; c < index.rows(); ++c)
    out[static_cast<std::size_t>(c)] = cosine_sim(query, index.row(c).transpose(), t);
  return out;
}

std::vector<double> sp1_scores(const Eigen::VectorXd& query, const EmbeddingIndex& index, double t) {
  return sp1_scores(query, index.entries(), t);
}

std::vector<int> top_k(const std::vector<double>& scores, int k) {
  if (k < 1) throw Error(ErrorKind::kPrecondition, "top-k needs k >= 1");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(), [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  order.resize(kk);
  return order;
}

std::vector<double> sp2_rescore(const Eigen::VectorXd& anchor, const std::vector<int>& candidates,
                                std::size_t entity_count, const std::function<Eigen::VectorXd(int)>& reencode,
                                double t) {
  if (candidates.empty()) throw Error(ErrorKind::kPrecondition, "sp2 needs at least one candidate (K >= 1)");
  std::vector<double> out(entity_count, 0.0);
  for (int c : candidates) {
    if (c < 0 || static_cast<std::size_t>(c) >= entity_count)
      throw Error(ErrorKind::kReferentialIntegrity, "sp2 candidate " + std::to_string(c) + " not in the graph");
    out[static_cast<std::size_t>(c)] = cosine_sim(anchor, reencode(c), t);
  }
  return out;
}

std::vector<double> ensemble(const std::vector<double>& sp1, const std::vector<double>& sp2, double w) {
  if (!(w >= 0)) throw Error(ErrorKind::kPrecondition, "ensemble weight must be >= 0");
  if (sp1.size() != sp2.size()) throw Error(ErrorKind::kInputLayout, "sp1 and sp2 differ in length");
  std::vector<double> out(sp1.size());
  for (std::size_t i = 0; i < sp1.size(); ++i) out[i] = sp1[i] + w * sp2[i];
  return out;
}

std::vector<Query> build_queries(const Graph& g, const std::vector<int>& triples) {
  std::map<std::pair<int, int>, std::vector<int>> tails, heads;  // (h, r) -> tails, (t, r) -> heads
  for (const Triple& t : g.triples()) {
    tails[{t.head, t.relation}].push_back(t.tail);
    heads[{t.tail, t.relation}].push_back(t.head);
  }
  auto filter = [](const std::vector<int>& all, int gold) {
    std::vector<int> out;
    for (int x : all)
      if (x != gold) out.push_back(x);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  };
  std::vector<Query> out;
  for (int i : triples) {
    const Triple& t = g.triple(i);
    out.push_back(Query{Direction::kForward, t.head, t.relation, t.tail, filter(tails[{t.head, t.relation}], t.tail)});
  }
  for (int i : triples) {
    const Triple& t = g.triple(i);
    out.push_back(Query{Direction::kBackward, t.tail, t.relation, t.head, filter(heads[{t.tail, t.relation}], t.head)});
  }
  return out;
}

EvalOptions eval_options(const TrainConfig& cfg) {
  EvalOptions o;
  o.sp2_k = cfg.sp2_k;
  o.w = cfg.ensemble_w;
  o.posthoc = cfg.posthoc;
  o.workers = cfg.workers;
  return o;
}

namespace {

// Denoised expression embeddings keyed by edge, encoded in bulk on demand.
template <typename T>
class ExpressionCache {
 public:
  ExpressionCache(LinkModel<T>& model, const InputBuilder& inputs, int workers)
      : model_(model), inputs_(inputs), workers_(workers) {}

  void request(const Edge& e) {
    const auto key = std::make_tuple(static_cast<int>(e.direction), e.entity, e.relation);
    if (slot_.count(key)) return;
    slot_.emplace(key, -1);
    pending_.push_back(e);
  }

  void materialize() {
    if (pending_.empty()) return;
    std::vector<EncoderInput> in;
    std::vector<int> tmpl;
    for (const Edge& e : pending_) {
      tmpl.push_back(model_.template_for(inputs_.graph(), e));
      in.push_back(inputs_.expression(e, tmpl.back()));
    }
    // Bare templates not seen before.
    std::vector<std::pair<int, int>> new_bare;
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      const auto key = std::make_pair(tmpl[i], static_cast<int>(pending_[i].direction));
      if (!bare_.count(key) && std::find(new_bare.begin(), new_bare.end(), key) == new_bare.end())
        new_bare.push_back(key);
    }
    for (auto [t, d] : new_bare) in.push_back(inputs_.bare(t, static_cast<Direction>(d)));
    const Eigen::MatrixXd pooled = encode_pooled(model_.expr, in, workers_);
    for (std::size_t i = 0; i < new_bare.size(); ++i)
      bare_[new_bare[i]] = pooled.row(static_cast<Eigen::Index>(pending_.size() + i)).transpose();
    const Eigen::Index base = rows_.rows();
    rows_.conservativeResize(base + static_cast<Eigen::Index>(pending_.size()), pooled.cols());
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      const Edge& e = pending_[i];
      const auto row = base + static_cast<Eigen::Index>(i);
      const Eigen::VectorXd& h_tau = bare_.at({tmpl[i], static_cast<int>(e.direction)});
      rows_.row(row) = denoise(pooled.row(static_cast<Eigen::Index>(i)).transpose(), h_tau).transpose();
      slot_[std::make_tuple(static_cast<int>(e.direction), e.entity, e.relation)] = static_cast<int>(row);
    }
    pending_.clear();
  }

  Eigen::VectorXd get(const Edge& e) const {
    const int row = slot_.at(std::make_tuple(static_cast<int>(e.direction), e.entity, e.relation));
    if (row < 0) throw Error(ErrorKind::kPrecondition, "expression embedding requested but not materialized");
    return rows_.row(row).transpose();
  }

 private:
  LinkModel<T>& model_;
  const InputBuilder& inputs_;
  int workers_;
  std::map<std::tuple<int, int, int>, int> slot_;
  std::vector<Edge> pending_;
  std::map<std::pair<int, int>, Eigen::VectorXd> bare_;
  Eigen::MatrixXd rows_;
};

}  // namespace

template <typename T>
EvalResult evaluate(LinkModel<T>& model, const SplitViews& views, const std::vector<int>& triples,
                    const EvalOptions& opt) {
  tune_allocator();
  const Graph& g = views.eval_graph;
  const Graph& ctx = views.eval_context;
  if (g.entity_count() == 0) throw Error(ErrorKind::kEvaluation, "evaluation graph has no entities");
  if (ctx.entity_count() != g.entity_count())
    throw Error(ErrorKind::kEvaluation, "evaluation context and graph index different entities");
  if (triples.empty()) throw Error(ErrorKind::kEvaluation, "no triples to evaluate");
  if (opt.sp2_k < 1) throw Error(ErrorKind::kPrecondition, "sp2_k must be >= 1");
  const double t = model.cfg.temperature;
  const InputBuilder inputs(model.tok, ctx, model.rules, model.cfg.max_len, model.cfg.desc_tokens);

  std::vector<EncoderInput> ent_in;
  for (std::size_t e = 0; e < g.entity_count(); ++e) ent_in.push_back(inputs.entity(static_cast<int>(e)));
  EmbeddingIndex index(encode_pooled(model.entity_encoder(), ent_in, opt.workers));

  ExpressionCache<T> cache(model, inputs, opt.workers);
  const std::vector<Query> queries = build_queries(g, triples);
  auto query_edge = [](const Query& q) { return Edge{q.known, q.relation, q.direction}; };
  // sp2 re-encodes a candidate in the opposite reading.
  auto candidate_edge = [](const Query& q, int c) {
    return Edge{c, q.relation, q.direction == Direction::kForward ? Direction::kBackward : Direction::kForward};
  };
  for (const Query& q : queries) cache.request(query_edge(q));
  if (opt.posthoc)
    for (const Triple& tr : ctx.triples()) cache.request(Edge{tr.tail, tr.relation, Direction::kBackward});
  cache.materialize();

  if (opt.posthoc) {
    std::vector<std::vector<Eigen::VectorXd>> incident(g.entity_count());
    for (const Triple& tr : ctx.triples())
      incident[static_cast<std::size_t>(tr.head)].push_back(cache.get(Edge{tr.tail, tr.relation, Direction::kBackward}));
    for (std::size_t e = 0; e < incident.size(); ++e) index.posthoc_update(static_cast<int>(e), incident[e]);
  }

  std::vector<std::vector<double>> sp1(queries.size());
  std::vector<std::vector<int>> top(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    sp1[i] = sp1_scores(cache.get(query_edge(queries[i])), index, t);
    if (opt.use_sp2) {
      top[i] = top_k(sp1[i], opt.sp2_k);
      for (int c : top[i]) cache.request(candidate_edge(queries[i], c));
    }
  }
  cache.materialize();

  EvalResult result;
  std::vector<long> fwd, bwd;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Query& q = queries[i];
    std::vector<double> scores = sp1[i];
    if (opt.use_sp2) {
      const auto sp2 = sp2_rescore(index.original(q.known), top[i], g.entity_count(),
                                   [&](int c) { return cache.get(candidate_edge(q, c)); }, t);
      scores = ensemble(scores, sp2, opt.w);
    }
    const long rank = filtered_rank(scores, q.gold, q.filter);
    (q.direction == Direction::kForward ? fwd : bwd).push_back(rank);
    result.per_query.push_back(QueryRank{edge_key(g, query_edge(q)), g.entity(q.gold).id, q.direction, q.relation, rank});
  }
  result.forward = metrics(fwd);
  result.backward = metrics(bwd);
  result.mean = average(result.forward, result.backward);
  result.forward.check();
  result.backward.check();
  return result;
}

template EvalResult evaluate<float>(LinkModel<float>&, const SplitViews&, const std::vector<int>&, const EvalOptions&);
template EvalResult evaluate<double>(LinkModel<double>&, const SplitViews&, const std::vector<int>&,
                                     const EvalOptions&);

EvalResult restrict_to_relation(const EvalResult& r, int relation) {
  EvalResult out;
  std::vector<long> fwd, bwd;
  for (const QueryRank& q : r.per_query) {
    if (q.relation != relation) continue;
    out.per_query.push_back(q);
    (q.direction == Direction::kForward ? fwd : bwd).push_back(q.rank);
  }
  if (fwd.empty() || bwd.empty()) throw Error(ErrorKind::kEvaluation, "no queries for the relation");
  out.forward = metrics(fwd);
  out.backward = metrics(bwd);
  out.mean = average(out.forward, out.backward);
  return out;
}

std::string eval_report_json(const EvalResult& r, const std::string& split, const std::string& config_hash,
                             std::uint64_t seed) {
  auto row = [&](const char* direction, const RankingMetrics& m) {
    nlohmann::ordered_json j;
    j["split"] = split;
    j["direction"] = direction;
    j["MRR"] = m.mrr;
    j["hits1"] = m.hits1;
    j["hits3"] = m.hits3;
    j["hits10"] = m.hits10;
    j["n_queries"] = m.count;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    return j;
  };
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  out.push_back(row("forward", r.forward));
  out.push_back(row("backward", r.backward));
  out.push_back(row("mean", r.mean));
  return out.dump(2);
}

void write_per_query_tsv(const EvalResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
  for (const QueryRank& q : r.per_query) out << q.key << '\t' << q.gold << '\t' << q.rank << '\n';
}

}  // namespace bilink
