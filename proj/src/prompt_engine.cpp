#include "bilink/prompt_engine.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "bilink/error.hpp"

namespace bilink {

using nlohmann::json;

namespace {

int count_of(const Tokens& toks, std::string_view needle) {
  return static_cast<int>(std::count(toks.begin(), toks.end(), needle));
}

// {REL} survives tokenization as "{", "rel", "}"; find it as a run.
Tokens tokenize_template(const std::string& text) {
  Tokens raw = tokenize(text);
  Tokens out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (i + 2 < raw.size() && raw[i] == "{" && raw[i + 1] == "rel" && raw[i + 2] == "}") {
      out.emplace_back(kRelSlot);
      i += 2;
    } else {
      out.push_back(raw[i]);
    }
  }
  return out;
}

}  // namespace

void PromptTemplate::validate() const {
  if (id.empty()) throw Error(ErrorKind::kConfiguration, "template with empty id");
  const Tokens f = tokenize_template(forward);
  const Tokens b = tokenize_template(backward);
  if (count_of(f, kTailMarker) != 1 || count_of(f, kHeadMarker) != 0)
    throw Error(ErrorKind::kConfiguration, "template '" + id + "': forward text needs exactly one [TMARK]");
  if (count_of(b, kHeadMarker) != 1 || count_of(b, kTailMarker) != 0)
    throw Error(ErrorKind::kConfiguration, "template '" + id + "': backward text needs exactly one [HMARK]");
  if (count_of(f, kRelSlot) != 1 || count_of(b, kRelSlot) != 1)
    throw Error(ErrorKind::kConfiguration, "template '" + id + "': each side needs exactly one {REL}");
}

PromptRuleBase::PromptRuleBase(std::vector<PromptTemplate> templates) : templates_(std::move(templates)) {
  if (templates_.empty()) throw Error(ErrorKind::kConfiguration, "rule base is empty");
  std::set<std::string> ids;
  for (const auto& t : templates_) {
    t.validate();
    if (!ids.insert(t.id).second) throw Error(ErrorKind::kConfiguration, "duplicate template id '" + t.id + "'");
  }
}

const PromptTemplate* PromptRuleBase::find(const std::string& id) const {
  for (const auto& t : templates_)
    if (t.id == id) return &t;
  return nullptr;
}

const PromptTemplate& PromptRuleBase::get(const std::string& id) const {
  if (const auto* t = find(id)) return *t;
  throw Error(ErrorKind::kReferentialIntegrity, "unknown template '" + id + "'");
}

PromptRuleBase PromptRuleBase::truncated(std::size_t m) const {
  if (m < 1 || m > templates_.size())
    throw Error(ErrorKind::kConfiguration, "rule base size must lie in [1, " + std::to_string(templates_.size()) + "]");
  return PromptRuleBase({templates_.begin(), templates_.begin() + static_cast<long>(m)});
}

PromptRuleBase default_rule_base() {
  return PromptRuleBase({
      {"t0", "NN : NN", "{REL} : [TMARK]", "{REL} : [HMARK]"},
      {"t1", "NN DT NN", "{REL} the following : [TMARK]", "[HMARK] : inverse {REL}"},
      {"t2", "NN IN PRP", "{REL} of it is [TMARK]", "[HMARK] is {REL} of it"},
      {"t3", "PRP VB NN", "it {REL} [TMARK]", "[HMARK] {REL} it"},
      {"t4", "VBN IN NN", "linked by {REL} to [TMARK]", "[HMARK] linked by {REL} to it"},
      {"t5", "WP VBZ NN", "what does it {REL} ? [TMARK]", "who {REL} it ? [HMARK]"},
      {"t6", "NN SYM NN", "{REL} - > [TMARK]", "[HMARK] - > {REL}"},
      {"t7", "NN RB NN", "head then {REL} then [TMARK]", "[HMARK] then {REL} then tail"},
  });
}

PromptRuleBase load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open " + path.string());
  std::vector<PromptTemplate> out;
  try {
    const json j = json::parse(in);
    for (const auto& t : j)
      out.push_back({t.at("id").get<std::string>(), t.value("syntax_tag", std::string()),
                     t.at("forward").get<std::string>(), t.at("backward").get<std::string>()});
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  return PromptRuleBase(std::move(out));
}

void save_templates(const PromptRuleBase& rb, const std::filesystem::path& path) {
  json j = json::array();
  for (const auto& t : rb.templates())
    j.push_back({{"id", t.id}, {"syntax_tag", t.syntax_tag}, {"forward", t.forward}, {"backward", t.backward}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

std::string edge_key(const Graph& g, const Edge& e) {
  return std::string(e.direction == Direction::kForward ? "f|" : "b|") + g.entity(e.entity).id + "|" +
         g.relation(e.relation).id;
}

Edge parse_edge_key(const Graph& g, const std::string& key) {
  const auto first = key.find('|');
  const auto last = key.rfind('|');
  if (first == std::string::npos || first == last || first != 1 || (key[0] != 'f' && key[0] != 'b'))
    throw Error(ErrorKind::kParse, "malformed edge key '" + key + "'");
  Edge e;
  e.direction = key[0] == 'f' ? Direction::kForward : Direction::kBackward;
  e.entity = g.entity_index(key.substr(first + 1, last - first - 1));
  e.relation = g.relation_index(key.substr(last + 1));
  return e;
}

Tokens verbalize(const std::string& relation_text, const PromptTemplate& t, Direction d) {
  const Tokens rel = tokenize(relation_text);
  Tokens out;
  for (auto& tok : tokenize_template(d == Direction::kForward ? t.forward : t.backward)) {
    if (tok == kRelSlot) {
      out.insert(out.end(), rel.begin(), rel.end());
    } else {
      out.push_back(std::move(tok));
    }
  }
  return out;
}

Tokens verbalize(const Graph& g, const Edge& e, const PromptTemplate& t) {
  return verbalize(g.relation(e.relation).text, t, e.direction);
}

Tokens canonicalize_markers(Tokens tokens) {
  for (auto& t : tokens)
    if (t == kTailMarker) t = kHeadMarker;
  return tokens;
}

Tokens bare_template(const PromptTemplate& t, Direction d, int* marker_pos) {
  Tokens out;
  for (auto& tok : tokenize_template(d == Direction::kForward ? t.forward : t.backward)) {
    if (tok == kHeadMarker || tok == kTailMarker) {
      if (marker_pos) *marker_pos = static_cast<int>(out.size());
      out.emplace_back(kPad);
    } else if (tok == kRelSlot) {
      out.emplace_back(kPad);
    } else {
      out.push_back(std::move(tok));
    }
  }
  return out;
}

LabeledSeed load_seed_labels(const Graph& g, const PromptRuleBase& rb, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open " + path.string());
  LabeledSeed seed;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw Error(ErrorKind::kParse, path.filename().string() + ":" + std::to_string(no) + ": expected key<TAB>template");
    const std::string tid = line.substr(tab + 1);
    rb.get(tid);
    seed.labels.emplace_back(parse_edge_key(g, line.substr(0, tab)), tid);
  }
  return seed;
}

void save_seed_labels(const Graph& g, const LabeledSeed& seed, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
  for (const auto& [e, tid] : seed.labels) out << edge_key(g, e) << '\t' << tid << '\n';
}

LabeledSeed synth_seed_labels(const Graph& g, const SynthSpec& spec, const PromptRuleBase& rb, int per_type,
                              std::uint64_t seed) {
  if (rb.size() == 0) throw Error(ErrorKind::kConfiguration, "empty rule base");
  if (per_type < 1) throw Error(ErrorKind::kConfiguration, "per_type must be >= 1");
  std::mt19937_64 rng(seed);
  LabeledSeed out;
  std::size_t next = 1;
  for (const SynthRelation& sr : spec.relations) {
    const auto r = g.find_relation(sr.id);
    if (!r) continue;
    for (Direction d : {Direction::kForward, Direction::kBackward}) {
      std::set<int> ents;
      for (const Triple& t : g.triples())
        if (t.relation == *r) ents.insert(d == Direction::kForward ? t.head : t.tail);
      if (ents.empty()) continue;
      std::size_t tmpl = 0;
      if (sr.pattern != RelationPattern::kSymmetric) {
        tmpl = rb.size() == 1 ? 0 : 1 + (next - 1) % (rb.size() - 1);
        ++next;
      }
      std::vector<int> pick(ents.begin(), ents.end());
      std::shuffle(pick.begin(), pick.end(), rng);
      pick.resize(std::min(pick.size(), static_cast<std::size_t>(per_type)));
      std::sort(pick.begin(), pick.end());
      for (int e : pick) out.labels.emplace_back(Edge{e, *r, d}, rb.at(tmpl).id);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// g_theta

ExpressionEncoder::ExpressionEncoder(int vocab_size, int embed_dim, ExpressionEncoderConfig cfg) : cfg_(cfg) {
  if (vocab_size < 1 || embed_dim < 1 || cfg.out_dim < 1 || cfg.hidden_dim < 1)
    throw Error(ErrorKind::kConfiguration, "expression encoder sizes must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](auto& m, double scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
  };
  table_.resize(vocab_size, embed_dim);
  fill(table_, 1.0);
  w1_.resize(cfg.hidden_dim, embed_dim);
  fill(w1_, 1.0 / std::sqrt(static_cast<double>(embed_dim)));
  b1_ = Eigen::VectorXd::Zero(cfg.hidden_dim);
  w2_.resize(cfg.out_dim, cfg.hidden_dim);
  fill(w2_, 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim)));
  b2_ = Eigen::VectorXd::Zero(cfg.out_dim);
}

void ExpressionEncoder::set_token_embeddings(const Eigen::MatrixXd& table) {
  if (table.cols() != w1_.cols()) throw Error(ErrorKind::kConfiguration, "token table width mismatch");
  table_ = table;
}

void ExpressionEncoder::set_weights(Eigen::MatrixXd w1, Eigen::VectorXd b1, Eigen::MatrixXd w2, Eigen::VectorXd b2) {
  if (w1.rows() != b1.size() || w2.cols() != w1.rows() || w2.rows() != b2.size())
    throw Error(ErrorKind::kConfiguration, "expression encoder weight shapes disagree");
  w1_ = std::move(w1);
  b1_ = std::move(b1);
  w2_ = std::move(w2);
  b2_ = std::move(b2);
  cfg_.hidden_dim = static_cast<int>(w1_.rows());
  cfg_.out_dim = static_cast<int>(w2_.rows());
}

Eigen::VectorXd ExpressionEncoder::embed_ids(const std::vector<int>& ids) const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(table_.cols());
  for (int id : ids) {
    if (id < 0 || id >= table_.rows()) throw Error(ErrorKind::kReferentialIntegrity, "token id outside the table");
    x += table_.row(id).transpose();
  }
  if (!ids.empty()) x /= static_cast<double>(ids.size());
  const double rms = std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
  if (rms > 0) x /= rms;
  const Eigen::VectorXd h = (w1_ * x + b1_).array().tanh().matrix();
  return w2_ * h + b2_;
}

Eigen::VectorXd ExpressionEncoder::embed_expression(const Tokenizer& tok, const Graph& g, const Edge& e,
                                                    const PromptTemplate& t) const {
  if (e.entity < 0 || e.entity >= static_cast<int>(g.entity_count()) || e.relation < 0 ||
      e.relation >= static_cast<int>(g.relation_count()))
    throw Error(ErrorKind::kReferentialIntegrity, "edge references an unknown entity or relation");
  Tokens toks = verbalize(g, e, t);
  const Tokens name = tokenize(g.entity(e.entity).name);
  toks.insert(toks.end(), name.begin(), name.end());
  return embed_ids(tok.ids(toks));
}

// ---------------------------------------------------------------------------
// Mixture

void GmmState::validate(double eps_reg) const {
  const int kk = k();
  if (kk < 1 || means.rows() != kk || static_cast<int>(covariances.size()) != kk)
    throw Error(ErrorKind::kConfiguration, "mixture shapes disagree");
  if (std::abs(priors.sum() - 1.0) > 1e-9 || (priors.array() < 0).any())
    throw Error(ErrorKind::kConfiguration, "mixture priors are not on the simplex");
  for (const auto& s : covariances) {
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 0.0)
      throw Error(ErrorKind::kConfiguration, "covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < eps_reg * (1.0 - 1e-6))
      throw Error(ErrorKind::kConfiguration, "covariance eigenvalue below eps_reg");
  }
}

Eigen::MatrixXd log_joint(const GmmState& gmm, const Eigen::MatrixXd& Z) {
  if (!Z.allFinite()) throw Error(ErrorKind::kNumericInput, "non-finite expression embedding");
  if (Z.cols() != gmm.dim()) throw Error(ErrorKind::kNumericInput, "embedding dimension mismatch");
  const int kk = gmm.k();
  const double d = static_cast<double>(gmm.dim());
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  Eigen::MatrixXd out(Z.rows(), kk);
  for (int c = 0; c < kk; ++c) {
    Eigen::LLT<Eigen::MatrixXd> llt(gmm.covariances[c]);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::kNumericInput, "covariance not positive definite");
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double log_prior = gmm.priors(c) > 0 ? std::log(gmm.priors(c)) : -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd diff = (Z.rowwise() - gmm.means.row(c)).transpose();  // D x N
    llt.matrixL().solveInPlace(diff);
    const Eigen::VectorXd maha = diff.colwise().squaredNorm().transpose();
    out.col(c) = (log_prior - 0.5 * (d * kLog2Pi + logdet)) - 0.5 * maha.array();
  }
  return out;
}

Eigen::VectorXd responsibilities_from_log(const Eigen::VectorXd& log_dens) {
  const double m = log_dens.maxCoeff();
  if (!std::isfinite(m)) throw Error(ErrorKind::kNumericInput, "no component has finite density");
  Eigen::VectorXd r = (log_dens.array() - m).exp().matrix();
  return r / r.sum();
}

Eigen::VectorXd responsibilities(const GmmState& gmm, const Eigen::VectorXd& z) {
  return responsibilities_from_log(log_joint(gmm, z.transpose()).row(0).transpose());
}

Eigen::MatrixXd responsibilities(const GmmState& gmm, const Eigen::MatrixXd& Z) {
  const Eigen::MatrixXd lj = log_joint(gmm, Z);
  Eigen::MatrixXd r(lj.rows(), lj.cols());
  for (Eigen::Index i = 0; i < lj.rows(); ++i) r.row(i) = responsibilities_from_log(lj.row(i).transpose()).transpose();
  return r;
}

Eigen::VectorXd sharpen(const Eigen::VectorXd& r, double t_sharp) {
  if (!(t_sharp > 0.0 && t_sharp <= 1.0)) throw Error(ErrorKind::kConfiguration, "T_sharp must lie in (0, 1]");
  if (t_sharp == 1.0) return r;
  // Power in log space so tiny entries do not underflow before renormalizing.
  Eigen::VectorXd lg(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i)
    lg(i) = r(i) > 0 ? std::log(r(i)) / t_sharp : -std::numeric_limits<double>::infinity();
  return responsibilities_from_log(lg);
}

double log_likelihood(const GmmState& gmm, const Eigen::MatrixXd& Z) {
  const Eigen::MatrixXd lj = log_joint(gmm, Z);
  double total = 0.0;
  for (Eigen::Index i = 0; i < lj.rows(); ++i) {
    const double m = lj.row(i).maxCoeff();
    total += m + std::log((lj.row(i).array() - m).exp().sum());
  }
  return total;
}

GmmState m_step(const GmmState& gmm, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& resp, double eps_reg,
                std::mt19937_64* rng) {
  const auto n = Z.rows();
  const int kk = gmm.k();
  const auto d = Z.cols();
  if (n < 1) throw Error(ErrorKind::kPrecondition, "m_step needs at least one point");
  if (resp.rows() != n || resp.cols() != kk) throw Error(ErrorKind::kPrecondition, "responsibility shape mismatch");
  GmmState out = gmm;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  for (int c = 0; c < kk; ++c) {
    const double mass = resp.col(c).sum();
    if (mass < 1e-12) {
      std::mt19937_64 fallback(static_cast<std::uint64_t>(c) + 1);
      auto& gen = rng ? *rng : fallback;
      const auto pick = static_cast<Eigen::Index>(gen() % static_cast<std::uint64_t>(n));
      spdlog::info("mixture component {} lost its responsibility mass; reseeding at point {}", c, pick);
      out.means.row(c) = Z.row(pick);
      const Eigen::RowVectorXd mean = Z.colwise().mean();
      const Eigen::MatrixXd centered = Z.rowwise() - mean;
      Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
      cov = (0.5 * (cov + cov.transpose())).eval();
      out.covariances[c] = cov + eps_reg * eye;
      out.priors(c) = 1.0 / static_cast<double>(n);
      continue;
    }
    const Eigen::RowVectorXd mu = (resp.col(c).transpose() * Z) / mass;
    const Eigen::MatrixXd centered = Z.rowwise() - mu;
    Eigen::MatrixXd cov = centered.transpose() * resp.col(c).asDiagonal() * centered / mass;
    cov = (0.5 * (cov + cov.transpose())).eval();
    out.means.row(c) = mu;
    out.covariances[c] = cov + eps_reg * eye;
    out.priors(c) = mass / static_cast<double>(n);
  }
  out.priors /= out.priors.sum();
  return out;
}

EmResult em_fit(const GmmState& gmm, const Eigen::MatrixXd& Z, int rounds, double t_sharp, double eps_reg,
                std::uint64_t seed) {
  if (rounds < 1) throw Error(ErrorKind::kPrecondition, "em_fit needs at least one round");
  std::mt19937_64 rng(seed);
  EmResult res{gmm, {log_likelihood(gmm, Z)}};
  for (int round = 0; round < rounds; ++round) {
    Eigen::MatrixXd r = responsibilities(res.state, Z);
    if (t_sharp != 1.0)
      for (Eigen::Index i = 0; i < r.rows(); ++i) r.row(i) = sharpen(r.row(i).transpose(), t_sharp).transpose();
    res.state = m_step(res.state, Z, r, eps_reg, &rng);
    res.log_likelihood.push_back(log_likelihood(res.state, Z));
  }
  return res;
}

GmmState init_gmm_from_points(const std::vector<std::pair<Eigen::VectorXd, std::string>>& points, double eps_reg) {
  if (points.empty()) throw Error(ErrorKind::kConfiguration, "labeled seed is empty");
  std::map<std::string, std::vector<const Eigen::VectorXd*>> groups;
  for (const auto& [z, tid] : points) groups[tid].push_back(&z);
  const auto d = points.front().first.size();
  GmmState s;
  const int kk = static_cast<int>(groups.size());
  s.means.resize(kk, d);
  s.priors.resize(kk);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  int c = 0;
  for (const auto& [tid, zs] : groups) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (const auto* z : zs) {
      if (z->size() != d) throw Error(ErrorKind::kNumericInput, "labeled embeddings differ in dimension");
      mu += *z;
    }
    mu /= static_cast<double>(zs.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    if (zs.size() == 1) {
      spdlog::info("template '{}' has a single labeled edge; covariance falls back to eps_reg*I", tid);
    } else {
      for (const auto* z : zs) cov += (*z - mu) * (*z - mu).transpose();
      cov /= static_cast<double>(zs.size());
      cov = (0.5 * (cov + cov.transpose())).eval();
    }
    s.means.row(c) = mu.transpose();
    s.covariances.push_back(cov + eps_reg * eye);
    s.priors(c) = static_cast<double>(zs.size()) / static_cast<double>(points.size());
    s.component_template.push_back(tid);
    ++c;
  }
  return s;
}

GmmState init_gmm_from_seed(const LabeledSeed& seed, const ExpressionEncoder& g_theta, const Tokenizer& tok,
                            const Graph& g, const PromptRuleBase& rb, double eps_reg) {
  if (seed.labels.empty()) throw Error(ErrorKind::kConfiguration, "labeled seed is empty");
  std::vector<std::pair<Eigen::VectorXd, std::string>> pts;
  pts.reserve(seed.labels.size());
  for (const auto& [e, tid] : seed.labels) pts.emplace_back(g_theta.embed_expression(tok, g, e, rb.get(tid)), tid);
  return init_gmm_from_points(pts, eps_reg);
}

const PromptTemplate& select_template(const GmmState& gmm, const ExpressionEncoder& g_theta, const Tokenizer& tok,
                                      const Graph& g, const Edge& e, const PromptRuleBase& rb) {
  // Visit templates in id order so the result does not depend on list order.
  std::vector<const PromptTemplate*> order;
  for (const auto& t : rb.templates()) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(order.size()), gmm.dim());
  for (std::size_t i = 0; i < order.size(); ++i)
    Z.row(static_cast<Eigen::Index>(i)) = g_theta.embed_expression(tok, g, e, *order[i]).transpose();
  const Eigen::MatrixXd lj = log_joint(gmm, Z);
  Eigen::Index best = 0;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < lj.rows(); ++i) {
    const double m = lj.row(i).maxCoeff();
    const double ll = m + std::log((lj.row(i).array() - m).exp().sum());
    if (ll > best_ll) {
      best_ll = ll;
      best = i;
    }
  }
  const Eigen::VectorXd r = responsibilities_from_log(lj.row(best).transpose());
  int comp = -1;
  for (int c = 0; c < gmm.k(); ++c) {
    if (comp < 0 || r(c) > r(comp) || (r(c) == r(comp) && gmm.component_template[c] < gmm.component_template[comp]))
      comp = c;
  }
  return rb.get(gmm.component_template.at(static_cast<std::size_t>(comp)));
}

}  // namespace bilink
