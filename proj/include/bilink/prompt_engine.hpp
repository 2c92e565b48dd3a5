#pragma once
// Reversible prompt templates, the shallow expression encoder g_theta, and the
// Gaussian mixture that picks a template per edge.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bilink/graph_store.hpp"
#include "bilink/tokenizer.hpp"

namespace bilink {

inline constexpr std::string_view kRelSlot = "{REL}";

struct PromptTemplate {
  std::string id;
  std::string syntax_tag;
  std::string forward;   // one {REL}, one [TMARK]
  std::string backward;  // one {REL}, one [HMARK]

  void validate() const;  // throws kConfiguration
};

class PromptRuleBase {
 public:
  PromptRuleBase() = default;
  explicit PromptRuleBase(std::vector<PromptTemplate> templates);  // validates

  std::size_t size() const { return templates_.size(); }
  const std::vector<PromptTemplate>& templates() const { return templates_; }
  const PromptTemplate& at(std::size_t i) const { return templates_.at(i); }
  const PromptTemplate* find(const std::string& id) const;
  const PromptTemplate& get(const std::string& id) const;  // throws kReferentialIntegrity

  // Keeps the first m templates.
  PromptRuleBase truncated(std::size_t m) const;

 private:
  std::vector<PromptTemplate> templates_;
};

// Eight built-in reversible templates; "t0" is marker-symmetric.
PromptRuleBase default_rule_base();
PromptRuleBase load_templates(const std::filesystem::path& path);
void save_templates(const PromptRuleBase& rb, const std::filesystem::path& path);

enum class Direction { kForward, kBackward };

// Forward: (entity = head, relation); backward: (relation, entity = tail).
struct Edge {
  int entity = 0;
  int relation = 0;
  Direction direction = Direction::kForward;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// "f|<entity id>|<relation id>" or "b|<entity id>|<relation id>".
std::string edge_key(const Graph& g, const Edge& e);
Edge parse_edge_key(const Graph& g, const std::string& key);  // kParse / kReferentialIntegrity

// Template text for the direction with {REL} replaced by the relation text.
Tokens verbalize(const std::string& relation_text, const PromptTemplate& t, Direction d);
Tokens verbalize(const Graph& g, const Edge& e, const PromptTemplate& t);

// Maps both markers to [HMARK] so forward and backward readings compare.
Tokens canonicalize_markers(Tokens tokens);

// Bare template with {REL} and the marker replaced by [PAD]; `marker_pos`
// receives the former marker position.
Tokens bare_template(const PromptTemplate& t, Direction d, int* marker_pos = nullptr);

struct LabeledSeed {
  std::vector<std::pair<Edge, std::string>> labels;  // (edge, template id)
};

// edge-key<TAB>template-id per line.
LabeledSeed load_seed_labels(const Graph& g, const PromptRuleBase& rb, const std::filesystem::path& path);
void save_seed_labels(const Graph& g, const LabeledSeed& seed, const std::filesystem::path& path);

// Seed labels for a synthetic graph: both readings of a symmetric relation use
// the first (marker-symmetric) template; every other (relation, direction)
// gets the next unused template. `per_type` edges are labeled for each.
LabeledSeed synth_seed_labels(const Graph& g, const SynthSpec& spec, const PromptRuleBase& rb, int per_type,
                              std::uint64_t seed);

// g_theta: mean-pooled token embeddings of (template text with relation,
// entity name), rescaled to unit RMS, then a tanh two-layer perceptron.
struct ExpressionEncoderConfig {
  int out_dim = 16;
  int hidden_dim = 32;
  std::uint64_t seed = 0;
};

class ExpressionEncoder {
 public:
  ExpressionEncoder() = default;
  ExpressionEncoder(int vocab_size, int embed_dim, ExpressionEncoderConfig cfg);

  // Replaces the token table (e.g. a snapshot of the text encoder's).
  void set_token_embeddings(const Eigen::MatrixXd& table);
  const Eigen::MatrixXd& token_embeddings() const { return table_; }
  int out_dim() const { return cfg_.out_dim; }
  const ExpressionEncoderConfig& config() const { return cfg_; }

  Eigen::VectorXd embed_ids(const std::vector<int>& ids) const;
  Eigen::VectorXd embed_expression(const Tokenizer& tok, const Graph& g, const Edge& e, const PromptTemplate& t) const;

  // Serialized MLP weights and table, row-major.
  const Eigen::MatrixXd& w1() const { return w1_; }
  const Eigen::VectorXd& b1() const { return b1_; }
  const Eigen::MatrixXd& w2() const { return w2_; }
  const Eigen::VectorXd& b2() const { return b2_; }
  void set_weights(Eigen::MatrixXd w1, Eigen::VectorXd b1, Eigen::MatrixXd w2, Eigen::VectorXd b2);

 private:
  ExpressionEncoderConfig cfg_;
  Eigen::MatrixXd table_;  // vocab x embed_dim
  Eigen::MatrixXd w1_;     // hidden x embed_dim
  Eigen::VectorXd b1_;
  Eigen::MatrixXd w2_;  // out x hidden
  Eigen::VectorXd b2_;
};

struct GmmState {
  Eigen::MatrixXd means;                 // k x D
  std::vector<Eigen::MatrixXd> covariances;
  Eigen::VectorXd priors;
  std::vector<std::string> component_template;  // template id per component

  int k() const { return static_cast<int>(priors.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
  void validate(double eps_reg) const;  // symmetric, min eigenvalue >= eps_reg (minus rounding), simplex priors
};

inline constexpr double kDefaultEpsReg = 1e-6;

// log(pi_c) + log N(z | mu_c, Sigma_c) for every row of Z (N x D) -> N x k.
Eigen::MatrixXd log_joint(const GmmState& gmm, const Eigen::MatrixXd& Z);

// Posterior over components, computed in log space.
Eigen::VectorXd responsibilities(const GmmState& gmm, const Eigen::VectorXd& z);
Eigen::MatrixXd responsibilities(const GmmState& gmm, const Eigen::MatrixXd& Z);

// Softmax over the given log-densities; invariant to a shared offset.
Eigen::VectorXd responsibilities_from_log(const Eigen::VectorXd& log_dens);

Eigen::VectorXd sharpen(const Eigen::VectorXd& r, double t_sharp);

double log_likelihood(const GmmState& gmm, const Eigen::MatrixXd& Z);

// Responsibility-normalized M-step with eps_reg*I added to every covariance.
// Components whose responsibility mass is below 1e-12 are reseeded on a random
// data point.
GmmState m_step(const GmmState& gmm, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& resp,
                double eps_reg = kDefaultEpsReg, std::mt19937_64* rng = nullptr);

struct EmResult {
  GmmState state;
  std::vector<double> log_likelihood;  // before round 1, then after each round
};

EmResult em_fit(const GmmState& gmm, const Eigen::MatrixXd& Z, int rounds, double t_sharp,
                double eps_reg = kDefaultEpsReg, std::uint64_t seed = 0);

// One component per distinct template id (ordered by id): mean and ML
// covariance of its labeled points plus eps_reg*I, priors from label counts.
GmmState init_gmm_from_points(const std::vector<std::pair<Eigen::VectorXd, std::string>>& points,
                              double eps_reg = kDefaultEpsReg);
GmmState init_gmm_from_seed(const LabeledSeed& seed, const ExpressionEncoder& g_theta, const Tokenizer& tok,
                            const Graph& g, const PromptRuleBase& rb, double eps_reg = kDefaultEpsReg);

// Embeds the edge under every template, keeps the z with the highest mixture
// density, and returns the template of its most responsible component. Ties go
// to the lowest template id.
const PromptTemplate& select_template(const GmmState& gmm, const ExpressionEncoder& g_theta, const Tokenizer& tok,
                                      const Graph& g, const Edge& e, const PromptRuleBase& rb);

}  // namespace bilink
