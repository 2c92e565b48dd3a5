#pragma once
// Scaled cosine scores, template denoising, the three contrastive terms, the
// optimizer, and the epoch loop that alternates encoder updates with EM over
// prompt templates.

#include <Eigen/Core>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bilink/autodiff.hpp"
#include "bilink/encoder.hpp"
#include "bilink/error.hpp"
#include "bilink/graph_store.hpp"
#include "bilink/prompt_engine.hpp"
#include "bilink/tokenizer.hpp"

namespace bilink {

// ---------------------------------------------------------------------------
// Configuration.

struct TrainConfig {
  // optimization
  double lr = 1e-3;
  int warmup_steps = 500;
  double weight_decay = 1e-4;
  int epochs = 30;
  int batch_size = 64;
  std::uint64_t seed = 1;
  std::string precision = "float";  // float | double
  // loss
  double temperature = 0.05;
  double beta = 0.1;
  bool backward_branch = true;  // L2 on/off
  bool share_encoders = false;
  // prompt engine
  double t_sharp = 0.5;
  int em_rounds = 1;  // per epoch; 0 freezes template choices
  int k_clusters = 8;  // templates taken from the rule base
  int g_out_dim = 16;
  int g_hidden = 32;
  double eps_reg = kDefaultEpsReg;
  // encoder
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ffn_dim = 128;
  int max_len = 64;
  double dropout = 0.1;
  int desc_tokens = 64;
  int min_count = 1;
  // evaluation
  int sp2_k = 50;
  double ensemble_w = 0.5;
  bool posthoc = false;
  int workers = 1;
  // entity linking
  int el_soft_prompts = 4;  // per side of the mention span
  int el_candidates = 64;
  int el_context = 32;      // BM25 query window per side
  int el_negatives = 7;     // sampled per mention during training
  int el_batch_size = 16;
  bool el_force_gold = false;

  void validate() const;  // throws kConfiguration
  EncoderConfig encoder_config(int vocab_size) const;
};

// Sets one key from its text value; unknown keys and bad values throw
// kConfiguration naming the key.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

// "key = value" lines; '#' starts a comment.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string to_config_text(const TrainConfig& cfg);

// 64-bit FNV-1a of the canonical config text, as 16 hex digits.
std::string config_hash(const TrainConfig& cfg);

// Raises the glibc mmap threshold so large short-lived matrices reuse heap
// memory instead of being mapped and faulted in on every step. Idempotent.
void tune_allocator();

// ---------------------------------------------------------------------------
// Similarity and losses.

// cos(x, y) / t. Throws kNumericInput on a zero-norm vector.
double cosine_sim(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double t);

// H - h_tau.
Eigen::VectorXd denoise(const Eigen::VectorXd& h, const Eigen::VectorXd& h_tau);

// Rows are batch examples. htau_f / htau_b are the bare-template embeddings of
// each example's forward / backward template.
struct BatchEmbeddings {
  Eigen::MatrixXd hf, hb, tf, tb;
  Eigen::MatrixXd htau_f, htau_b;

  Eigen::Index size() const { return hf.rows(); }
  void validate() const;  // kBatchSize for n < 2, kInputLayout for shape mismatches
};

struct LossReport {
  double l1 = 0, l2 = 0, l3 = 0, total = 0;
  double temperature = 0, beta = 0;
};

// Columns allowed as in-batch candidates per anchor row. Empty means every
// column. Row i always keeps column i.
struct LossMasks {
  Matrix<std::uint8_t> l1, l2;
};

// Excludes j != i from row i when the pair is a known true triple or would
// use the anchor entity as its own negative.
LossMasks negative_masks(const Graph& g, const std::vector<Triple>& batch);

template <typename T>
struct LossVars {
  Var l1, l2, l3, total;
};

// L1 anchors each T_b,i against the denoised forward expressions; L2 anchors
// H_f,i against the denoised backward expressions; L3 = log sum_{i != j}
// exp s(Hb^_i, Tf^_j). total = L1 + [L2] + beta L3.
template <typename T>
LossVars<T> contrastive_loss(Tape<T>& tape, Var hf, Var hb, Var tf, Var tb, Var htau_f, Var htau_b,
                             const LossMasks& masks, T temperature, T beta, bool use_l2) {
  using namespace ad;
  const Eigen::Index n = tape.value(hf).rows();
  if (n < 2) throw Error(ErrorKind::kBatchSize, "contrastive loss needs at least 2 examples, got " + std::to_string(n));
  std::vector<int> diag(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = static_cast<int>(i);
  Var tf_hat = sub(tape, tf, htau_f);
  Var hb_hat = sub(tape, hb, htau_b);
  LossVars<T> out;
  out.l1 = masked_cross_entropy(tape, cosine_matrix(tape, tb, tf_hat, temperature), diag, masks.l1);
  out.l2 = masked_cross_entropy(tape, cosine_matrix(tape, hf, hb_hat, temperature), diag, masks.l2);
  Matrix<std::uint8_t> off = Matrix<std::uint8_t>::Ones(n, n);
  for (Eigen::Index i = 0; i < n; ++i) off(i, i) = 0;
  out.l3 = masked_logsumexp(tape, cosine_matrix(tape, hb_hat, tf_hat, temperature), std::move(off));
  out.total = use_l2 ? add(tape, out.l1, out.l2) : out.l1;
  out.total = add(tape, out.total, scale(tape, out.l3, beta));
  return out;
}

// Combines the reported terms in double so the decomposition is exact.
LossReport make_report(double l1, double l2, double l3, double temperature, double beta, bool use_l2 = true);

// Losses of precomputed embeddings (denoising applied here).
LossReport batch_losses(const BatchEmbeddings& be, double temperature, double beta, const LossMasks& masks = {});

// ---------------------------------------------------------------------------
// Batching and optimization.

// Shuffles 0..n-1 with a generator keyed by (seed, epoch) and cuts it into
// batches; a trailing batch smaller than 2 is dropped.
std::vector<std::vector<int>> make_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch);

// Linear warmup over `warmup` steps (1-based) then linear decay to 0 at
// `total_steps`.
double scheduled_lr(double base, std::int64_t step, int warmup, std::int64_t total_steps);

// Biases and layer-norm parameters are not decayed.
bool decays(const std::string& param_name);

// Adam moments with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<NamedParam<T>> params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : params_(std::move(params)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& [name, p] : params_) {
      m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      decay_.push_back(decays(name));
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    const T a = static_cast<T>(lr / c1), inv_c2 = static_cast<T>(1.0 / c2), eps = static_cast<T>(eps_);
    const T shrink = static_cast<T>(1.0 - lr * wd_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param<T>& p = *params_[i].second;
      if (p.grad.size() != p.value.size()) continue;
      m_[i] = b1 * m_[i] + (1 - b1) * p.grad;
      v_[i] = b2 * v_[i] + (1 - b2) * p.grad.cwiseProduct(p.grad);
      if (lr == 0.0) continue;
      if (decay_[i]) p.value *= shrink;
      p.value.array() -= a * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  std::int64_t steps() const { return t_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<Matrix<T>> m_, v_;
  std::vector<bool> decay_;
  double wd_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Model state.

// Everything a trained link-prediction model needs at evaluation time.
template <typename T>
struct LinkModel {
  TrainConfig cfg;
  Tokenizer tok;
  PromptRuleBase rules;
  Encoder<T> expr;  // relational expressions and bare templates
  Encoder<T> ent;   // entity descriptions; unused when share_encoders
  ExpressionEncoder g_theta;
  std::optional<GmmState> gmm;  // empty: every edge uses the first template

  Encoder<T>& entity_encoder() { return cfg.share_encoders ? expr : ent; }

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> out;
    for (auto& [n, p] : expr.parameters()) out.emplace_back("expr." + n, p);
    if (!cfg.share_encoders)
      for (auto& [n, p] : ent.parameters()) out.emplace_back("ent." + n, p);
    return out;
  }

  // Copies the expression encoder's token table into g_theta.
  void snapshot_token_table() { g_theta.set_token_embeddings(expr.token_embedding().value.template cast<double>()); }

  // Template index chosen for an edge of `g`.
  int template_for(const Graph& g, const Edge& e) const {
    if (!gmm) return 0;
    const PromptTemplate& t = select_template(*gmm, g_theta, tok, g, e, rules);
    for (std::size_t i = 0; i < rules.size(); ++i)
      if (rules.at(i).id == t.id) return static_cast<int>(i);
    throw Error(ErrorKind::kReferentialIntegrity, "selected template " + t.id + " missing from the rule base");
  }

  template <typename U>
  LinkModel<U> cast() const {
    LinkModel<U> out;
    out.cfg = cfg;
    out.tok = tok;
    out.rules = rules;
    out.expr = expr.template cast<U>();
    out.ent = ent.template cast<U>();
    out.g_theta = g_theta;
    out.gmm = gmm;
    return out;
  }
};

// Vocabulary over entity names and descriptions, relation texts and template
// words of `g`.
Tokenizer build_link_tokenizer(const Graph& g, const PromptRuleBase& rules, int min_count);

// Fresh model; `init` (optional) supplies matching tensors, e.g. a
// POS-pretrained encoder over the same vocabulary.
template <typename T>
LinkModel<T> init_link_model(const TrainConfig& cfg, Tokenizer tok, PromptRuleBase rules,
                             const Encoder<double>* init = nullptr) {
  cfg.validate();
  if (static_cast<int>(rules.size()) < cfg.k_clusters)
    throw Error(ErrorKind::kConfiguration, "k_clusters exceeds the rule base size");
  LinkModel<T> m;
  m.cfg = cfg;
  m.tok = std::move(tok);
  m.rules = rules.truncated(static_cast<std::size_t>(cfg.k_clusters));
  const EncoderConfig ec = cfg.encoder_config(m.tok.size());
  Encoder<double> expr(ec, cfg.seed * 2 + 1), ent(ec, cfg.seed * 2 + 2);
  if (init) {
    expr.load_matching(const_cast<Encoder<double>&>(*init));
    ent.load_matching(const_cast<Encoder<double>&>(*init));
  }
  m.expr = expr.template cast<T>();
  m.ent = ent.template cast<T>();
  m.g_theta = ExpressionEncoder(m.tok.size(), cfg.model_dim,
                                ExpressionEncoderConfig{cfg.g_out_dim, cfg.g_hidden, cfg.seed ^ 0x5EEDULL});
  m.snapshot_token_table();
  return m;
}

// Builds framed encoder inputs for one graph, caching prepared descriptions.
class InputBuilder {
 public:
  InputBuilder(const Tokenizer& tok, const Graph& g, const PromptRuleBase& rules, int max_len, int desc_tokens);

  EncoderInput entity(int e) const;
  EncoderInput expression(const Edge& e, int template_index) const;
  EncoderInput bare(int template_index, Direction d) const;

  const Graph& graph() const { return g_; }

 private:
  const Tokenizer& tok_;
  const Graph& g_;
  const PromptRuleBase& rules_;
  int max_len_;
  std::vector<Tokens> desc_;
};

// Pooled eval-mode embeddings of many inputs, encoded in chunks and spread over
// `workers` threads. Row i belongs to inputs[i]; results do not depend on the
// worker count.
template <typename T>
Eigen::MatrixXd encode_pooled(Encoder<T>& enc, const std::vector<EncoderInput>& inputs, int workers,
                              std::size_t chunk = 32);

// ---------------------------------------------------------------------------
// Training loop.

struct EpochLog {
  int epoch = 0;
  LossReport loss;
  double lr = 0;
  std::uint64_t seed = 0;
};

std::string to_json_line(const EpochLog& log);

template <typename T>
class KgTrainer {
 public:
  // `seed_labels` initializes the mixture; without it every edge keeps the
  // first template and EM is skipped. Non-finite losses dump the batch into
  // `diag_dir`.
  KgTrainer(LinkModel<T>& model, const Graph& train_graph, const LabeledSeed* seed_labels = nullptr,
            std::filesystem::path diag_dir = {})
      : model_(model),
        g_(train_graph),
        inputs_(model.tok, train_graph, model.rules, model.cfg.max_len, model.cfg.desc_tokens),
        diag_dir_(std::move(diag_dir)),
        opt_(model.parameters(), model.cfg.weight_decay),
        dropout_rng_(model.cfg.seed ^ 0xD40F0FULL) {
    tune_allocator();
    if (g_.triple_count() < 2) throw Error(ErrorKind::kBatchSize, "training needs at least 2 triples");
    const int R = static_cast<int>(g_.relation_count());
    fwd_sel_.assign(g_.entity_count() * static_cast<std::size_t>(R), 0);
    bwd_sel_.assign(g_.entity_count() * static_cast<std::size_t>(R), 0);
    std::set<std::pair<int, int>> fwd, bwd;
    for (const Triple& t : g_.triples()) {
      fwd.emplace(t.head, t.relation);
      bwd.emplace(t.tail, t.relation);
    }
    for (auto [e, r] : fwd) edges_.push_back(Edge{e, r, Direction::kForward});
    for (auto [e, r] : bwd) edges_.push_back(Edge{e, r, Direction::kBackward});
    if (seed_labels && !seed_labels->labels.empty() && model_.cfg.k_clusters > 1) {
      model_.snapshot_token_table();
      model_.gmm = init_gmm_from_seed(*seed_labels, model_.g_theta, model_.tok, g_, model_.rules, model_.cfg.eps_reg);
    }
    reselect();
    const auto per_epoch = static_cast<std::int64_t>(
        make_batches(g_.triple_count(), model_.cfg.batch_size, model_.cfg.seed, 0).size());
    total_steps_ = per_epoch * model_.cfg.epochs;
  }

  // One pass over shuffled batches followed by the EM round.
  EpochLog train_epoch(int epoch) {
    const TrainConfig& cfg = model_.cfg;
    const auto batches = make_batches(g_.triple_count(), cfg.batch_size, cfg.seed, epoch);
    double s1 = 0, s2 = 0, s3 = 0;
    double lr = 0;
    for (const auto& batch : batches) {
      std::vector<Triple> triples;
      for (int i : batch) triples.push_back(g_.triple(i));
      const LossReport r = step(triples, epoch, &lr);
      s1 += r.l1;
      s2 += r.l2;
      s3 += r.l3;
    }
    const double nb = static_cast<double>(batches.size());
    EpochLog log;
    log.epoch = epoch;
    log.loss = make_report(s1 / nb, s2 / nb, s3 / nb, cfg.temperature, cfg.beta, cfg.backward_branch);
    log.lr = lr;
    log.seed = cfg.seed;
    em_round(epoch);
    return log;
  }

  // Runs cfg.epochs epochs, writing one JSON line per epoch to `log`.
  std::vector<EpochLog> run(std::ostream* log = nullptr) {
    std::vector<EpochLog> logs;
    for (int e = 0; e < model_.cfg.epochs; ++e) {
      logs.push_back(train_epoch(e));
      if (log) (*log) << to_json_line(logs.back()) << '\n' << std::flush;
      spdlog::info("epoch {} L={:.5f} L1={:.5f} L2={:.5f} L3={:.5f}", e, logs.back().loss.total, logs.back().loss.l1,
                   logs.back().loss.l2, logs.back().loss.l3);
    }
    return logs;
  }

  // Loss and gradients of one batch; parameters are updated with `lr_out`
  // receiving the rate used. Public for tests.
  LossReport step(const std::vector<Triple>& triples, int epoch, double* lr_out = nullptr) {
    const TrainConfig& cfg = model_.cfg;
    for (auto& [name, p] : opt_.params()) p->zero_grad();
    Tape<T> tape(true);
    const LossVars<T> lv = batch_graph(tape, triples, &dropout_rng_);
    const double l1 = tape.scalar(lv.l1), l2 = tape.scalar(lv.l2), l3 = tape.scalar(lv.l3);
    const double total = tape.scalar(lv.total);
    if (!std::isfinite(l1) || !std::isfinite(l2) || !std::isfinite(l3) || !std::isfinite(total)) {
      const std::string path = dump_batch(triples, epoch, l1, l2, l3);
      throw Error(ErrorKind::kNonFiniteLoss, "non-finite loss at step " + std::to_string(opt_.steps() + 1) +
                                                 "; batch written to " + path);
    }
    tape.backward(lv.total);
    const double lr = scheduled_lr(cfg.lr, opt_.steps() + 1, cfg.warmup_steps, total_steps_);
    opt_.step(lr);
    if (lr_out) *lr_out = lr;
    return make_report(l1, l2, l3, cfg.temperature, cfg.beta, cfg.backward_branch);
  }

  // Builds the loss of a batch on `tape` under the current template choices.
  LossVars<T> batch_graph(Tape<T>& tape, const std::vector<Triple>& triples, std::mt19937_64* rng) {
    const TrainConfig& cfg = model_.cfg;
    const auto n = triples.size();
    std::vector<EncoderInput> expr_in;
    std::vector<int> tf_tau(n), tb_tau(n);
    std::map<std::pair<int, int>, int> bare_slot;  // (template, direction) -> bare row
    std::vector<std::pair<int, Direction>> bares;
    auto bare_row = [&](int tmpl, Direction d) {
      auto key = std::make_pair(tmpl, static_cast<int>(d));
      auto it = bare_slot.find(key);
      if (it != bare_slot.end()) return it->second;
      const int row = static_cast<int>(bares.size());
      bares.emplace_back(tmpl, d);
      bare_slot.emplace(key, row);
      return row;
    };
    for (std::size_t i = 0; i < n; ++i) {
      const Triple& t = triples[i];
      const int ft = forward_template(t.head, t.relation);
      expr_in.push_back(inputs_.expression(Edge{t.head, t.relation, Direction::kForward}, ft));
      tf_tau[i] = bare_row(ft, Direction::kForward);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Triple& t = triples[i];
      const int bt = backward_template(t.tail, t.relation);
      expr_in.push_back(inputs_.expression(Edge{t.tail, t.relation, Direction::kBackward}, bt));
      tb_tau[i] = bare_row(bt, Direction::kBackward);
    }
    const int bare_start = static_cast<int>(expr_in.size());
    for (auto [tmpl, d] : bares) expr_in.push_back(inputs_.bare(tmpl, d));

    // Each distinct entity is encoded once per batch.
    std::map<int, int> ent_slot;
    std::vector<EncoderInput> ent_in;
    std::vector<int> hf_rows(n), tb_rows(n);
    auto ent_row = [&](int e) {
      auto it = ent_slot.find(e);
      if (it != ent_slot.end()) return it->second;
      const int row = static_cast<int>(ent_in.size());
      ent_in.push_back(inputs_.entity(e));
      ent_slot.emplace(e, row);
      return row;
    };
    for (std::size_t i = 0; i < n; ++i) {
      hf_rows[i] = ent_row(triples[i].head);
      tb_rows[i] = ent_row(triples[i].tail);
    }

    using namespace ad;
    Var expr_pooled, ent_pooled;
    int ent_offset = 0;
    if (cfg.share_encoders) {
      ent_offset = static_cast<int>(expr_in.size());
      expr_in.insert(expr_in.end(), ent_in.begin(), ent_in.end());
      EncoderGraph<T> eg(tape, model_.expr, rng);
      expr_pooled = eg.encode_batch(expr_in).pooled;
      ent_pooled = expr_pooled;
    } else {
      EncoderGraph<T> eg(tape, model_.expr, rng);
      expr_pooled = eg.encode_batch(expr_in).pooled;
      EncoderGraph<T> ng(tape, model_.ent, rng);
      ent_pooled = ng.encode_batch(ent_in).pooled;
    }
    auto rows = [](int start, std::size_t count) {
      std::vector<int> r(count);
      for (std::size_t i = 0; i < count; ++i) r[i] = start + static_cast<int>(i);
      return r;
    };
    auto shifted = [](std::vector<int> r, int by) {
      for (int& x : r) x += by;
      return r;
    };
    Var tf = gather_rows(tape, expr_pooled, rows(0, n));
    Var hb = gather_rows(tape, expr_pooled, rows(static_cast<int>(n), n));
    Var htf = gather_rows(tape, expr_pooled, shifted(tf_tau, bare_start));
    Var htb = gather_rows(tape, expr_pooled, shifted(tb_tau, bare_start));
    Var hf = gather_rows(tape, ent_pooled, shifted(hf_rows, ent_offset));
    Var tb = gather_rows(tape, ent_pooled, shifted(tb_rows, ent_offset));
    const LossMasks masks = negative_masks(g_, triples);
    return contrastive_loss(tape, hf, hb, tf, tb, htf, htb, masks, static_cast<T>(cfg.temperature),
                            static_cast<T>(cfg.beta), cfg.backward_branch);
  }

  // Refits the mixture on the current expression embeddings and reselects
  // every training edge's template.
  void em_round(int epoch) {
    if (!model_.gmm || model_.cfg.em_rounds <= 0) return;
    model_.snapshot_token_table();
    Eigen::MatrixXd Z(static_cast<Eigen::Index>(edges_.size()), model_.g_theta.out_dim());
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      const Edge& e = edges_[i];
      const int tmpl = e.direction == Direction::kForward ? forward_template(e.entity, e.relation)
                                                          : backward_template(e.entity, e.relation);
      Z.row(static_cast<Eigen::Index>(i)) =
          model_.g_theta.embed_expression(model_.tok, g_, e, model_.rules.at(static_cast<std::size_t>(tmpl)))
              .transpose();
    }
    EmResult fit = em_fit(*model_.gmm, Z, model_.cfg.em_rounds, model_.cfg.t_sharp, model_.cfg.eps_reg,
                          model_.cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    model_.gmm = std::move(fit.state);
    spdlog::debug("em epoch {} log-likelihood {:.4f} -> {:.4f}", epoch, fit.log_likelihood.front(),
                  fit.log_likelihood.back());
    reselect();
  }

  int forward_template(int entity, int relation) const { return fwd_sel_[slot(entity, relation)]; }
  int backward_template(int entity, int relation) const { return bwd_sel_[slot(entity, relation)]; }
  std::int64_t steps() const { return opt_.steps(); }
  std::int64_t total_steps() const { return total_steps_; }
  const InputBuilder& inputs() const { return inputs_; }

 private:
  std::size_t slot(int entity, int relation) const {
    return static_cast<std::size_t>(entity) * g_.relation_count() + static_cast<std::size_t>(relation);
  }

  void reselect() {
    for (const Edge& e : edges_) {
      const int t = model_.template_for(g_, e);
      (e.direction == Direction::kForward ? fwd_sel_ : bwd_sel_)[slot(e.entity, e.relation)] = t;
    }
  }

  std::string dump_batch(const std::vector<Triple>& triples, int epoch, double l1, double l2, double l3) const;

  LinkModel<T>& model_;
  const Graph& g_;
  InputBuilder inputs_;
  std::filesystem::path diag_dir_;
  AdamW<T> opt_;
  std::mt19937_64 dropout_rng_;
  std::vector<Edge> edges_;
  std::vector<int> fwd_sel_, bwd_sel_;
  std::int64_t total_steps_ = 0;
};

// Writes the offending batch as JSON; returns the file path.
std::string write_batch_dump(const std::filesystem::path& dir, const Graph& g, const std::vector<Triple>& triples,
                             int epoch, std::int64_t step, double l1, double l2, double l3);

template <typename T>
std::string KgTrainer<T>::dump_batch(const std::vector<Triple>& triples, int epoch, double l1, double l2,
                                     double l3) const {
  return write_batch_dump(diag_dir_, g_, triples, epoch, opt_.steps() + 1, l1, l2, l3);
}

extern template class KgTrainer<float>;
extern template class KgTrainer<double>;
extern template Eigen::MatrixXd encode_pooled<float>(Encoder<float>&, const std::vector<EncoderInput>&, int,
                                                      std::size_t);
extern template Eigen::MatrixXd encode_pooled<double>(Encoder<double>&, const std::vector<EncoderInput>&, int,
                                                       std::size_t);

}  // namespace bilink
