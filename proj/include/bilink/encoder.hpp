#pragma once
// Small pre-norm transformer text encoder with marker/CLS pooling and an
// optional part-of-speech head. All math is templated on the scalar type so
// the same model runs in double (reference, gradient checks) and float.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bilink/autodiff.hpp"
#include "bilink/error.hpp"
#include "bilink/tokenizer.hpp"

namespace bilink {

using ad::Matrix;
using ad::Param;
using ad::Tape;
using ad::Var;

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ffn_dim = 128;
  int max_len = 64;
  double dropout = 0.1;
  int pos_tags = 0;      // 0 disables the POS head
  int soft_prompts = 0;  // rows in the soft prompt bank
  int vocab_size = 0;

  void validate() const;
};

enum class PoolingSite { kCls, kHeadMarker, kTailMarker };

std::string_view to_string(PoolingSite site);

// A framed encoder input. Positions listed in `soft_prompt` (row index into the
// soft prompt bank, -1 elsewhere) get that vector added to their embedding.
struct EncoderInput {
  std::vector<int> ids;
  std::vector<int> soft_prompt;
  std::vector<std::uint8_t> mask;
  int pool_index = 0;
  PoolingSite site = PoolingSite::kCls;

  std::size_t length() const { return ids.size(); }
};

// [CLS] expression [SEP] description [SEP], pooled at the single marker inside
// the expression. Throws kInputLayout if the marker is missing or repeated or
// the framed length exceeds max_len.
EncoderInput expression_input(const Tokenizer& tok, const Tokens& expression, const Tokens& description, int max_len);

// [CLS] description [SEP], pooled at [CLS].
EncoderInput entity_input(const Tokenizer& tok, const Tokens& description, int max_len);

// [CLS] tokens [SEP] pooled at `pool_index` (an index into `tokens`).
EncoderInput sequence_input(const Tokenizer& tok, const Tokens& tokens, int pool_index, PoolingSite site, int max_len);

// Appends masked [PAD] positions up to `length`.
EncoderInput pad_to(EncoderInput in, std::size_t length);

template <typename T>
using NamedParam = std::pair<std::string, Param<T>*>;

template <typename T>
struct LayerParams {
  Param<T> ln1_gain, ln1_bias;
  Param<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Param<T> ln2_gain, ln2_bias;
  Param<T> w1, b1, w2, b2;
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;

  Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    auto init = [&](Param<T>& p, int r, int c) {
      p.value.resize(r, c);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(normal(rng));
      p.zero_grad();
    };
    auto fill = [](Param<T>& p, int r, int c, T v) {
      p.value = Matrix<T>::Constant(r, c, v);
      p.zero_grad();
    };
    const int d = cfg_.model_dim;
    init(token_embedding_, cfg_.vocab_size, d);
    init(position_embedding_, cfg_.max_len, d);
    layers_.resize(static_cast<std::size_t>(cfg_.layers));
    for (auto& l : layers_) {
      fill(l.ln1_gain, 1, d, 1);
      fill(l.ln1_bias, 1, d, 0);
      init(l.wq, d, d);
      fill(l.bq, 1, d, 0);
      init(l.wk, d, d);
      fill(l.bk, 1, d, 0);
      init(l.wv, d, d);
      fill(l.bv, 1, d, 0);
      init(l.wo, d, d);
      fill(l.bo, 1, d, 0);
      fill(l.ln2_gain, 1, d, 1);
      fill(l.ln2_bias, 1, d, 0);
      init(l.w1, d, cfg_.ffn_dim);
      fill(l.b1, 1, cfg_.ffn_dim, 0);
      init(l.w2, cfg_.ffn_dim, d);
      fill(l.b2, 1, d, 0);
    }
    fill(final_gain_, 1, d, 1);
    fill(final_bias_, 1, d, 0);
    if (cfg_.pos_tags > 0) {
      init(pos_weight_, d, cfg_.pos_tags);
      fill(pos_bias_, 1, cfg_.pos_tags, 0);
    }
    if (cfg_.soft_prompts > 0) init(soft_prompt_, cfg_.soft_prompts, d);
  }

  const EncoderConfig& config() const { return cfg_; }

  // Stable names; the order here is the checkpoint order.
  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> out;
    out.emplace_back("embeddings.token", &token_embedding_);
    out.emplace_back("embeddings.position", &position_embedding_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      out.emplace_back(p + "ln1.gain", &l.ln1_gain);
      out.emplace_back(p + "ln1.bias", &l.ln1_bias);
      out.emplace_back(p + "attention.wq", &l.wq);
      out.emplace_back(p + "attention.bq", &l.bq);
      out.emplace_back(p + "attention.wk", &l.wk);
      out.emplace_back(p + "attention.bk", &l.bk);
      out.emplace_back(p + "attention.wv", &l.wv);
      out.emplace_back(p + "attention.bv", &l.bv);
      out.emplace_back(p + "attention.wo", &l.wo);
      out.emplace_back(p + "attention.bo", &l.bo);
      out.emplace_back(p + "ln2.gain", &l.ln2_gain);
      out.emplace_back(p + "ln2.bias", &l.ln2_bias);
      out.emplace_back(p + "ffn.w1", &l.w1);
      out.emplace_back(p + "ffn.b1", &l.b1);
      out.emplace_back(p + "ffn.w2", &l.w2);
      out.emplace_back(p + "ffn.b2", &l.b2);
    }
    out.emplace_back("final_ln.gain", &final_gain_);
    out.emplace_back("final_ln.bias", &final_bias_);
    if (cfg_.pos_tags > 0) {
      out.emplace_back("pos_head.weight", &pos_weight_);
      out.emplace_back("pos_head.bias", &pos_bias_);
    }
    if (cfg_.soft_prompts > 0) out.emplace_back("soft_prompts", &soft_prompt_);
    return out;
  }

  void zero_grad() {
    for (auto& [name, p] : parameters()) p->zero_grad();
  }

  Param<T>& token_embedding() { return token_embedding_; }
  Param<T>& position_embedding() { return position_embedding_; }
  Param<T>& soft_prompt_bank() { return soft_prompt_; }
  Param<T>& pos_weight() { return pos_weight_; }
  Param<T>& pos_bias() { return pos_bias_; }

  // Same architecture and values in another scalar type.
  template <typename U>
  Encoder<U> cast() const {
    Encoder<U> out;
    out.cfg_ = cfg_;
    auto src = const_cast<Encoder*>(this)->parameters();
    out.layers_.resize(layers_.size());
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i].second->value = src[i].second->value.template cast<U>();
      dst[i].second->zero_grad();
    }
    return out;
  }

  // Copies every tensor whose name and shape match `other` (e.g. a pretrained
  // encoder with a POS head into one without). Returns the count copied.
  int load_matching(Encoder& other) {
    int copied = 0;
    auto theirs = other.parameters();
    for (auto& [name, p] : parameters())
      for (auto& [oname, op] : theirs)
        if (name == oname && p->value.rows() == op->value.rows() && p->value.cols() == op->value.cols()) {
          p->value = op->value;
          ++copied;
        }
    return copied;
  }

 private:
  template <typename U>
  friend class Encoder;

  EncoderConfig cfg_;
  Param<T> token_embedding_, position_embedding_;
  std::vector<LayerParams<T>> layers_;
  Param<T> final_gain_, final_bias_;
  Param<T> pos_weight_, pos_bias_;
  Param<T> soft_prompt_;

  template <typename U>
  friend class EncoderGraph;
};

template <typename T>
struct EncodedVars {
  Var states;  // length x model_dim
  Var pooled;  // 1 x model_dim
};

// Binds an encoder's parameters to a tape once and encodes any number of
// inputs on it. Pass a dropout RNG for training mode; without one the forward
// pass is deterministic (eval mode).
template <typename T>
class EncoderGraph {
 public:
  EncoderGraph(Tape<T>& tape, Encoder<T>& enc, std::mt19937_64* dropout_rng = nullptr)
      : tape_(tape), enc_(enc), rng_(dropout_rng) {
    token_ = tape.leaf(enc.token_embedding_);
    position_ = tape.leaf(enc.position_embedding_);
    for (auto& l : enc.layers_) {
      layers_.push_back(BoundLayer{tape.leaf(l.ln1_gain), tape.leaf(l.ln1_bias), tape.leaf(l.wq), tape.leaf(l.bq),
                                   tape.leaf(l.wk), tape.leaf(l.bk), tape.leaf(l.wv), tape.leaf(l.bv),
                                   tape.leaf(l.wo), tape.leaf(l.bo), tape.leaf(l.ln2_gain), tape.leaf(l.ln2_bias),
                                   tape.leaf(l.w1), tape.leaf(l.b1), tape.leaf(l.w2), tape.leaf(l.b2)});
    }
    final_gain_ = tape.leaf(enc.final_gain_);
    final_bias_ = tape.leaf(enc.final_bias_);
    if (enc.cfg_.pos_tags > 0) {
      pos_weight_ = tape.leaf(enc.pos_weight_);
      pos_bias_ = tape.leaf(enc.pos_bias_);
    }
    if (enc.cfg_.soft_prompts > 0) soft_ = tape.leaf(enc.soft_prompt_);
  }

  EncodedVars<T> encode(const EncoderInput& in) {
    EncodedBatch b = encode_batch({in});
    return EncodedVars<T>{b.states, b.pooled};
  }

  // Encodes several inputs stacked row-wise: linear layers run once over all
  // rows, attention stays within each input. `pooled` row i is input i's
  // state at its pooling index.
  struct EncodedBatch {
    Var states;                       // total_rows x model_dim
    Var pooled;                       // inputs x model_dim
    std::vector<ad::Segment> segments;
  };

  EncodedBatch encode_batch(const std::vector<EncoderInput>& inputs) {
    const EncoderConfig& cfg = enc_.cfg_;
    if (inputs.empty()) throw Error(ErrorKind::kInputLayout, "empty encoder batch");
    std::vector<int> ids, soft, positions, pool_rows;
    std::vector<std::uint8_t> mask;
    std::vector<ad::Segment> segments;
    bool any_soft = false;
    for (const EncoderInput& in : inputs) {
      const auto n = static_cast<int>(in.length());
      if (n == 0 || n > cfg.max_len)
        throw Error(ErrorKind::kInputLayout, "encoder input length " + std::to_string(n) + " outside [1, " +
                                                 std::to_string(cfg.max_len) + "]");
      if (in.pool_index < 0 || in.pool_index >= n) throw Error(ErrorKind::kInputLayout, "pooling index out of range");
      if (!in.mask.empty() && in.mask.size() != in.ids.size())
        throw Error(ErrorKind::kInputLayout, "attention mask length differs from input length");
      if (!in.soft_prompt.empty() && in.soft_prompt.size() != in.ids.size())
        throw Error(ErrorKind::kInputLayout, "soft prompt slots differ from input length");
      const auto start = static_cast<Eigen::Index>(ids.size());
      segments.push_back({start, n});
      pool_rows.push_back(static_cast<int>(start) + in.pool_index);
      for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        ids.push_back(in.ids[ui]);
        positions.push_back(i);
        mask.push_back(in.mask.empty() ? 1 : in.mask[ui]);
        const int sp = in.soft_prompt.empty() ? -1 : in.soft_prompt[ui];
        if (sp >= cfg.soft_prompts) throw Error(ErrorKind::kInputLayout, "soft prompt slot outside the bank");
        any_soft = any_soft || sp >= 0;
        soft.push_back(sp);
      }
    }
    for (int id : ids)
      if (id < 0 || id >= cfg.vocab_size) throw Error(ErrorKind::kInputLayout, "token id outside the vocabulary");
    using namespace ad;
    Var x = gather_rows(tape_, token_, std::move(ids));
    if (any_soft) x = add(tape_, x, gather_rows(tape_, soft_, std::move(soft)));
    x = add(tape_, x, gather_rows(tape_, position_, std::move(positions)));
    x = drop(x);
    for (const BoundLayer& l : layers_) {
      Var h = layer_norm(tape_, x, l.ln1_gain, l.ln1_bias);
      Var q = linear(tape_, h, l.wq, l.bq);
      Var k = linear(tape_, h, l.wk, l.bk);
      Var v = linear(tape_, h, l.wv, l.bv);
      Var attn = multi_head_attention(tape_, q, k, v, segments, cfg.heads, std::span<const std::uint8_t>(mask));
      x = add(tape_, x, drop(linear(tape_, attn, l.wo, l.bo)));
      Var h2 = layer_norm(tape_, x, l.ln2_gain, l.ln2_bias);
      Var f = linear(tape_, gelu(tape_, linear(tape_, h2, l.w1, l.b1)), l.w2, l.b2);
      x = add(tape_, x, drop(f));
    }
    x = layer_norm(tape_, x, final_gain_, final_bias_);
    Var pooled = gather_rows(tape_, x, std::move(pool_rows));
    return EncodedBatch{x, pooled, std::move(segments)};
  }

  // Token-level POS logits over the final states.
  Var pos_logits(Var states) {
    if (!pos_weight_.valid()) throw Error(ErrorKind::kConfiguration, "encoder has no POS head");
    return ad::linear(tape_, states, pos_weight_, pos_bias_);
  }

 private:
  struct BoundLayer {
    Var ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  Var drop(Var v) {
    if (!rng_) return v;
    return ad::dropout(tape_, v, static_cast<T>(enc_.cfg_.dropout), *rng_);
  }

  Tape<T>& tape_;
  Encoder<T>& enc_;
  std::mt19937_64* rng_;
  Var token_, position_, final_gain_, final_bias_, pos_weight_, pos_bias_, soft_;
  std::vector<BoundLayer> layers_;
};

template <typename T>
struct PooledOutput {
  Eigen::Matrix<T, Eigen::Dynamic, 1> pooled;
  PoolingSite site = PoolingSite::kCls;
  Matrix<T> states;
};

// Eval-mode encoding of one input.
template <typename T>
PooledOutput<T> encode(Encoder<T>& enc, const EncoderInput& in) {
  Tape<T> tape(false);
  EncoderGraph<T> graph(tape, enc);
  EncodedVars<T> out = graph.encode(in);
  PooledOutput<T> result;
  result.states = tape.value(out.states);
  result.pooled = result.states.row(in.pool_index).transpose();
  result.site = in.site;
  return result;
}

// ---------------------------------------------------------------------------
// POS pretraining.

struct TaggedSentence {
  Tokens tokens;
  std::vector<int> tags;
};

struct TaggedCorpus {
  std::vector<std::string> tags;  // sorted; tag ids index this
  std::vector<TaggedSentence> sentences;
};

// One sentence per line of whitespace-separated "word/TAG" items. Throws
// kParse for an item without a tag.
TaggedCorpus parse_tagged_corpus(const std::vector<std::string>& lines);

template <typename T>
struct StepResult {
  T loss = 0;
  std::vector<std::pair<std::string, Matrix<T>>> gradients;
};

// Mean token-level cross-entropy of the POS head over non-pad positions. The
// gradients are also left in each parameter's grad field.
template <typename T>
StepResult<T> pos_pretrain_step(Encoder<T>& enc, const Tokenizer& tok, const std::vector<TaggedSentence>& batch,
                                std::mt19937_64* dropout_rng = nullptr) {
  const EncoderConfig& cfg = enc.config();
  if (cfg.pos_tags <= 0) throw Error(ErrorKind::kConfiguration, "pos pretraining needs pos_tags > 0");
  enc.zero_grad();
  Tape<T> tape(true);
  EncoderGraph<T> graph(tape, enc, dropout_rng);
  std::vector<EncoderInput> inputs;
  std::vector<int> targets;
  for (const TaggedSentence& s : batch) {
    if (s.tags.size() != s.tokens.size()) throw Error(ErrorKind::kData, "tag count does not match token count");
    for (int t : s.tags)
      if (t < 0 || t >= cfg.pos_tags) throw Error(ErrorKind::kData, "tag id " + std::to_string(t) + " out of range");
    if (s.tokens.empty()) continue;
    inputs.push_back(sequence_input(tok, s.tokens, 0, PoolingSite::kCls, cfg.max_len));
    targets.push_back(-1);  // [CLS]
    targets.insert(targets.end(), s.tags.begin(), s.tags.end());
    targets.push_back(-1);  // [SEP]
  }
  StepResult<T> result;
  if (!inputs.empty()) {
    auto encoded = graph.encode_batch(inputs);
    Var loss = ad::masked_cross_entropy(tape, graph.pos_logits(encoded.states), targets);
    result.loss = tape.scalar(loss);
    if (tape.requires_grad(loss)) tape.backward(loss);
  }
  for (auto& [name, p] : enc.parameters()) result.gradients.emplace_back(name, p->grad);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient checking.

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::vector<std::pair<std::string, double>> per_group;
};

// Groups of parameters checked together; each group is sampled independently.
template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<Param<T>*> params;
};

struct GradCheckOptions {
  double eps = 1e-5;
  int samples_per_group = 200;
  std::uint64_t seed = 1;
  // Denominator floor for the relative error. Central differences of an O(1)
  // loss at eps 1e-5 carry ~1e-11 of rounding noise, so coordinates whose
  // exact gradient is ~0 would otherwise report that noise as O(1) error.
  double floor = 1e-4;
  // 2: central difference, O(eps^2). 4: five-point stencil, O(eps^4).
  int stencil = 2;
};

double relative_error(double analytic, double numeric, double floor);

// Compares each param's current grad (the analytic gradient) with central
// differences of `loss` at sampled coordinates.
template <typename T>
GradCheckReport grad_check(const std::function<T()>& loss, const std::vector<ParamGroup<T>>& groups,
                           const GradCheckOptions& opt) {
  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (const ParamGroup<T>& g : groups) {
    std::vector<std::pair<Param<T>*, Eigen::Index>> coords;
    for (Param<T>* p : g.params)
      for (Eigen::Index i = 0; i < p->size(); ++i) coords.emplace_back(p, i);
    if (static_cast<int>(coords.size()) > opt.samples_per_group) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opt.samples_per_group));
    }
    double worst = 0.0;
    for (auto [p, i] : coords) {
      T& slot = p->value.data()[i];
      const T saved = slot;
      auto at = [&](double step) {
        slot = static_cast<T>(saved + step);
        const double v = static_cast<double>(loss());
        slot = saved;
        return v;
      };
      double numeric = 0.0;
      if (opt.stencil == 4) {
        numeric = (8.0 * (at(opt.eps) - at(-opt.eps)) - (at(2 * opt.eps) - at(-2 * opt.eps))) / (12.0 * opt.eps);
      } else {
        numeric = (at(opt.eps) - at(-opt.eps)) / (2.0 * opt.eps);
      }
      const double analytic = static_cast<double>(p->grad.data()[i]);
      worst = std::max(worst, relative_error(analytic, numeric, opt.floor));
      ++report.coordinates;
    }
    report.per_group.emplace_back(g.name, worst);
    report.max_relative_error = std::max(report.max_relative_error, worst);
  }
  return report;
}

// Checks grouped by tensor role: embeddings, per-layer attention, per-layer
// feed-forward, all layer norms, and the optional heads.
template <typename T>
std::vector<ParamGroup<T>> encoder_param_groups(Encoder<T>& enc, const std::string& prefix) {
  std::vector<ParamGroup<T>> groups;
  auto find = [&](const std::string& key) -> ParamGroup<T>& {
    for (auto& g : groups)
      if (g.name == prefix + key) return g;
    groups.push_back(ParamGroup<T>{prefix + key, {}});
    return groups.back();
  };
  for (auto& [name, p] : enc.parameters()) {
    std::string key;
    if (name.rfind("embeddings.", 0) == 0) key = "embeddings";
    else if (name.find(".ln") != std::string::npos || name.rfind("final_ln", 0) == 0) key = "norms";
    else if (name.find("attention") != std::string::npos) key = name.substr(0, name.find('.')) + ".attention";
    else if (name.find("ffn") != std::string::npos) key = name.substr(0, name.find('.')) + ".ffn";
    else if (name.rfind("pos_head", 0) == 0) key = "pos_head";
    else key = name;
    find(key).params.push_back(p);
  }
  return groups;
}

}  // namespace bilink
