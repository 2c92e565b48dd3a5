#include <doctest.h>

#include <cmath>
#include <random>

#include "bilink/contrastive_trainer.hpp"
#include "bilink/encoder.hpp"
#include "bilink/error.hpp"
#include "test_support.hpp"

using namespace bilink;

namespace {

Tokenizer letters_tokenizer() {
  std::vector<Tokens> corpus;
  for (char c = 'a'; c <= 'z'; ++c) corpus.push_back({std::string(1, c)});
  return Tokenizer::build(corpus, 1);
}

EncoderConfig small_config(int vocab) {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 32;
  c.ffn_dim = 48;
  c.max_len = 24;
  c.dropout = 0.0;
  c.vocab_size = vocab;
  return c;
}

Tokens random_tokens(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> letter(0, 25);
  Tokens t;
  for (int i = 0; i < n; ++i) t.push_back(std::string(1, static_cast<char>('a' + letter(rng))));
  return t;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kPrecondition;
}

}  // namespace

TEST_CASE("build_vocab applies the count threshold") {
  const Tokenizer tok = Tokenizer::build({tokenize("a a b")}, 2);
  CHECK(tok.contains("a"));
  CHECK_FALSE(tok.contains("b"));
  CHECK(tok.id("b") == kUnkId);
}

TEST_CASE("build_vocab is deterministic and orders by count then token") {
  const std::vector<Tokens> corpus = {tokenize("z y y x x x"), tokenize("w z")};
  const Tokenizer a = Tokenizer::build(corpus, 1), b = Tokenizer::build(corpus, 1);
  CHECK(a.vocabulary() == b.vocabulary());
  const std::vector<std::string> tail(a.vocabulary().begin() + 6, a.vocabulary().end());
  CHECK(tail == std::vector<std::string>{"x", "y", "z", "w"});
}

TEST_CASE("build_vocab counts distinct tokens plus the specials") {
  const Tokenizer tok = Tokenizer::build({tokenize("p q r")}, 1);
  CHECK(tok.size() == 9);
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i)
    CHECK(tok.id(kSpecialTokens[i]) == static_cast<int>(i));
}

TEST_CASE("build_vocab rejects an empty corpus") {
  CHECK(kind_of([] { Tokenizer::build({}, 1); }) == ErrorKind::kConfiguration);
}

TEST_CASE("from_vocabulary restores ids") {
  const Tokenizer tok = Tokenizer::build({tokenize("the cat sat on the mat")}, 1);
  const Tokenizer back = Tokenizer::from_vocabulary(tok.vocabulary());
  CHECK(back.vocabulary() == tok.vocabulary());
  CHECK(back.id("cat") == tok.id("cat"));
}

TEST_CASE("tokenize lowercases and splits punctuation") {
  CHECK(tokenize("Barack Obama (politician)") == Tokens{"barack", "obama", "(", "politician", ")"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("a,b") == Tokens{"a", ",", "b"});
  CHECK(tokenize("x [HMARK] y") == Tokens{"x", "[HMARK]", "y"});
  CHECK(detokenize(tokenize("Hello,  World")) == "hello , world");
}

TEST_CASE("parse_tagged_corpus reads word/TAG items") {
  const TaggedCorpus c = parse_tagged_corpus({"The/DT cat/NN sat/VB", "dogs/NN bark/VB"});
  CHECK(c.tags == std::vector<std::string>{"DT", "NN", "VB"});
  REQUIRE(c.sentences.size() == 2);
  CHECK(c.sentences[0].tokens == Tokens{"the", "cat", "sat"});
  CHECK(c.sentences[0].tags == std::vector<int>{0, 1, 2});
  CHECK(kind_of([] { parse_tagged_corpus({"cat"}); }) == ErrorKind::kParse);
  CHECK(kind_of([] { parse_tagged_corpus({"big,cat/NN"}); }) == ErrorKind::kParse);
}

TEST_CASE("input layouts") {
  const Tokenizer tok = Tokenizer::build({tokenize("x y d e")}, 1);
  const EncoderInput ex = expression_input(tok, {"x", "[TMARK]", "y"}, {"d", "e"}, 16);
  CHECK(ex.ids == std::vector<int>{kClsId, tok.id("x"), kTailMarkerId, tok.id("y"), kSepId, tok.id("d"),
                                   tok.id("e"), kSepId});
  CHECK(ex.pool_index == 2);
  CHECK(ex.site == PoolingSite::kTailMarker);
  const EncoderInput en = entity_input(tok, {"d", "e"}, 16);
  CHECK(en.ids == std::vector<int>{kClsId, tok.id("d"), tok.id("e"), kSepId});
  CHECK(en.pool_index == 0);
  CHECK(kind_of([&] { expression_input(tok, {"x", "y"}, {"d"}, 16); }) == ErrorKind::kInputLayout);
  CHECK(kind_of([&] { expression_input(tok, {"[HMARK]", "[TMARK]"}, {"d"}, 16); }) == ErrorKind::kInputLayout);
  CHECK(kind_of([&] { entity_input(tok, Tokens(20, "d"), 16); }) == ErrorKind::kInputLayout);
}

TEST_CASE("encode shape, determinism and pooling site") {
  const Tokenizer tok = letters_tokenizer();
  Encoder<double> enc(small_config(tok.size()), 3);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tokens expr = random_tokens(rng, 3);
    expr.insert(expr.begin() + trial % 4, "[HMARK]");
    const EncoderInput in = expression_input(tok, expr, random_tokens(rng, 6), 24);
    const PooledOutput<double> a = encode(enc, in), b = encode(enc, in);
    CHECK(a.pooled.size() == 32);
    CHECK(a.site == PoolingSite::kHeadMarker);
    CHECK(a.pooled == b.pooled);
    CHECK(a.states == b.states);
    CHECK(a.pooled.transpose() == a.states.row(in.pool_index));
  }
}

TEST_CASE("padding beyond [SEP] leaves the pooled output unchanged") {
  const Tokenizer tok = letters_tokenizer();
  Encoder<double> enc(small_config(tok.size()), 4);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const EncoderInput in = entity_input(tok, random_tokens(rng, 1 + trial % 8), 24);
    const auto a = encode(enc, in);
    const auto b = encode(enc, pad_to(in, in.length() + 1 + trial % 5));
    CHECK((a.pooled - b.pooled).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("batched encoding matches one-at-a-time encoding") {
  const Tokenizer tok = letters_tokenizer();
  Encoder<double> enc(small_config(tok.size()), 7);
  std::mt19937_64 rng(8);
  std::vector<EncoderInput> inputs;
  for (int i = 0; i < 5; ++i) inputs.push_back(entity_input(tok, random_tokens(rng, 2 + i), 24));
  Tape<double> tape(false);
  EncoderGraph<double> graph(tape, enc);
  const auto batch = graph.encode_batch(inputs);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto single = encode(enc, inputs[i]);
    CHECK((tape.value(batch.pooled).row(static_cast<Eigen::Index>(i)) - single.pooled.transpose())
              .cwiseAbs()
              .maxCoeff() <= 1e-12);
  }
}

TEST_CASE("swapping two description tokens changes the pooled output") {
  const Tokenizer tok = letters_tokenizer();
  Encoder<double> enc(small_config(tok.size()), 9);
  std::mt19937_64 rng(10);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    Tokens desc = random_tokens(rng, 6);
    std::uniform_int_distribution<std::size_t> pos(0, desc.size() - 1);
    const std::size_t i = pos(rng), j = pos(rng);
    if (desc[i] == desc[j]) continue;
    Tokens swapped = desc;
    std::swap(swapped[i], swapped[j]);
    const auto a = encode(enc, expression_input(tok, {"[HMARK]", "q"}, desc, 24));
    const auto b = encode(enc, expression_input(tok, {"[HMARK]", "q"}, swapped, 24));
    CHECK((a.pooled - b.pooled).norm() > 1e-9);
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("dropout only applies with a training rng") {
  const Tokenizer tok = letters_tokenizer();
  EncoderConfig cfg = small_config(tok.size());
  cfg.dropout = 0.3;
  Encoder<double> enc(cfg, 11);
  const EncoderInput in = entity_input(tok, {"a", "b", "c"}, 24);
  CHECK(encode(enc, in).pooled == encode(enc, in).pooled);
  std::mt19937_64 rng(1);
  Tape<double> tape(false);
  EncoderGraph<double> graph(tape, enc, &rng);
  CHECK((tape.value(graph.encode(in).pooled).transpose() - encode(enc, in).pooled).norm() > 1e-6);
}

TEST_CASE("cast to float keeps values to float precision") {
  const Tokenizer tok = letters_tokenizer();
  Encoder<double> enc(small_config(tok.size()), 12);
  Encoder<float> f = enc.cast<float>();
  const EncoderInput in = entity_input(tok, {"k", "l"}, 24);
  CHECK((encode(f, in).pooled.cast<double>() - encode(enc, in).pooled).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("encoder config validation") {
  EncoderConfig c = small_config(10);
  c.heads = 5;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfiguration);
  c = small_config(10);
  c.max_len = 3;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfiguration);
}

TEST_CASE("uniform POS head gives ln 3") {
  const Tokenizer tok = letters_tokenizer();
  EncoderConfig cfg = small_config(tok.size());
  cfg.pos_tags = 3;
  Encoder<double> enc(cfg, 13);
  enc.pos_weight().value.setZero();
  enc.pos_bias().value.setZero();
  const std::vector<TaggedSentence> batch = {{{"a", "b", "c"}, {0, 1, 2}}, {{"d"}, {2}}};
  CHECK(pos_pretrain_step(enc, tok, batch).loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("POS head memorizes a single-token corpus") {
  const Tokenizer tok = letters_tokenizer();
  EncoderConfig cfg = small_config(tok.size());
  cfg.pos_tags = 3;
  Encoder<double> enc(cfg, 14);
  AdamW<double> opt(enc.parameters(), 0.0);
  const std::vector<TaggedSentence> batch = {{{"a"}, {1}}};
  double loss = 0;
  for (int step = 0; step < 200; ++step) {
    loss = pos_pretrain_step(enc, tok, batch).loss;
    opt.step(1e-2);
  }
  CHECK(pos_pretrain_step(enc, tok, batch).loss < 0.01);
  CHECK(loss < 0.01);
}

TEST_CASE("an all-padding batch has zero loss and zero gradients") {
  const Tokenizer tok = letters_tokenizer();
  EncoderConfig cfg = small_config(tok.size());
  cfg.pos_tags = 3;
  Encoder<double> enc(cfg, 15);
  const StepResult<double> r = pos_pretrain_step(enc, tok, {{{}, {}}});
  CHECK(r.loss == 0.0);
  for (const auto& [name, g] : r.gradients) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("POS tag out of range is a data error") {
  const Tokenizer tok = letters_tokenizer();
  EncoderConfig cfg = small_config(tok.size());
  cfg.pos_tags = 3;
  Encoder<double> enc(cfg, 16);
  CHECK(kind_of([&] { pos_pretrain_step(enc, tok, {{{"a"}, {3}}}); }) == ErrorKind::kData);
  CHECK(kind_of([&] { pos_pretrain_step(enc, tok, {{{"a"}, {-1}}}); }) == ErrorKind::kData);
}

TEST_CASE("grad_check on a linear map is exact") {
  std::mt19937_64 rng(17);
  Param<double> w;
  w.value = testing::random_matrix(rng, 3, 4);
  const Matrix<double> x = testing::random_matrix(rng, 4, 2);
  auto loss = [&](bool record) {
    Tape<double> tape(record);
    Var out = ad::sum_all(tape, ad::matmul(tape, tape.leaf(w), tape.constant(x)));
    if (record) tape.backward(out);
    return tape.scalar(out);
  };
  w.zero_grad();
  loss(true);
  const GradCheckReport r = grad_check<double>([&] { return loss(false); }, {{"w", {&w}}}, GradCheckOptions{});
  CHECK(r.coordinates == 12);
  CHECK(r.max_relative_error <= 1e-10);
}

TEST_CASE("POS loss gradients pass the finite-difference check") {
  const Tokenizer tok = letters_tokenizer();
  EncoderConfig cfg = small_config(tok.size());
  cfg.pos_tags = 4;
  Encoder<double> enc(cfg, 18);
  const std::vector<TaggedSentence> batch = {{{"a", "b", "c"}, {0, 1, 3}}, {{"d", "e"}, {2, 2}}};
  pos_pretrain_step(enc, tok, batch);
  auto loss = [&] {
    Tape<double> tape(false);
    EncoderGraph<double> graph(tape, enc);
    std::vector<EncoderInput> in;
    std::vector<int> targets;
    for (const auto& s : batch) {
      in.push_back(sequence_input(tok, s.tokens, 0, PoolingSite::kCls, cfg.max_len));
      targets.push_back(-1);
      targets.insert(targets.end(), s.tags.begin(), s.tags.end());
      targets.push_back(-1);
    }
    return tape.scalar(ad::masked_cross_entropy(tape, graph.pos_logits(graph.encode_batch(in).states), targets));
  };
  const auto r = grad_check<double>(loss, encoder_param_groups(enc, ""), GradCheckOptions{});
  for (const auto& [group, err] : r.per_group) CHECK_MESSAGE(err <= 1e-6, group);
  CHECK(r.coordinates >= 200);
}

namespace {

// Full link model: both encoders and the contrastive loss of one batch.
template <typename T>
struct LossFixture {
  Graph g = synth_kg(testing::tiny_spec(21));
  TrainConfig cfg = testing::tiny_config();
  std::vector<Triple> batch;

  LossFixture() {
    cfg.precision = std::is_same_v<T, float> ? "float" : "double";
    for (int i = 0; i < 6; ++i) batch.push_back(g.triple(i * 3));
  }
};

template <typename T>
T batch_loss(KgTrainer<T>& tr, const std::vector<Triple>& batch) {
  Tape<T> tape(false);
  return tape.scalar(tr.batch_graph(tape, batch, nullptr).total);
}

template <typename T>
void batch_gradients(LinkModel<T>& m, KgTrainer<T>& tr, const std::vector<Triple>& batch) {
  for (auto& [n, p] : m.parameters()) p->zero_grad();
  Tape<T> tape(true);
  tape.backward(tr.batch_graph(tape, batch, nullptr).total);
}

template <typename T>
std::vector<ParamGroup<T>> model_groups(LinkModel<T>& m) {
  auto groups = encoder_param_groups(m.expr, "expr.");
  for (auto& g : encoder_param_groups(m.ent, "ent.")) groups.push_back(std::move(g));
  return groups;
}

}  // namespace

namespace {

GradCheckReport full_model_check(double temperature, int stencil = 2, double eps = 1e-5) {
  LossFixture<double> fx;
  fx.cfg.temperature = temperature;
  LinkModel<double> m = testing::tiny_model<double>(fx.g, fx.cfg);
  KgTrainer<double> tr(m, fx.g);
  batch_gradients(m, tr, fx.batch);
  GradCheckOptions opt;
  opt.eps = eps;
  opt.stencil = stencil;
  return grad_check<double>([&] { return batch_loss(tr, fx.batch); }, model_groups(m), opt);
}

}  // namespace

TEST_CASE("full model and contrastive loss pass the double-precision gradient check") {
  const auto r = full_model_check(1.0);
  for (const auto& [group, err] : r.per_group) CHECK_MESSAGE(err <= 1e-6, group << " " << err);
  CHECK(r.coordinates >= 200);
}

TEST_CASE("gradient check at the default temperature") {
  // At t = 0.05 the O(eps^2) truncation of plain central differences is
  // already ~1e-6, so this uses the five-point stencil.
  const auto r = full_model_check(TrainConfig{}.temperature, 4, 3e-4);
  for (const auto& [group, err] : r.per_group) CHECK_MESSAGE(err <= 1e-6, group << " " << err);
}

TEST_CASE("single-precision gradients agree with finite differences to 1e-3") {
  // Analytic gradients come from the float model; the finite differences are
  // taken in double at the same (float-representable) parameter values.
  LossFixture<float> fx;
  fx.cfg.temperature = 1.0;
  LinkModel<float> mf = testing::tiny_model<float>(fx.g, fx.cfg);
  KgTrainer<float> tf(mf, fx.g);
  batch_gradients(mf, tf, fx.batch);
  LinkModel<double> md = mf.cast<double>();
  KgTrainer<double> td(md, fx.g);
  auto pf = mf.parameters();
  auto pd = md.parameters();
  REQUIRE(pf.size() == pd.size());
  for (std::size_t i = 0; i < pf.size(); ++i) pd[i].second->grad = pf[i].second->grad.cast<double>();
  GradCheckOptions opt;
  opt.eps = 1e-5;
  const auto r = grad_check<double>([&] { return batch_loss(td, fx.batch); }, model_groups(md), opt);
  for (const auto& [group, err] : r.per_group) CHECK_MESSAGE(err <= 1e-3, group << " " << err);
}
