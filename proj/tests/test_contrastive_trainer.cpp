#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "bilink/contrastive_trainer.hpp"
#include "bilink/error.hpp"
#include "test_support.hpp"

using namespace bilink;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kPrecondition;
}

BatchEmbeddings random_batch(std::mt19937_64& rng, int n, int d) {
  BatchEmbeddings be;
  be.hf = testing::random_matrix(rng, n, d);
  be.hb = testing::random_matrix(rng, n, d);
  be.tf = testing::random_matrix(rng, n, d);
  be.tb = testing::random_matrix(rng, n, d);
  be.htau_f = 0.3 * testing::random_matrix(rng, n, d);
  be.htau_b = 0.3 * testing::random_matrix(rng, n, d);
  return be;
}

double cos_scaled(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double t) {
  return x.dot(y) / (x.norm() * y.norm()) / t;
}

// Plain-loop evaluation of the three terms, written from their definitions.
struct Oracle {
  double l1 = 0, l2 = 0, l3 = 0;
};

Oracle oracle_losses(const BatchEmbeddings& be, double t) {
  const Eigen::Index n = be.size();
  const Eigen::MatrixXd tf_hat = be.tf - be.htau_f, hb_hat = be.hb - be.htau_b;
  Oracle o;
  for (Eigen::Index i = 0; i < n; ++i) {
    double den1 = 0, den2 = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      den1 += std::exp(cos_scaled(be.tb.row(i), tf_hat.row(j), t));
      den2 += std::exp(cos_scaled(be.hf.row(i), hb_hat.row(j), t));
    }
    o.l1 -= std::log(std::exp(cos_scaled(be.tb.row(i), tf_hat.row(i), t)) / den1);
    o.l2 -= std::log(std::exp(cos_scaled(be.hf.row(i), hb_hat.row(i), t)) / den2);
  }
  o.l1 /= static_cast<double>(n);
  o.l2 /= static_cast<double>(n);
  double rep = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) rep += std::exp(cos_scaled(hb_hat.row(i), tf_hat.row(j), t));
  o.l3 = std::log(rep);
  return o;
}

Eigen::MatrixXd permute_rows(const Eigen::MatrixXd& m, const std::vector<int>& p) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < p.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(p[i]);
  return out;
}

}  // namespace

TEST_CASE("cosine_sim examples") {
  CHECK(cosine_sim(Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 0), 0.05) == doctest::Approx(20.0).epsilon(1e-14));
  CHECK(cosine_sim(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), 0.3) == 0.0);
  CHECK(cosine_sim(Eigen::Vector2d(3, 4), Eigen::Vector2d(4, 3), 1.0) == doctest::Approx(0.96).epsilon(1e-14));
  CHECK(kind_of([] { cosine_sim(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), 1.0); }) == ErrorKind::kNumericInput);
}

TEST_CASE("cosine_sim is bounded by 1/t") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> temp(0.01, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::VectorXd x = testing::random_matrix(rng, 7, 1), y = testing::random_matrix(rng, 7, 1);
    const double t = temp(rng);
    const double s = cosine_sim(x, y, t);
    CHECK(std::abs(s) <= 1.0 / t + 1e-12);
  }
}

TEST_CASE("denoise examples") {
  const Eigen::Vector2d h(1, 2);
  CHECK(denoise(h, h) == Eigen::Vector2d::Zero());
  CHECK(denoise(h, Eigen::Vector2d::Zero()) == h);
  CHECK(denoise(h, Eigen::Vector2d(0.5, 0.5)) == Eigen::Vector2d(0.5, 1.5));
}

TEST_CASE("two-example batch with orthogonal negatives") {
  BatchEmbeddings be;
  be.tb = Eigen::Matrix2d::Identity();
  be.tf = Eigen::Matrix2d::Identity();
  be.hf = Eigen::Matrix2d::Identity();
  be.hb = Eigen::Matrix2d::Identity();
  be.htau_f = Eigen::Matrix2d::Zero();
  be.htau_b = Eigen::Matrix2d::Zero();
  const LossReport r = batch_losses(be, 1.0, 0.1);
  CHECK(r.l1 == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(r.l1 == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
  CHECK(r.l2 == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
  // Off-diagonal pairs are orthogonal: L3 = log(2 e^0).
  CHECK(r.l3 == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("identical embeddings give log n exactly") {
  for (int n : {2, 3, 5, 8}) {
    BatchEmbeddings be;
    const Eigen::RowVectorXd v = Eigen::RowVectorXd::LinSpaced(6, 0.3, 1.7);
    be.hf = be.hb = be.tf = be.tb = v.replicate(n, 1);
    be.htau_f = be.htau_b = Eigen::MatrixXd::Zero(n, 6);
    const LossReport r = batch_losses(be, 0.05, 0.1);
    CHECK(r.l1 == std::log(static_cast<double>(n)));
    CHECK(r.l2 == std::log(static_cast<double>(n)));
  }
}

TEST_CASE("batch losses match the plain-loop oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 7;
    const double t = 0.05 + 0.1 * (trial % 5);
    const BatchEmbeddings be = random_batch(rng, n, 5);
    const LossReport r = batch_losses(be, t, 0.3);
    const Oracle o = oracle_losses(be, t);
    CHECK(r.l1 == doctest::Approx(o.l1).epsilon(1e-11));
    CHECK(r.l2 == doctest::Approx(o.l2).epsilon(1e-11));
    CHECK(r.l3 == doctest::Approx(o.l3).epsilon(1e-11));
  }
}

TEST_CASE("reported total is L1 + L2 + beta L3") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> beta(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const BatchEmbeddings be = random_batch(rng, 2 + trial % 9, 4);
    const double b = trial == 0 ? 0.0 : beta(rng);
    const LossReport r = batch_losses(be, 0.1, b);
    CHECK(std::abs(r.total - (r.l1 + r.l2 + b * r.l3)) <= 1e-12);
    if (b == 0.0) CHECK(r.total == r.l1 + r.l2);
  }
}

TEST_CASE("the tape total agrees with the decomposition") {
  std::mt19937_64 rng(4);
  const BatchEmbeddings be = random_batch(rng, 6, 5);
  Tape<double> tape(false);
  auto c = [&](const Eigen::MatrixXd& m) { return tape.constant(Matrix<double>(m)); };
  const auto v = contrastive_loss(tape, c(be.hf), c(be.hb), c(be.tf), c(be.tb), c(be.htau_f), c(be.htau_b),
                                  LossMasks{}, 0.05, 0.7, true);
  CHECK(std::abs(tape.scalar(v.total) - (tape.scalar(v.l1) + tape.scalar(v.l2) + 0.7 * tape.scalar(v.l3))) <= 1e-12);
  const auto w = contrastive_loss(tape, c(be.hf), c(be.hb), c(be.tf), c(be.tb), c(be.htau_f), c(be.htau_b),
                                  LossMasks{}, 0.05, 0.7, false);
  CHECK(std::abs(tape.scalar(w.total) - (tape.scalar(w.l1) + 0.7 * tape.scalar(w.l3))) <= 1e-12);
}

TEST_CASE("zero template embeddings are a bit-exact no-op") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    BatchEmbeddings be = random_batch(rng, 3 + trial % 5, 6);
    be.htau_f.setZero();
    be.htau_b.setZero();
    const LossReport r = batch_losses(be, 0.05, 0.1);
    // Same terms built on the raw embeddings with no subtraction at all.
    Tape<double> tape(false);
    auto c = [&](const Eigen::MatrixXd& m) { return tape.constant(Matrix<double>(m)); };
    const Eigen::Index n = be.size();
    std::vector<int> diag(static_cast<std::size_t>(n));
    std::iota(diag.begin(), diag.end(), 0);
    Matrix<std::uint8_t> off = Matrix<std::uint8_t>::Ones(n, n);
    for (Eigen::Index i = 0; i < n; ++i) off(i, i) = 0;
    const double l1 = tape.scalar(ad::masked_cross_entropy(tape, ad::cosine_matrix(tape, c(be.tb), c(be.tf), 0.05), diag));
    const double l2 = tape.scalar(ad::masked_cross_entropy(tape, ad::cosine_matrix(tape, c(be.hf), c(be.hb), 0.05), diag));
    const double l3 = tape.scalar(ad::masked_logsumexp(tape, ad::cosine_matrix(tape, c(be.hb), c(be.tf), 0.05), off));
    CHECK(r.l1 == l1);
    CHECK(r.l2 == l2);
    CHECK(r.l3 == l3);
    const Eigen::VectorXd h = be.tf.row(0);
    CHECK(denoise(h, Eigen::VectorXd::Zero(h.size())) == h);
  }
}

TEST_CASE("permuting the batch leaves the losses unchanged") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + trial % 10;
    const BatchEmbeddings be = random_batch(rng, n, 5);
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    BatchEmbeddings q;
    q.hf = permute_rows(be.hf, p);
    q.hb = permute_rows(be.hb, p);
    q.tf = permute_rows(be.tf, p);
    q.tb = permute_rows(be.tb, p);
    q.htau_f = permute_rows(be.htau_f, p);
    q.htau_b = permute_rows(be.htau_b, p);
    const LossReport a = batch_losses(be, 0.05, 0.1), b = batch_losses(q, 0.05, 0.1);
    CHECK(std::abs(a.l1 - b.l1) <= 1e-10);
    CHECK(std::abs(a.l2 - b.l2) <= 1e-10);
    CHECK(std::abs(a.l3 - b.l3) <= 1e-10);
  }
}

TEST_CASE("lower temperature lowers L1 when positives dominate") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + trial % 4;
    BatchEmbeddings be = random_batch(rng, n, 8);
    // Positives sit close to their anchor; negatives are independent draws.
    be.htau_f.setZero();
    be.tf = be.tb + 0.05 * testing::random_matrix(rng, n, 8);
    Eigen::MatrixXd s(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s(i, j) = cos_scaled(be.tb.row(i), be.tf.row(j), 1.0);
    bool dominated = true;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && s(i, j) >= s(i, i)) dominated = false;
    REQUIRE(dominated);
    double prev = std::numeric_limits<double>::infinity();
    for (double t : {2.0, 1.0, 0.5, 0.2, 0.1, 0.05}) {
      const double l1 = batch_losses(be, t, 0.1).l1;
      CHECK(l1 < prev);
      prev = l1;
    }
  }
}

TEST_CASE("batch losses reject small or ragged batches") {
  std::mt19937_64 rng(8);
  BatchEmbeddings one = random_batch(rng, 1, 3);
  CHECK(kind_of([&] { batch_losses(one, 0.05, 0.1); }) == ErrorKind::kBatchSize);
  BatchEmbeddings ragged = random_batch(rng, 3, 3);
  ragged.tb = testing::random_matrix(rng, 3, 4);
  CHECK(kind_of([&] { batch_losses(ragged, 0.05, 0.1); }) == ErrorKind::kInputLayout);
  CHECK(kind_of([&] { batch_losses(random_batch(rng, 3, 3), 0.0, 0.1); }) == ErrorKind::kConfiguration);
}

TEST_CASE("negative masks drop self-negatives and known true pairs") {
  Graph g;
  for (const char* id : {"a", "b", "c", "d"}) g.add_entity({id, id, "x"});
  g.add_relation("r");
  g.add_triple({0, 0, 1});
  g.add_triple({2, 0, 1});
  g.add_triple({1, 0, 3});
  const std::vector<Triple> batch = {{0, 0, 1}, {2, 0, 1}, {1, 0, 3}};
  const LossMasks m = negative_masks(g, batch);
  for (int i = 0; i < 3; ++i) {
    CHECK(m.l1(i, i) == 1);
    CHECK(m.l2(i, i) == 1);
  }
  // (c, r, ?) is a true completion for tail b, so row 0 cannot use it as a negative.
  CHECK(m.l1(0, 1) == 0);
  CHECK(m.l1(1, 0) == 0);
  // Row 0's tail b is the head of example 2: a self-negative.
  CHECK(m.l1(0, 2) == 0);
  // Row 2's head b is the tail of examples 0 and 1.
  CHECK(m.l2(2, 0) == 0);
  CHECK(m.l2(2, 1) == 0);
  CHECK(m.l1(2, 0) == 1);
}

TEST_CASE("make_batches sizes and determinism") {
  auto sizes = [](const std::vector<std::vector<int>>& b) {
    std::vector<std::size_t> s;
    for (const auto& x : b) s.push_back(x.size());
    return s;
  };
  CHECK(sizes(make_batches(10, 4, 1, 0)) == std::vector<std::size_t>{4, 4, 2});
  CHECK(sizes(make_batches(3, 4, 1, 0)) == std::vector<std::size_t>{3});
  CHECK(sizes(make_batches(9, 4, 1, 0)) == std::vector<std::size_t>{4, 4});
  CHECK(make_batches(50, 8, 7, 3) == make_batches(50, 8, 7, 3));
  CHECK(make_batches(50, 8, 7, 3) != make_batches(50, 8, 7, 4));
  CHECK(make_batches(50, 8, 7, 3) != make_batches(50, 8, 8, 3));
  auto all = make_batches(50, 8, 7, 3);
  std::vector<int> seen;
  for (const auto& b : all) seen.insert(seen.end(), b.begin(), b.end());
  std::sort(seen.begin(), seen.end());
  std::vector<int> want(50);
  std::iota(want.begin(), want.end(), 0);
  CHECK(seen == want);
  CHECK(kind_of([] { make_batches(5, 1, 1, 0); }) == ErrorKind::kBatchSize);
}

TEST_CASE("learning-rate schedule") {
  CHECK(scheduled_lr(1e-3, 250, 500, 10000) == doctest::Approx(0.5e-3).epsilon(1e-15));
  CHECK(scheduled_lr(1e-3, 500, 500, 10000) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(scheduled_lr(1e-3, 5250, 500, 10000) == doctest::Approx(0.5e-3).epsilon(1e-12));
  CHECK(scheduled_lr(1e-3, 10000, 500, 10000) == 0.0);
  double prev = 0;
  for (int s = 1; s <= 500; ++s) {
    const double lr = scheduled_lr(1.0, s, 500, 2000);
    CHECK(lr > prev);
    prev = lr;
  }
  for (int s = 501; s <= 2000; ++s) {
    const double lr = scheduled_lr(1.0, s, 500, 2000);
    CHECK(lr < prev);
    prev = lr;
  }
}

TEST_CASE("weight decay skips biases and norms") {
  CHECK(decays("expr.layer0.attention.wq"));
  CHECK(decays("ent.embeddings.token"));
  CHECK_FALSE(decays("expr.layer0.attention.bq"));
  CHECK_FALSE(decays("expr.layer1.ln2.gain"));
  CHECK_FALSE(decays("ent.final_ln.bias"));
}

TEST_CASE("AdamW with lr 0 leaves parameters unchanged") {
  std::mt19937_64 rng(9);
  Param<double> p;
  p.value = testing::random_matrix(rng, 3, 3);
  p.grad = testing::random_matrix(rng, 3, 3);
  const Matrix<double> before = p.value;
  AdamW<double> opt({{"w", &p}}, 0.5);
  opt.step(0.0);
  CHECK(p.value == before);
  opt.step(1e-2);
  CHECK(p.value != before);
}

TEST_CASE("AdamW first step moves each coordinate by lr against its gradient sign") {
  Param<double> p;
  p.value = Matrix<double>::Zero(1, 3);
  p.grad = Matrix<double>(1, 3);
  p.grad << 2.0, -0.5, 1e-3;
  AdamW<double> opt({{"layer0.ffn.b1", &p}}, 0.0);
  opt.step(0.1);
  CHECK(p.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(p.value(0, 2) == doctest::Approx(-0.1).epsilon(1e-4));
}

TEST_CASE("config text round-trips and rejects unknown keys") {
  TrainConfig cfg;
  cfg.lr = 2e-5;
  cfg.beta = 0.0;
  cfg.backward_branch = false;
  cfg.precision = "double";
  const TrainConfig back = parse_train_config(to_config_text(cfg));
  CHECK(to_config_text(back) == to_config_text(cfg));
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(config_hash(cfg) != config_hash(TrainConfig{}));
  CHECK(config_hash(TrainConfig{}).size() == 16);

  const TrainConfig parsed = parse_train_config("# comment\nlr = 0.5\n\n  epochs=3  # trailing\nbackward_branch = false\n");
  CHECK(parsed.lr == 0.5);
  CHECK(parsed.epochs == 3);
  CHECK_FALSE(parsed.backward_branch);

  try {
    parse_train_config("learning_rate = 1\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfiguration);
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
  CHECK(kind_of([] { parse_train_config("temperature = 0\n"); }) == ErrorKind::kConfiguration);
  CHECK(kind_of([] { parse_train_config("beta = -1\n"); }) == ErrorKind::kConfiguration);
  CHECK(kind_of([] { parse_train_config("epochs = many\n"); }) == ErrorKind::kConfiguration);
  const auto keys = config_keys();
  CHECK(std::find(keys.begin(), keys.end(), "t_sharp") != keys.end());
}

TEST_CASE("config defaults") {
  const TrainConfig c;
  CHECK(c.warmup_steps == 500);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.temperature == 0.05);
  CHECK(c.beta == 0.1);
  CHECK(c.layers == 2);
  CHECK(c.heads == 4);
  CHECK(c.model_dim == 64);
  CHECK(c.ffn_dim == 128);
  CHECK(c.max_len == 64);
}

TEST_CASE("epoch log line carries the documented keys") {
  EpochLog log;
  log.epoch = 3;
  log.loss = make_report(1.0, 2.0, 3.0, 0.05, 0.1);
  log.lr = 1e-4;
  log.seed = 9;
  const auto j = nlohmann::json::parse(to_json_line(log));
  for (const char* key : {"epoch", "L1", "L2", "L3", "L", "lr", "seed"}) CHECK(j.contains(key));
  CHECK(j["L"].get<double>() == doctest::Approx(3.3));
}

TEST_CASE("training with lr 0 leaves the model unchanged") {
  const Graph g = synth_kg(testing::tiny_spec(3));
  TrainConfig cfg = testing::tiny_config();
  cfg.lr = 0.0;
  cfg.epochs = 1;
  LinkModel<double> m = testing::tiny_model<double>(g, cfg);
  std::vector<Matrix<double>> before;
  for (auto& [n, p] : m.parameters()) before.push_back(p->value);
  KgTrainer<double> tr(m, g);
  const auto logs = tr.run();
  REQUIRE(logs.size() == 1);
  CHECK(std::isfinite(logs[0].loss.total));
  CHECK(logs[0].loss.total > 0);
  auto after = m.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i].second->value == before[i]);
}

TEST_CASE("training is deterministic given the seed") {
  const Graph g = synth_kg(testing::tiny_spec(4));
  TrainConfig cfg = testing::tiny_config();
  cfg.dropout = 0.1;
  auto run = [&] {
    LinkModel<float> m = testing::tiny_model<float>(g, cfg);
    KgTrainer<float> tr(m, g);
    std::ostringstream log;
    tr.run(&log);
    return log.str();
  };
  const std::string a = run(), b = run();
  CHECK(a == b);
  CHECK(std::count(a.begin(), a.end(), '\n') == cfg.epochs);
}

TEST_CASE("non-finite loss aborts and dumps the batch") {
  const Graph g = synth_kg(testing::tiny_spec(5));
  const auto dir = testing::temp_dir("nonfinite");
  LinkModel<double> m = testing::tiny_model<double>(g, testing::tiny_config());
  KgTrainer<double> tr(m, g, nullptr, dir);
  m.expr.token_embedding().value.setConstant(std::numeric_limits<double>::quiet_NaN());
  std::vector<Triple> batch = {g.triple(0), g.triple(1), g.triple(2)};
  try {
    tr.step(batch, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNonFiniteLoss);
  }
  int dumps = 0;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    const auto j = nlohmann::json::parse(std::ifstream(f.path()));
    CHECK(j["triples"].size() == 3);
    ++dumps;
  }
  CHECK(dumps == 1);
}

TEST_CASE("encode_pooled does not depend on the worker count") {
  const Graph g = synth_kg(testing::tiny_spec(6));
  LinkModel<float> m = testing::tiny_model<float>(g, testing::tiny_config());
  const InputBuilder in(m.tok, g, m.rules, m.cfg.max_len, m.cfg.desc_tokens);
  std::vector<EncoderInput> inputs;
  for (int e = 0; e < static_cast<int>(g.entity_count()); ++e) inputs.push_back(in.entity(e));
  const Eigen::MatrixXd one = encode_pooled(m.ent, inputs, 1, 7);
  const Eigen::MatrixXd three = encode_pooled(m.ent, inputs, 3, 7);
  CHECK(one == three);
  CHECK(one.rows() == static_cast<Eigen::Index>(g.entity_count()));
  CHECK((one.row(4).transpose() - encode(m.ent, inputs[4]).pooled.cast<double>()).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("final epoch loss is below the first on a 50-entity graph") {
  for (std::uint64_t seed : {1, 2, 3}) {
    SynthSpec spec = testing::tiny_spec(seed, 50);
    spec.relations = {{"sibling_of", RelationPattern::kSymmetric, {}, 0.05},
                      {"parent_of", RelationPattern::kPlain, {}, 0.05},
                      {"child_of", RelationPattern::kInverseOf, {"parent_of"}, 0.05}};
    const Graph g = synth_kg(spec);
    TrainConfig cfg;
    cfg.seed = seed;
    const PromptRuleBase rules = default_rule_base();
    LinkModel<float> m = init_link_model<float>(cfg, build_link_tokenizer(g, rules, 1), rules);
    KgTrainer<float> tr(m, g);
    const auto logs = tr.run();
    CHECK_MESSAGE(logs.back().loss.total < logs.front().loss.total, "seed " << seed);
  }
}
