#include "bilink/contrastive_trainer.hpp"

#include <malloc.h>

#include <json.hpp>
#include <spdlog/fmt/fmt.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

namespace bilink {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw Error(ErrorKind::kConfiguration, "config key '" + key + "': invalid value '" + value + "' (" + why + ")");
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) bad_value(key, value, "expected a number");
  return out;
}

long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "expected an integer");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  bad_value(key, value, "expected true or false");
}

struct Field {
  std::string name;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename M>
Field field(std::string name, M TrainConfig::*member) {
  Field f;
  f.name = std::move(name);
  f.set = [member](TrainConfig& c, const std::string& k, const std::string& v) {
    if constexpr (std::is_same_v<M, double>) c.*member = parse_double(k, v);
    else if constexpr (std::is_same_v<M, bool>) c.*member = parse_bool(k, v);
    else if constexpr (std::is_same_v<M, std::string>) c.*member = v;
    else if constexpr (std::is_same_v<M, std::uint64_t>) {
      const long long x = parse_int(k, v);
      if (x < 0) bad_value(k, v, "must be non-negative");
      c.*member = static_cast<std::uint64_t>(x);
    } else {
      const long long x = parse_int(k, v);
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad_value(k, v, "out of range");
      c.*member = static_cast<int>(x);
    }
  };
  f.get = [member](const TrainConfig& c) -> std::string {
    if constexpr (std::is_same_v<M, bool>) return c.*member ? "true" : "false";
    else if constexpr (std::is_same_v<M, std::string>) return c.*member;
    else return fmt::format("{}", c.*member);
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      field("lr", &TrainConfig::lr),
      field("warmup_steps", &TrainConfig::warmup_steps),
      field("weight_decay", &TrainConfig::weight_decay),
      field("epochs", &TrainConfig::epochs),
      field("batch_size", &TrainConfig::batch_size),
      field("seed", &TrainConfig::seed),
      field("precision", &TrainConfig::precision),
      field("temperature", &TrainConfig::temperature),
      field("beta", &TrainConfig::beta),
      field("backward_branch", &TrainConfig::backward_branch),
      field("share_encoders", &TrainConfig::share_encoders),
      field("t_sharp", &TrainConfig::t_sharp),
      field("em_rounds", &TrainConfig::em_rounds),
      field("k_clusters", &TrainConfig::k_clusters),
      field("g_out_dim", &TrainConfig::g_out_dim),
      field("g_hidden", &TrainConfig::g_hidden),
      field("eps_reg", &TrainConfig::eps_reg),
      field("layers", &TrainConfig::layers),
      field("heads", &TrainConfig::heads),
      field("model_dim", &TrainConfig::model_dim),
      field("ffn_dim", &TrainConfig::ffn_dim),
      field("max_len", &TrainConfig::max_len),
      field("dropout", &TrainConfig::dropout),
      field("desc_tokens", &TrainConfig::desc_tokens),
      field("min_count", &TrainConfig::min_count),
      field("sp2_k", &TrainConfig::sp2_k),
      field("ensemble_w", &TrainConfig::ensemble_w),
      field("posthoc", &TrainConfig::posthoc),
      field("workers", &TrainConfig::workers),
      field("el_soft_prompts", &TrainConfig::el_soft_prompts),
      field("el_candidates", &TrainConfig::el_candidates),
      field("el_context", &TrainConfig::el_context),
      field("el_negatives", &TrainConfig::el_negatives),
      field("el_batch_size", &TrainConfig::el_batch_size),
      field("el_force_gold", &TrainConfig::el_force_gold),
  };
  return f;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorKind::kConfiguration, msg);
}

}  // namespace

void TrainConfig::validate() const {
  require(lr >= 0, "lr must be >= 0");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 2, "batch_size must be >= 2");
  require(precision == "float" || precision == "double", "precision must be float or double");
  require(temperature > 0, "temperature must be > 0");
  require(beta >= 0, "beta must be >= 0");
  require(t_sharp > 0, "t_sharp must be > 0");
  require(em_rounds >= 0, "em_rounds must be >= 0");
  require(k_clusters >= 1, "k_clusters must be >= 1");
  require(g_out_dim >= 1 && g_hidden >= 1, "g_out_dim and g_hidden must be >= 1");
  require(eps_reg > 0, "eps_reg must be > 0");
  require(desc_tokens >= 1, "desc_tokens must be >= 1");
  require(min_count >= 1, "min_count must be >= 1");
  require(sp2_k >= 1, "sp2_k must be >= 1");
  require(ensemble_w >= 0, "ensemble_w must be >= 0");
  require(workers >= 1, "workers must be >= 1");
  require(el_soft_prompts >= 1, "el_soft_prompts must be >= 1");
  require(el_candidates >= 2, "el_candidates must be >= 2");
  require(el_context >= 0, "el_context must be >= 0");
  require(el_negatives >= 1, "el_negatives must be >= 1");
  require(el_batch_size >= 1, "el_batch_size must be >= 1");
  encoder_config(kSpecialTokens.size()).validate();
}

EncoderConfig TrainConfig::encoder_config(int vocab_size) const {
  EncoderConfig ec;
  ec.layers = layers;
  ec.heads = heads;
  ec.model_dim = model_dim;
  ec.ffn_dim = ffn_dim;
  ec.max_len = max_len;
  ec.dropout = dropout;
  ec.vocab_size = vocab_size;
  return ec;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields())
    if (f.name == key) {
      f.set(cfg, key, value);
      return;
    }
  throw Error(ErrorKind::kConfiguration, "unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.name);
  return out;
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::kConfiguration, "config line " + std::to_string(no) + ": expected key = value");
    set_config_value(cfg, trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfiguration, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string to_config_text(const TrainConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.name + " = " + f.get(cfg) + "\n";
  return out;
}

std::string config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_config_text(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

void tune_allocator() {
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
  });
}

// ---------------------------------------------------------------------------

double cosine_sim(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double t) {
  if (x.size() != y.size()) throw Error(ErrorKind::kInputLayout, "cosine of vectors with different dimensions");
  if (!(t > 0)) throw Error(ErrorKind::kConfiguration, "temperature must be > 0");
  const double nx = x.norm(), ny = y.norm();
  if (!(nx > 0) || !(ny > 0)) throw Error(ErrorKind::kNumericInput, "zero-norm embedding in cosine similarity");
  return x.dot(y) / (nx * ny) / t;
}

Eigen::VectorXd denoise(const Eigen::VectorXd& h, const Eigen::VectorXd& h_tau) {
  if (h.size() != h_tau.size()) throw Error(ErrorKind::kInputLayout, "denoising vectors differ in dimension");
  return h - h_tau;
}

void BatchEmbeddings::validate() const {
  const Eigen::Index n = hf.rows(), d = hf.cols();
  if (n < 2) throw Error(ErrorKind::kBatchSize, "batch needs at least 2 examples, got " + std::to_string(n));
  for (const Eigen::MatrixXd* m : {&hb, &tf, &tb, &htau_f, &htau_b})
    if (m->rows() != n || m->cols() != d)
      throw Error(ErrorKind::kInputLayout, "batch embeddings differ in shape");
}

LossMasks negative_masks(const Graph& g, const std::vector<Triple>& batch) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  LossMasks m;
  m.l1 = Matrix<std::uint8_t>::Ones(n, n);
  m.l2 = Matrix<std::uint8_t>::Ones(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Triple& a = batch[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Triple& b = batch[static_cast<std::size_t>(j)];
      if (b.head == a.tail || g.has_triple(Triple{b.head, b.relation, a.tail})) m.l1(i, j) = 0;
      if (b.tail == a.head || g.has_triple(Triple{a.head, b.relation, b.tail})) m.l2(i, j) = 0;
    }
  }
  return m;
}

LossReport make_report(double l1, double l2, double l3, double temperature, double beta, bool use_l2) {
  LossReport r;
  r.l1 = l1;
  r.l2 = l2;
  r.l3 = l3;
  r.total = (use_l2 ? l1 + l2 : l1) + beta * l3;
  r.temperature = temperature;
  r.beta = beta;
  return r;
}

LossReport batch_losses(const BatchEmbeddings& be, double temperature, double beta, const LossMasks& masks) {
  be.validate();
  if (!(temperature > 0)) throw Error(ErrorKind::kConfiguration, "temperature must be > 0");
  if (!(beta >= 0)) throw Error(ErrorKind::kConfiguration, "beta must be >= 0");
  Tape<double> tape(false);
  auto c = [&](const Eigen::MatrixXd& m) { return tape.constant(Matrix<double>(m)); };
  const LossVars<double> v =
      contrastive_loss(tape, c(be.hf), c(be.hb), c(be.tf), c(be.tb), c(be.htau_f), c(be.htau_b), masks, temperature,
                       beta, true);
  return make_report(tape.scalar(v.l1), tape.scalar(v.l2), tape.scalar(v.l3), temperature, beta);
}

std::vector<std::vector<int>> make_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch) {
  if (batch_size < 2) throw Error(ErrorKind::kBatchSize, "batch size must be at least 2");
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0xBA7C4u};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < n; i += bs) {
    const std::size_t end = std::min(n, i + bs);
    if (end - i < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

double scheduled_lr(double base, std::int64_t step, int warmup, std::int64_t total_steps) {
  if (warmup > 0 && step <= warmup) return base * static_cast<double>(step) / warmup;
  if (total_steps <= warmup) return base;
  const double left = static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
  return base * std::max(0.0, left);
}

bool decays(const std::string& name) {
  const auto dot = name.find_last_of('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  static const std::set<std::string> kept = {"bias", "gain", "bq", "bk", "bv", "bo", "b1", "b2"};
  return kept.count(leaf) == 0;
}

Tokenizer build_link_tokenizer(const Graph& g, const PromptRuleBase& rules, int min_count) {
  std::vector<Tokens> corpus;
  for (const EntityRecord& e : g.entities()) {
    corpus.push_back(tokenize(e.name));
    corpus.push_back(tokenize(e.description));
  }
  for (const RelationRecord& r : g.relations()) corpus.push_back(tokenize(r.text));
  for (const PromptTemplate& t : rules.templates()) {
    corpus.push_back(verbalize("", t, Direction::kForward));
    corpus.push_back(verbalize("", t, Direction::kBackward));
  }
  return Tokenizer::build(corpus, min_count);
}

InputBuilder::InputBuilder(const Tokenizer& tok, const Graph& g, const PromptRuleBase& rules, int max_len,
                           int desc_tokens)
    : tok_(tok), g_(g), rules_(rules), max_len_(max_len) {
  const int limit = std::max(1, std::min(desc_tokens, max_len - 2));
  desc_.reserve(g.entity_count());
  for (std::size_t e = 0; e < g.entity_count(); ++e) desc_.push_back(prepare_description(static_cast<int>(e), g, limit));
}

EncoderInput InputBuilder::entity(int e) const {
  return entity_input(tok_, desc_.at(static_cast<std::size_t>(e)), max_len_);
}

EncoderInput InputBuilder::expression(const Edge& e, int template_index) const {
  const Tokens v = verbalize(g_, e, rules_.at(static_cast<std::size_t>(template_index)));
  const int budget = max_len_ - 3 - static_cast<int>(v.size());
  if (budget < 0) throw Error(ErrorKind::kInputLayout, "relational expression longer than max_len");
  const Tokens& d = desc_.at(static_cast<std::size_t>(e.entity));
  const Tokens prefix(d.begin(), d.begin() + std::min<std::ptrdiff_t>(budget, static_cast<std::ptrdiff_t>(d.size())));
  return expression_input(tok_, v, prefix, max_len_);
}

EncoderInput InputBuilder::bare(int template_index, Direction d) const {
  int pos = 0;
  const Tokens b = bare_template(rules_.at(static_cast<std::size_t>(template_index)), d, &pos);
  return sequence_input(tok_, b, pos, d == Direction::kForward ? PoolingSite::kTailMarker : PoolingSite::kHeadMarker,
                        max_len_);
}

template <typename T>
Eigen::MatrixXd encode_pooled(Encoder<T>& enc, const std::vector<EncoderInput>& inputs, int workers,
                              std::size_t chunk) {
  tune_allocator();
  const auto n = inputs.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), enc.config().model_dim);
  if (n == 0) return out;
  chunk = std::max<std::size_t>(1, chunk);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  auto work = [&](std::size_t first_chunk, std::size_t stride) {
    for (std::size_t c = first_chunk; c < chunks; c += stride) {
      const std::size_t b = c * chunk, e = std::min(n, b + chunk);
      std::vector<EncoderInput> part(inputs.begin() + static_cast<std::ptrdiff_t>(b),
                                     inputs.begin() + static_cast<std::ptrdiff_t>(e));
      Tape<T> tape(false);
      EncoderGraph<T> graph(tape, enc);
      const auto enc_out = graph.encode_batch(part);
      out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
          tape.value(enc_out.pooled).template cast<double>();
    }
  };
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || chunks == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(w);
    for (std::size_t i = 0; i < w; ++i)
      pool.emplace_back([&, i] {
        try {
          work(i, w);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string to_json_line(const EpochLog& log) {
  nlohmann::json j;
  j["epoch"] = log.epoch;
  j["L1"] = log.loss.l1;
  j["L2"] = log.loss.l2;
  j["L3"] = log.loss.l3;
  j["L"] = log.loss.total;
  j["lr"] = log.lr;
  j["seed"] = log.seed;
  return j.dump();
}

std::string write_batch_dump(const std::filesystem::path& dir, const Graph& g, const std::vector<Triple>& triples,
                             int epoch, std::int64_t step, double l1, double l2, double l3) {
  const std::filesystem::path base = dir.empty() ? std::filesystem::temp_directory_path() : dir;
  std::filesystem::create_directories(base);
  const auto path = base / ("nonfinite_epoch" + std::to_string(epoch) + "_step" + std::to_string(step) + ".json");
  nlohmann::json j;
  j["epoch"] = epoch;
  j["step"] = step;
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(fmt::format("{}", x)); };
  j["L1"] = num(l1);
  j["L2"] = num(l2);
  j["L3"] = num(l3);
  j["triples"] = nlohmann::json::array();
  for (const Triple& t : triples)
    j["triples"].push_back({g.entity(t.head).id, g.relation(t.relation).id, g.entity(t.tail).id});
  std::ofstream(path) << j.dump(2) << '\n';
  return path.string();
}

template class KgTrainer<float>;
template class KgTrainer<double>;
template Eigen::MatrixXd encode_pooled<float>(Encoder<float>&, const std::vector<EncoderInput>&, int, std::size_t);
template Eigen::MatrixXd encode_pooled<double>(Encoder<double>&, const std::vector<EncoderInput>&, int, std::size_t);

}  // namespace bilink
