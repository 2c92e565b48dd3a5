#include "bilink/checkpoint.hpp"

#include <json.hpp>

#include <fstream>

namespace bilink {

using nlohmann::json;

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw Error(ErrorKind::kParse, "tensor size does not match its shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  return m;
}

Eigen::VectorXd vector_from(const json& j) {
  const Eigen::MatrixXd m = matrix_from(j);
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

template <typename T>
json encoder_json(const Encoder<T>& enc) {
  const EncoderConfig& c = enc.config();
  json out;
  out["config"] = {{"layers", c.layers},       {"heads", c.heads},
                   {"model_dim", c.model_dim}, {"ffn_dim", c.ffn_dim},
                   {"max_len", c.max_len},     {"dropout", c.dropout},
                   {"pos_tags", c.pos_tags},   {"soft_prompts", c.soft_prompts},
                   {"vocab_size", c.vocab_size}};
  json tensors = json::object();
  for (auto& [name, p] : const_cast<Encoder<T>&>(enc).parameters())
    tensors[name] = matrix_json(p->value.template cast<double>());
  out["tensors"] = std::move(tensors);
  return out;
}

Encoder<double> encoder_from(const json& j) {
  const json& c = j.at("config");
  EncoderConfig ec;
  ec.layers = c.at("layers").get<int>();
  ec.heads = c.at("heads").get<int>();
  ec.model_dim = c.at("model_dim").get<int>();
  ec.ffn_dim = c.at("ffn_dim").get<int>();
  ec.max_len = c.at("max_len").get<int>();
  ec.dropout = c.at("dropout").get<double>();
  ec.pos_tags = c.at("pos_tags").get<int>();
  ec.soft_prompts = c.at("soft_prompts").get<int>();
  ec.vocab_size = c.at("vocab_size").get<int>();
  Encoder<double> enc(ec, 0);
  const json& tensors = j.at("tensors");
  for (auto& [name, p] : enc.parameters()) {
    if (!tensors.contains(name)) throw Error(ErrorKind::kParse, "checkpoint lacks tensor " + name);
    Eigen::MatrixXd v = matrix_from(tensors.at(name));
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw Error(ErrorKind::kParse, "tensor " + name + " has the wrong shape");
    p->value = std::move(v);
  }
  return enc;
}

json templates_json(const PromptRuleBase& rb) {
  json out = json::array();
  for (const PromptTemplate& t : rb.templates())
    out.push_back({{"id", t.id}, {"syntax_tag", t.syntax_tag}, {"forward", t.forward}, {"backward", t.backward}});
  return out;
}

PromptRuleBase templates_from(const json& j) {
  std::vector<PromptTemplate> ts;
  for (const json& t : j)
    ts.push_back(PromptTemplate{t.at("id").get<std::string>(), t.at("syntax_tag").get<std::string>(),
                                t.at("forward").get<std::string>(), t.at("backward").get<std::string>()});
  return PromptRuleBase(std::move(ts));
}

json g_theta_json(const ExpressionEncoder& g) {
  return {{"out_dim", g.config().out_dim},  {"hidden_dim", g.config().hidden_dim}, {"seed", g.config().seed},
          {"table", matrix_json(g.token_embeddings())},
          {"w1", matrix_json(g.w1())},      {"b1", matrix_json(g.b1())},
          {"w2", matrix_json(g.w2())},      {"b2", matrix_json(g.b2())}};
}

ExpressionEncoder g_theta_from(const json& j) {
  const Eigen::MatrixXd table = matrix_from(j.at("table"));
  ExpressionEncoder g(static_cast<int>(table.rows()), static_cast<int>(table.cols()),
                      ExpressionEncoderConfig{j.at("out_dim").get<int>(), j.at("hidden_dim").get<int>(),
                                              j.at("seed").get<std::uint64_t>()});
  g.set_token_embeddings(table);
  g.set_weights(matrix_from(j.at("w1")), vector_from(j.at("b1")), matrix_from(j.at("w2")), vector_from(j.at("b2")));
  return g;
}

json gmm_json(const GmmState& s) {
  json covs = json::array();
  for (const auto& c : s.covariances) covs.push_back(matrix_json(c));
  return {{"means", matrix_json(s.means)},
          {"covariances", std::move(covs)},
          {"priors", matrix_json(s.priors)},
          {"component_template", s.component_template}};
}

GmmState gmm_from(const json& j) {
  GmmState s;
  s.means = matrix_from(j.at("means"));
  for (const json& c : j.at("covariances")) s.covariances.push_back(matrix_from(c));
  s.priors = vector_from(j.at("priors"));
  s.component_template = j.at("component_template").get<std::vector<std::string>>();
  if (static_cast<int>(s.covariances.size()) != s.k() || s.means.rows() != s.k() ||
      static_cast<int>(s.component_template.size()) != s.k())
    throw Error(ErrorKind::kParse, "mixture component counts disagree");
  return s;
}

void write_json(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
  out << j.dump() << '\n';
}

json read_json(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path.filename().string() + ": " + e.what());
  }
  if (j.value("format_version", 0) != kCheckpointFormat)
    throw Error(ErrorKind::kParse, path.filename().string() + ": unsupported checkpoint format");
  if (j.value("kind", "") != kind)
    throw Error(ErrorKind::kParse, path.filename().string() + ": not a " + kind + " checkpoint");
  return j;
}

template <typename F>
auto parsing(const std::filesystem::path& path, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path.filename().string() + ": " + e.what());
  }
}

}  // namespace

void save_pretrained(const Encoder<double>& enc, const Tokenizer& tok, const std::filesystem::path& path) {
  json j;
  j["format_version"] = kCheckpointFormat;
  j["kind"] = "pretrained";
  j["vocabulary"] = tok.vocabulary();
  j["encoder"] = encoder_json(enc);
  write_json(j, path);
}

Encoder<double> load_pretrained(const std::filesystem::path& path, Tokenizer* tok) {
  const json j = read_json(path, "pretrained");
  return parsing(path, [&] {
    if (tok) *tok = Tokenizer::from_vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    return encoder_from(j.at("encoder"));
  });
}

template <typename T>
void save_link_model(const LinkModel<T>& m, const std::filesystem::path& path) {
  json j;
  j["format_version"] = kCheckpointFormat;
  j["kind"] = "link";
  j["config"] = to_config_text(m.cfg);
  j["vocabulary"] = m.tok.vocabulary();
  j["templates"] = templates_json(m.rules);
  j["expr"] = encoder_json(m.expr);
  if (!m.cfg.share_encoders) j["ent"] = encoder_json(m.ent);
  j["g_theta"] = g_theta_json(m.g_theta);
  if (m.gmm) j["gmm"] = gmm_json(*m.gmm);
  write_json(j, path);
}

LinkModel<double> load_link_model(const std::filesystem::path& path) {
  const json j = read_json(path, "link");
  return parsing(path, [&] {
    LinkModel<double> m;
    m.cfg = parse_train_config(j.at("config").get<std::string>());
    m.tok = Tokenizer::from_vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    m.rules = templates_from(j.at("templates"));
    m.expr = encoder_from(j.at("expr"));
    m.ent = m.cfg.share_encoders ? m.expr : encoder_from(j.at("ent"));
    m.g_theta = g_theta_from(j.at("g_theta"));
    if (j.contains("gmm")) m.gmm = gmm_from(j.at("gmm"));
    if (m.expr.config().vocab_size != m.tok.size())
      throw Error(ErrorKind::kParse, "checkpoint vocabulary and embedding table disagree");
    return m;
  });
}

template <typename T>
void save_el_model(const ElModel<T>& m, const std::filesystem::path& path) {
  json j;
  j["format_version"] = kCheckpointFormat;
  j["kind"] = "el";
  j["config"] = to_config_text(m.cfg);
  j["vocabulary"] = m.tok.vocabulary();
  j["mention"] = encoder_json(m.mention);
  j["candidate"] = encoder_json(m.candidate);
  write_json(j, path);
}

ElModel<double> load_el_model(const std::filesystem::path& path) {
  const json j = read_json(path, "el");
  return parsing(path, [&] {
    ElModel<double> m;
    m.cfg = parse_train_config(j.at("config").get<std::string>());
    m.tok = Tokenizer::from_vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    m.mention = encoder_from(j.at("mention"));
    m.candidate = encoder_from(j.at("candidate"));
    if (m.mention.config().vocab_size != m.tok.size())
      throw Error(ErrorKind::kParse, "checkpoint vocabulary and embedding table disagree");
    return m;
  });
}

template void save_link_model<float>(const LinkModel<float>&, const std::filesystem::path&);
template void save_link_model<double>(const LinkModel<double>&, const std::filesystem::path&);
template void save_el_model<float>(const ElModel<float>&, const std::filesystem::path&);
template void save_el_model<double>(const ElModel<double>&, const std::filesystem::path&);

}  // namespace bilink
