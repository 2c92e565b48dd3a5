#include <doctest.h>

#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "bilink/checkpoint.hpp"
#include "bilink/cli.hpp"
#include "bilink/error.hpp"
#include "test_support.hpp"

using namespace bilink;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "bilink");
  ::setenv("BILINK_LOG", "warn", 1);
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  spdlog::set_level(spdlog::level::warn);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<std::string> kTiny = {"--layers", "1",  "--heads",     "2",  "--model-dim", "16", "--ffn-dim", "32",
                                        "--max-len", "48", "--desc-tokens", "16", "--k-clusters", "2", "--epochs",  "1",
                                        "--batch-size", "8", "--em-rounds", "2"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

fs::path small_dataset(const std::string& name) {
  const fs::path dir = testing::temp_dir(name);
  std::ofstream(dir / "spec.json") << R"({"entity_count": 40, "seed": 3, "relations": [
    {"id": "sibling_of", "pattern": "symmetric", "density": 0.08},
    {"id": "parent_of", "density": 0.08},
    {"id": "child_of", "pattern": "inverse-of", "of": "parent_of"}]})";
  const auto r = run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "data").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  return dir;
}

template <typename A, typename B>
void check_same_params(A& a, B& b) {
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK((pa[i].second->value.template cast<double>().array() == pb[i].second->value.template cast<double>().array()).all());
  }
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"train", "--bogus"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  const auto r = run({"eval", "--data", "x"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--checkpoint") != std::string::npos);
  CHECK(run({"train", "--data", "x", "--out", "y", "--temperature", "-1"}).code == 2);
  CHECK(run({"train", "--data", "x", "--out", "y", "--set", "nonsense=1"}).code == 2);
  const fs::path dir = testing::temp_dir("cli_bad_config");
  std::ofstream(dir / "bad.conf") << "lr = 0.1\nmystery = 3\n";
  const auto bad = run({"synth", "--out", (dir / "o").string(), "--config", (dir / "bad.conf").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("mystery") != std::string::npos);
}

TEST_CASE("missing inputs are runtime failures") {
  const fs::path dir = testing::temp_dir("cli_missing");
  CHECK(run({"train", "--data", (dir / "none").string(), "--out", (dir / "run").string()}).code == 1);
}

TEST_CASE("synth writes a complete dataset") {
  const fs::path dir = small_dataset("cli_synth");
  for (const char* f : {"entities.jsonl", "triples.tsv", "splits.json", "templates.json", "seed_labels.tsv",
                        "pos_corpus.txt", "synth_report.json"})
    CHECK(fs::exists(dir / "data" / f));
  const auto report = nlohmann::json::parse(slurp(dir / "data" / "synth_report.json"));
  CHECK(report["entities"] == 40);
  CHECK(report["command"] == "synth");
  const auto again = run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "again").string()});
  REQUIRE(again.code == 0);
  CHECK(slurp(dir / "data" / "triples.tsv") == slurp(dir / "again" / "triples.tsv"));
  CHECK(slurp(dir / "data" / "splits.json") == slurp(dir / "again" / "splits.json"));
}

TEST_CASE("train then eval is deterministic end to end") {
  const fs::path dir = small_dataset("cli_e2e");
  const std::string data = (dir / "data").string();
  for (const char* run_name : {"a", "b"}) {
    const auto r = run(with_tiny({"train", "--data", data, "--out", (dir / run_name).string()}));
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto e = run(with_tiny({"eval", "--checkpoint", (dir / run_name / "model.json").string(), "--data", data,
                                  "--per-query", (dir / run_name / "ranks.tsv").string()}));
    REQUIRE(e.code == 0);
  }
  CHECK(slurp(dir / "a" / "model.json") == slurp(dir / "b" / "model.json"));
  CHECK(slurp(dir / "a" / "eval_test.json") == slurp(dir / "b" / "eval_test.json"));
  CHECK(slurp(dir / "a" / "ranks.tsv") == slurp(dir / "b" / "ranks.tsv"));
  const auto report = nlohmann::json::parse(slurp(dir / "a" / "eval_test.json"));
  CHECK(report.is_array());
  CHECK(report.size() >= 1);
  const auto log = slurp(dir / "a" / "train_log.jsonl");
  CHECK(log.find("\"epoch\"") != std::string::npos);
}

TEST_CASE("pos-pretrain output initialises training") {
  const fs::path dir = small_dataset("cli_pos");
  const std::string data = (dir / "data").string();
  REQUIRE(run(with_tiny({"pos-pretrain", "--data", data, "--out", (dir / "pos.json").string()})).code == 0);
  CHECK(fs::exists(dir / "pos.report.json"));
  REQUIRE(run(with_tiny({"train", "--data", data, "--out", (dir / "run").string(), "--init", (dir / "pos.json").string()}))
              .code == 0);
  CHECK(fs::exists(dir / "run" / "model.json"));
}

TEST_CASE("entity linking pipeline runs") {
  const fs::path dir = testing::temp_dir("cli_el");
  const std::vector<std::string> small = {"--layers", "1", "--heads", "2", "--model-dim", "16", "--ffn-dim", "32",
                                          "--max-len", "48", "--epochs", "1"};
  auto args = [&](std::vector<std::string> a) {
    a.insert(a.end(), small.begin(), small.end());
    return a;
  };
  REQUIRE(run(args({"el-build", "--synthetic", "--domains", "2", "--docs-per-domain", "70", "--out",
                    (dir / "data").string()}))
              .code == 0);
  const auto build = nlohmann::json::parse(slurp(dir / "data" / "el_build_report.json"));
  CHECK(build["documents"] == 140);
  REQUIRE(run(args({"el-train", "--data", (dir / "data").string(), "--out", (dir / "run").string()})).code == 0);
  REQUIRE(run(args({"el-eval", "--checkpoint", (dir / "run" / "el_model.json").string(), "--data",
                    (dir / "data").string()}))
              .code == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "run" / "el_eval_test.json"));
  CHECK(report[0]["MRR"].get<double>() > 0);
  CHECK(run({"el-build", "--out", (dir / "x").string()}).code == 2);
}

TEST_CASE("link model checkpoints round-trip exactly") {
  const Graph g = synth_kg(testing::tiny_spec(5));
  TrainConfig cfg = testing::tiny_config();
  LinkModel<float> model = testing::tiny_model<float>(g, cfg);
  const fs::path dir = testing::temp_dir("ckpt_link");
  save_link_model(model, dir / "m.json");
  LinkModel<double> back = load_link_model(dir / "m.json");
  check_same_params(model, back);
  CHECK(back.tok.size() == model.tok.size());
  CHECK(back.rules.size() == model.rules.size());
  CHECK(to_config_text(back.cfg) == to_config_text(model.cfg));
  LinkModel<float> cast = back.cast<float>();
  check_same_params(model, cast);

  std::ofstream(dir / "bad.json") << "{\"kind\": \"el\", \"version\": 1}";
  CHECK_THROWS_AS(load_link_model(dir / "bad.json"), Error);
  std::ofstream(dir / "future.json") << "{\"kind\": \"link\", \"version\": 99}";
  CHECK_THROWS_AS(load_link_model(dir / "future.json"), Error);
}

TEST_CASE("el and pretrained checkpoints round-trip exactly") {
  const ElCorpus corpus = synth_el_corpus(ElSynthSpec{1, 70, 1, 6});
  const DocumentCollection docs(corpus.documents);
  TrainConfig cfg = testing::tiny_config();
  cfg.max_len = 64;
  ElModel<float> model = init_el_model<float>(cfg, build_el_tokenizer(corpus.mentions, docs, 1));
  const fs::path dir = testing::temp_dir("ckpt_el");
  save_el_model(model, dir / "el.json");
  ElModel<double> back = load_el_model(dir / "el.json");
  check_same_params(model, back);
  CHECK(back.tok.size() == model.tok.size());

  EncoderConfig ec = cfg.encoder_config(model.tok.size());
  ec.pos_tags = 3;
  Encoder<double> enc(ec, 9);
  save_pretrained(enc, model.tok, dir / "pos.json");
  Tokenizer tok;
  Encoder<double> loaded = load_pretrained(dir / "pos.json", &tok);
  check_same_params(enc, loaded);
  CHECK(tok.size() == model.tok.size());
  CHECK_THROWS_AS(load_el_model(dir / "pos.json"), Error);
}
