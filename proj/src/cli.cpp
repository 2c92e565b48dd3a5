#include "bilink/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

#include "bilink/checkpoint.hpp"
#include "bilink/contrastive_trainer.hpp"
#include "bilink/el_retrieval.hpp"
#include "bilink/prompt_engine.hpp"
#include "bilink/ranking_eval.hpp"

namespace bilink {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

SynthSpec default_synth_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.entity_count = 200;
  spec.seed = seed;
  spec.relations = {{"sibling_of", RelationPattern::kSymmetric, {}, 0.05},
                    {"parent_of", RelationPattern::kPlain, {}, 0.05},
                    {"child_of", RelationPattern::kInverseOf, {"parent_of"}, 0.05}};
  return spec;
}

namespace {

// Options shared by every subcommand: a config file, key=value overrides and
// one flag per config key.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "train_config file (key = value lines)");
    app->add_option("--set", sets, "config override key=value (repeatable)");
    for (const std::string& key : config_keys()) {
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      std::string names = "--" + flag;
      if (key == "temperature") names += ",--temp";
      app->add_option(names, values[key], "config key " + key);
    }
  }

  // Applied over `base`: file, then --set, then the per-key flags.
  TrainConfig resolve(TrainConfig base) const {
    if (!config_file.empty()) base = load_train_config(config_file);
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(ErrorKind::kConfiguration, "--set expects key=value, got '" + kv + "'");
      set_config_value(base, kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [key, value] : values)
      if (!value.empty()) set_config_value(base, key, value);
    base.validate();
    return base;
  }

  bool given(const std::string& key) const {
    auto it = values.find(key);
    return it != values.end() && !it->second.empty();
  }
};

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
  out << text;
}

void emit_report(const std::string& body, const fs::path& path) {
  write_text(path, body + "\n");
  std::cout << body << std::endl;
}

PromptRuleBase rules_from(const std::string& templates, const fs::path& data) {
  if (!templates.empty()) return load_templates(templates);
  if (fs::exists(data / "templates.json")) return load_templates(data / "templates.json");
  return default_rule_base();
}

struct KgData {
  Graph graph;
  SplitSet split;
  SplitViews views;
};

KgData load_kg(const fs::path& data) {
  KgData d;
  d.graph = load_graph(data / "entities.jsonl", data / "triples.tsv");
  d.split = load_splits(d.graph, data / "splits.json");
  d.views = make_views(d.graph, d.split);
  return d;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string spec, out, split_mode = "transductive";
  double holdout = 0.2;
  int labels_per_type = 4;
};

int cmd_synth(const SynthArgs& a, const ConfigFlags& flags) {
  const TrainConfig cfg = flags.resolve(TrainConfig{});
  SynthSpec spec = default_synth_spec(cfg.seed);
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw Error(ErrorKind::kConfiguration, "cannot open synth spec " + a.spec);
    std::stringstream ss;
    ss << in.rdbuf();
    spec = parse_synth_spec(ss.str());
    if (flags.given("seed")) spec.seed = cfg.seed;
  }
  const Graph g = synth_kg(spec);
  SplitSet split;
  if (a.split_mode == "transductive") split = split_transductive(g, SplitRatios{}, cfg.seed);
  else if (a.split_mode == "inductive") split = split_inductive(g, a.holdout, cfg.seed);
  else throw Error(ErrorKind::kConfiguration, "split mode must be transductive or inductive");
  const fs::path out = a.out;
  fs::create_directories(out);
  save_graph(g, out / "entities.jsonl", out / "triples.tsv");
  save_splits(split, g, out / "splits.json");
  const PromptRuleBase rules = default_rule_base();
  save_templates(rules, out / "templates.json");
  const SplitViews views = make_views(g, split);
  const LabeledSeed labels = synth_seed_labels(views.train_graph, spec, rules, a.labels_per_type, cfg.seed);
  save_seed_labels(views.train_graph, labels, out / "seed_labels.tsv");
  std::string pos;
  for (const auto& line : synth_pos_corpus(g)) pos += line + "\n";
  write_text(out / "pos_corpus.txt", pos);

  ojson r;
  r["command"] = "synth";
  r["entities"] = g.entity_count();
  r["relations"] = g.relation_count();
  r["triples"] = g.triple_count();
  r["split_mode"] = a.split_mode;
  r["train"] = split.train.size();
  r["valid"] = split.valid.size();
  r["test"] = split.test.size();
  r["seed_labels"] = labels.labels.size();
  r["config_hash"] = config_hash(cfg);
  r["seed"] = cfg.seed;
  emit_report(r.dump(2), out / "synth_report.json");
  return 0;
}

// ---------------------------------------------------------------------------
// pos-pretrain

struct PosArgs {
  std::string data, out, templates;
};

int cmd_pos(const PosArgs& a, const ConfigFlags& flags) {
  const TrainConfig cfg = flags.resolve(TrainConfig{});
  const fs::path data = a.data;
  const KgData kg = load_kg(data);
  const PromptRuleBase rules = rules_from(a.templates, data).truncated(static_cast<std::size_t>(cfg.k_clusters));
  const Tokenizer tok = build_link_tokenizer(kg.views.train_graph, rules, cfg.min_count);
  const TaggedCorpus corpus = parse_tagged_corpus(read_lines(data / "pos_corpus.txt"));
  if (corpus.sentences.empty()) throw Error(ErrorKind::kData, "empty POS corpus");
  EncoderConfig ec = cfg.encoder_config(tok.size());
  ec.pos_tags = static_cast<int>(corpus.tags.size());
  Encoder<double> enc(ec, cfg.seed * 2 + 1);
  AdamW<double> opt(enc.parameters(), cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed ^ 0x905ULL);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto per_epoch = static_cast<std::int64_t>((corpus.sentences.size() + bs - 1) / bs);
  const std::int64_t total = per_epoch * cfg.epochs;
  double last = 0;
  std::ofstream log;
  fs::create_directories(fs::path(a.out).parent_path().empty() ? fs::path(".") : fs::path(a.out).parent_path());
  log.open(fs::path(a.out).replace_extension(".log.jsonl"), std::ios::binary);
  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<std::size_t> order(corpus.sentences.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    int n = 0;
    for (std::size_t s = 0; s < order.size(); s += bs) {
      std::vector<TaggedSentence> batch;
      for (std::size_t k = s; k < std::min(order.size(), s + bs); ++k) batch.push_back(corpus.sentences[order[k]]);
      const auto step = pos_pretrain_step(enc, tok, batch, &rng);
      if (!std::isfinite(step.loss)) throw Error(ErrorKind::kNonFiniteLoss, "non-finite POS loss");
      opt.step(scheduled_lr(cfg.lr, opt.steps() + 1, cfg.warmup_steps, total));
      sum += step.loss;
      ++n;
    }
    last = sum / std::max(1, n);
    ojson line;
    line["epoch"] = e;
    line["loss"] = last;
    line["seed"] = cfg.seed;
    log << line.dump() << '\n';
    spdlog::info("pos epoch {} loss {:.5f}", e, last);
  }
  save_pretrained(enc, tok, a.out);
  ojson r;
  r["command"] = "pos-pretrain";
  r["sentences"] = corpus.sentences.size();
  r["tags"] = corpus.tags;
  r["final_loss"] = last;
  r["config_hash"] = config_hash(cfg);
  r["seed"] = cfg.seed;
  emit_report(r.dump(2), fs::path(a.out).replace_extension(".report.json"));
  return 0;
}

// ---------------------------------------------------------------------------
// train / eval

struct TrainArgs {
  std::string data, out, init, templates, seed_labels;
};

template <typename T>
int train_as(const TrainArgs& a, const TrainConfig& cfg) {
  const fs::path data = a.data, out = a.out;
  const KgData kg = load_kg(data);
  const PromptRuleBase rules = rules_from(a.templates, data);
  Tokenizer tok;
  std::optional<Encoder<double>> init;
  if (!a.init.empty()) init = load_pretrained(a.init, &tok);
  else tok = build_link_tokenizer(kg.views.train_graph, rules, cfg.min_count);
  LinkModel<T> model = init_link_model<T>(cfg, tok, rules, init ? &*init : nullptr);
  std::optional<LabeledSeed> labels;
  const fs::path labels_path = !a.seed_labels.empty() ? fs::path(a.seed_labels) : data / "seed_labels.tsv";
  if (fs::exists(labels_path)) {
    // Labels may name templates beyond the first k_clusters; those are dropped.
    labels = load_seed_labels(kg.views.train_graph, rules, labels_path);
    const std::size_t before = labels->labels.size();
    std::erase_if(labels->labels, [&](const auto& l) { return model.rules.find(l.second) == nullptr; });
    if (labels->labels.size() < before)
      spdlog::warn("dropped {} seed labels naming templates outside the first {}", before - labels->labels.size(),
                   model.rules.size());
  }
  fs::create_directories(out);
  write_text(out / "train_config.txt", to_config_text(cfg));
  KgTrainer<T> trainer(model, kg.views.train_graph, labels ? &*labels : nullptr, out / "diagnostics");
  std::ofstream log(out / "train_log.jsonl", std::ios::binary);
  const auto logs = trainer.run(&log);
  save_link_model(model, out / "model.json");
  ojson r;
  r["command"] = "train";
  r["epochs"] = cfg.epochs;
  r["steps"] = trainer.total_steps();
  if (!logs.empty()) {
    r["L"] = logs.back().loss.total;
    r["L1"] = logs.back().loss.l1;
    r["L2"] = logs.back().loss.l2;
    r["L3"] = logs.back().loss.l3;
  }
  r["config_hash"] = config_hash(cfg);
  r["seed"] = cfg.seed;
  emit_report(r.dump(2), out / "train_report.json");
  return 0;
}

int cmd_train(const TrainArgs& a, const ConfigFlags& flags) {
  const TrainConfig cfg = flags.resolve(TrainConfig{});
  return cfg.precision == "double" ? train_as<double>(a, cfg) : train_as<float>(a, cfg);
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", out, per_query;
  bool no_sp2 = false;
};

template <typename T>
int eval_as(const EvalArgs& a, LinkModel<T> model) {
  const KgData kg = load_kg(a.data);
  const std::vector<int>& triples = a.split == "valid" ? kg.views.valid : kg.views.test;
  EvalOptions opt = eval_options(model.cfg);
  opt.use_sp2 = !a.no_sp2;
  const EvalResult r = evaluate(model, kg.views, triples, opt);
  const std::string body = eval_report_json(r, a.split, config_hash(model.cfg), model.cfg.seed);
  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / ("eval_" + a.split + ".json") : fs::path(a.out);
  emit_report(body, out);
  if (!a.per_query.empty()) write_per_query_tsv(r, a.per_query);
  return 0;
}

int cmd_eval(const EvalArgs& a, const ConfigFlags& flags) {
  if (a.split != "test" && a.split != "valid") throw Error(ErrorKind::kConfiguration, "split must be test or valid");
  LinkModel<double> model = load_link_model(a.checkpoint);
  model.cfg = flags.resolve(model.cfg);
  if (model.cfg.precision == "double") return eval_as<double>(a, std::move(model));
  return eval_as<float>(a, model.cast<float>());
}

// ---------------------------------------------------------------------------
// entity linking

struct ElBuildArgs {
  bool synthetic = false;
  std::string documents, mentions, out;
  ElSynthSpec synth;
};

int cmd_el_build(ElBuildArgs a, const ConfigFlags& flags) {
  const TrainConfig cfg = flags.resolve(TrainConfig{});
  const fs::path out = a.out;
  ElCorpus corpus;
  if (a.synthetic) {
    a.synth.seed = cfg.seed;
    corpus = synth_el_corpus(a.synth);
  } else {
    if (a.documents.empty() || a.mentions.empty())
      throw Error(ErrorKind::kConfiguration, "el-build needs --documents and --mentions, or --synthetic");
    corpus.documents = load_documents(a.documents);
    corpus.mentions = load_mentions(a.mentions);
  }
  const DocumentCollection docs(corpus.documents);
  CandidateOptions opt;
  opt.k = static_cast<std::size_t>(cfg.el_candidates);
  opt.context = cfg.el_context;
  opt.force_gold = cfg.el_force_gold;
  std::vector<CandidateSet> sets;
  std::size_t bm25 = 0, pad = 0, forced = 0;
  for (const MentionRecord& m : corpus.mentions) {
    auto cs = build_candidates(m, docs, opt, cfg.seed);
    if (!cs) continue;
    for (Provenance p : cs->provenance)
      ++(p == Provenance::kBm25 ? bm25 : p == Provenance::kRandomPad ? pad : forced);
    sets.push_back(std::move(*cs));
  }
  const ElSplits splits = build_inductive_splits(corpus.mentions, ElSplitRatios{}, cfg.seed);
  fs::create_directories(out);
  save_documents(corpus.documents, out / "documents.jsonl");
  save_mentions(corpus.mentions, out / "mentions.jsonl");
  save_candidates(sets, out / "candidates.jsonl");
  save_el_splits(splits, out / "el_splits.json");
  ojson r;
  r["command"] = "el-build";
  r["documents"] = corpus.documents.size();
  r["mentions"] = corpus.mentions.size();
  r["candidate_sets"] = sets.size();
  r["dropped"] = corpus.mentions.size() - sets.size();
  r["bm25"] = bm25;
  r["random_pad"] = pad;
  r["forced"] = forced;
  r["train"] = splits.train.size();
  r["valid"] = splits.valid.size();
  r["test"] = splits.test.size();
  r["config_hash"] = config_hash(cfg);
  r["seed"] = cfg.seed;
  emit_report(r.dump(2), out / "el_build_report.json");
  return 0;
}

struct ElData {
  DocumentCollection docs;
  std::vector<MentionRecord> mentions;
  std::vector<CandidateSet> sets;
  ElSplits splits;

  std::vector<MentionRecord> subset(const std::vector<std::string>& ids) const {
    const std::set<std::string> keep(ids.begin(), ids.end());
    std::vector<MentionRecord> out;
    for (const MentionRecord& m : mentions)
      if (keep.count(m.mention_id)) out.push_back(m);
    return out;
  }
};

ElData load_el(const fs::path& data) {
  return ElData{DocumentCollection(load_documents(data / "documents.jsonl")), load_mentions(data / "mentions.jsonl"),
                load_candidates(data / "candidates.jsonl"), load_el_splits(data / "el_splits.json")};
}

struct ElTrainArgs {
  std::string data, out;
};

template <typename T>
int el_train_as(const ElTrainArgs& a, const TrainConfig& cfg) {
  const ElData d = load_el(a.data);
  const auto train = d.subset(d.splits.train);
  ElModel<T> model = init_el_model<T>(cfg, build_el_tokenizer(train, d.docs, cfg.min_count));
  ElTrainer<T> trainer(model, train, d.sets, d.docs);
  const fs::path out = a.out;
  fs::create_directories(out);
  write_text(out / "train_config.txt", to_config_text(cfg));
  std::ofstream log(out / "el_train_log.jsonl", std::ios::binary);
  double last = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    last = trainer.train_epoch(e);
    ojson line;
    line["epoch"] = e;
    line["loss"] = last;
    line["seed"] = cfg.seed;
    log << line.dump() << '\n' << std::flush;
    spdlog::info("el epoch {} loss {:.5f}", e, last);
  }
  save_el_model(model, out / "el_model.json");
  ojson r;
  r["command"] = "el-train";
  r["epochs"] = cfg.epochs;
  r["steps"] = trainer.steps();
  r["final_loss"] = last;
  r["config_hash"] = config_hash(cfg);
  r["seed"] = cfg.seed;
  emit_report(r.dump(2), out / "el_train_report.json");
  return 0;
}

int cmd_el_train(const ElTrainArgs& a, const ConfigFlags& flags) {
  const TrainConfig cfg = flags.resolve(TrainConfig{});
  return cfg.precision == "double" ? el_train_as<double>(a, cfg) : el_train_as<float>(a, cfg);
}

struct ElEvalArgs {
  std::string checkpoint, data, split = "test", out;
};

template <typename T>
int el_eval_as(const ElEvalArgs& a, ElModel<T> model) {
  const ElData d = load_el(a.data);
  const auto& ids = a.split == "train" ? d.splits.train : a.split == "valid" ? d.splits.valid : d.splits.test;
  const RankingMetrics m = el_evaluate(model, d.subset(ids), d.sets, d.docs);
  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / ("el_eval_" + a.split + ".json") : fs::path(a.out);
  emit_report(el_report_json(m, a.split, config_hash(model.cfg), model.cfg.seed), out);
  return 0;
}

int cmd_el_eval(const ElEvalArgs& a, const ConfigFlags& flags) {
  if (a.split != "test" && a.split != "valid" && a.split != "train")
    throw Error(ErrorKind::kConfiguration, "split must be train, valid or test");
  ElModel<double> model = load_el_model(a.checkpoint);
  model.cfg = flags.resolve(model.cfg);
  if (model.cfg.precision == "double") return el_eval_as<double>(a, std::move(model));
  return el_eval_as<float>(a, model.cast<float>());
}

void setup_logging() {
  auto logger = spdlog::get("bilink");
  if (!logger) logger = spdlog::stderr_color_mt("bilink");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("BILINK_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

fs::path write_diagnostic(const fs::path& dir, int argc, const char* const* argv, const std::string& what) {
  std::error_code ec;
  fs::path base = dir.empty() ? fs::temp_directory_path(ec) : dir;
  fs::create_directories(base, ec);
  const fs::path path = base / ("bilink-error-" + std::to_string(::getpid()) + ".txt");
  std::ofstream out(path);
  for (int i = 0; i < argc; ++i) out << (i ? " " : "") << argv[i];
  out << "\n" << what << "\n";
  return path;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  setup_logging();
  tune_allocator();
  CLI::App app{"bilink: bidirectional link prediction and entity linking"};
  app.require_subcommand(1);

  std::map<std::string, ConfigFlags> flags;
  auto sub = [&](const std::string& name, const std::string& help) {
    CLI::App* s = app.add_subcommand(name, help);
    flags[name].attach(s);
    return s;
  };

  SynthArgs synth;
  CLI::App* s_synth = sub("synth", "generate a synthetic graph, splits, templates, seed labels and POS corpus");
  s_synth->add_option("--spec", synth.spec, "synthetic graph spec (JSON)");
  s_synth->add_option("--out", synth.out, "output directory")->required();
  s_synth->add_option("--split-mode", synth.split_mode, "transductive or inductive");
  s_synth->add_option("--holdout", synth.holdout, "held-out entity fraction (inductive)");
  s_synth->add_option("--labels-per-type", synth.labels_per_type, "seed labels per relation and direction");

  PosArgs pos;
  CLI::App* s_pos = sub("pos-pretrain", "pretrain the text encoder on POS tagging");
  s_pos->add_option("--data", pos.data, "dataset directory")->required();
  s_pos->add_option("--out", pos.out, "checkpoint path")->required();
  s_pos->add_option("--templates", pos.templates, "templates.json");

  TrainArgs train;
  CLI::App* s_train = sub("train", "train the link-prediction model");
  s_train->add_option("--data", train.data, "dataset directory")->required();
  s_train->add_option("--out", train.out, "run directory")->required();
  s_train->add_option("--init", train.init, "POS-pretrained checkpoint");
  s_train->add_option("--templates", train.templates, "templates.json");
  s_train->add_option("--seed-labels", train.seed_labels, "seed_labels.tsv");

  EvalArgs eval;
  CLI::App* s_eval = sub("eval", "filtered ranking evaluation");
  s_eval->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
  s_eval->add_option("--data", eval.data, "dataset directory")->required();
  s_eval->add_option("--split", eval.split, "test or valid");
  s_eval->add_option("--out", eval.out, "report path");
  s_eval->add_option("--per-query", eval.per_query, "per-query TSV path");
  s_eval->add_flag("--no-sp2", eval.no_sp2, "index lookup only");

  ElBuildArgs elb;
  CLI::App* s_elb = sub("el-build", "candidate sets and disjoint splits for entity linking");
  s_elb->add_flag("--synthetic", elb.synthetic, "generate a synthetic corpus");
  s_elb->add_option("--documents", elb.documents, "documents.jsonl");
  s_elb->add_option("--mentions", elb.mentions, "mentions.jsonl");
  s_elb->add_option("--out", elb.out, "output directory")->required();
  s_elb->add_option("--domains", elb.synth.domains, "synthetic domains");
  s_elb->add_option("--docs-per-domain", elb.synth.docs_per_domain, "synthetic documents per domain");
  s_elb->add_option("--mentions-per-entity", elb.synth.mentions_per_entity, "synthetic mentions per entity");

  ElTrainArgs elt;
  CLI::App* s_elt = sub("el-train", "train the mention and candidate encoders");
  s_elt->add_option("--data", elt.data, "el-build directory")->required();
  s_elt->add_option("--out", elt.out, "run directory")->required();

  ElEvalArgs ele;
  CLI::App* s_ele = sub("el-eval", "rank gold entities within candidate sets");
  s_ele->add_option("--checkpoint", ele.checkpoint, "model checkpoint")->required();
  s_ele->add_option("--data", ele.data, "el-build directory")->required();
  s_ele->add_option("--split", ele.split, "train, valid or test");
  s_ele->add_option("--out", ele.out, "report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }

  fs::path diag_dir;
  try {
    if (s_synth->parsed()) return diag_dir = synth.out, cmd_synth(synth, flags["synth"]);
    if (s_pos->parsed()) return diag_dir = fs::path(pos.out).parent_path(), cmd_pos(pos, flags["pos-pretrain"]);
    if (s_train->parsed()) return diag_dir = train.out, cmd_train(train, flags["train"]);
    if (s_eval->parsed()) return diag_dir = fs::path(eval.checkpoint).parent_path(), cmd_eval(eval, flags["eval"]);
    if (s_elb->parsed()) return diag_dir = elb.out, cmd_el_build(elb, flags["el-build"]);
    if (s_elt->parsed()) return diag_dir = elt.out, cmd_el_train(elt, flags["el-train"]);
    if (s_ele->parsed()) return diag_dir = fs::path(ele.checkpoint).parent_path(), cmd_el_eval(ele, flags["el-eval"]);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfiguration || e.kind() == ErrorKind::kParse) {
      std::cerr << "error: " << e.what() << std::endl;
      return 2;
    }
    const fs::path dump = write_diagnostic(diag_dir, argc, argv, e.what());
    std::cerr << "error: " << e.what() << " (diagnostics: " << dump.string() << ")" << std::endl;
    return 1;
  } catch (const std::exception& e) {
    const fs::path dump = write_diagnostic(diag_dir, argc, argv, e.what());
    std::cerr << "error: " << e.what() << " (diagnostics: " << dump.string() << ")" << std::endl;
    return 1;
  }
  return 2;
}

}  // namespace bilink
