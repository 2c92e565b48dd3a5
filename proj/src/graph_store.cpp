#include "bilink/graph_store.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "bilink/error.hpp"

namespace bilink {

using nlohmann::json;

std::string relation_text_from_id(const std::string& id) {
  std::string s = id;
  std::replace(s.begin(), s.end(), '_', ' ');
  const auto first = s.find_first_not_of(' ');
  if (first == std::string::npos) return id;
  const auto last = s.find_last_not_of(' ');
  return s.substr(first, last - first + 1);
}

int Graph::add_entity(EntityRecord e) {
  if (e.id.empty()) throw Error(ErrorKind::kData, "entity with empty id");
  if (e.name.empty()) throw Error(ErrorKind::kData, "entity '" + e.id + "' has an empty name");
  const int idx = static_cast<int>(entities_.size());
  if (!entity_index_.emplace(e.id, idx).second) throw Error(ErrorKind::kData, "duplicate entity id '" + e.id + "'");
  entities_.push_back(std::move(e));
  adjacency_.emplace_back();
  return idx;
}

int Graph::add_relation(const std::string& id, std::optional<std::string> text) {
  if (auto it = relation_index_.find(id); it != relation_index_.end()) return it->second;
  if (id.empty()) throw Error(ErrorKind::kData, "relation with empty id");
  const int idx = static_cast<int>(relations_.size());
  relation_index_.emplace(id, idx);
  relations_.push_back({id, text ? *text : relation_text_from_id(id)});
  return idx;
}

int Graph::add_triple(Triple t) {
  const int nv = static_cast<int>(entities_.size());
  const int nr = static_cast<int>(relations_.size());
  if (t.head < 0 || t.head >= nv || t.tail < 0 || t.tail >= nv || t.relation < 0 || t.relation >= nr)
    throw Error(ErrorKind::kReferentialIntegrity, "triple references an unknown entity or relation");
  const int idx = static_cast<int>(triples_.size());
  if (!triple_index_.emplace(t, idx).second)
    throw Error(ErrorKind::kData, "duplicate triple (" + entities_[t.head].id + ", " + relations_[t.relation].id +
                                      ", " + entities_[t.tail].id + ")");
  triples_.push_back(t);
  adjacency_[t.head].emplace_back(t.relation, t.tail);
  if (t.tail != t.head) adjacency_[t.tail].emplace_back(t.relation, t.head);
  return idx;
}

bool Graph::has_triple(const Triple& t) const { return triple_index_.count(t) > 0; }

std::optional<int> Graph::find_triple(const Triple& t) const {
  auto it = triple_index_.find(t);
  if (it == triple_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Graph::find_entity(const std::string& id) const {
  auto it = entity_index_.find(id);
  if (it == entity_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Graph::find_relation(const std::string& id) const {
  auto it = relation_index_.find(id);
  if (it == relation_index_.end()) return std::nullopt;
  return it->second;
}

int Graph::entity_index(const std::string& id) const {
  if (auto i = find_entity(id)) return *i;
  throw Error(ErrorKind::kReferentialIntegrity, "unknown entity '" + id + "'");
}

int Graph::relation_index(const std::string& id) const {
  if (auto i = find_relation(id)) return *i;
  throw Error(ErrorKind::kReferentialIntegrity, "unknown relation '" + id + "'");
}

std::vector<int> Graph::neighbors(int entity) const {
  auto adj = adjacency_.at(static_cast<std::size_t>(entity));
  std::sort(adj.begin(), adj.end(), [&](const auto& a, const auto& b) {
    const auto& ra = relations_[a.first].id;
    const auto& rb = relations_[b.first].id;
    if (ra != rb) return ra < rb;
    return entities_[a.second].id < entities_[b.second].id;
  });
  std::vector<int> out;
  std::unordered_set<int> seen;
  for (const auto& [r, n] : adj)
    if (n != entity && seen.insert(n).second) out.push_back(n);
  return out;
}

Graph Graph::restrict(const std::vector<int>* entity_subset, const std::vector<int>& triple_indices) const {
  Graph g;
  std::vector<int> remap(entities_.size(), -1);
  if (entity_subset) {
    for (int e : *entity_subset) remap[e] = g.add_entity(entities_.at(e));
  } else {
    for (std::size_t e = 0; e < entities_.size(); ++e) remap[e] = g.add_entity(entities_[e]);
  }
  for (const auto& r : relations_) g.add_relation(r.id, r.text);
  for (int i : triple_indices) {
    const Triple& t = triples_.at(static_cast<std::size_t>(i));
    if (remap[t.head] < 0 || remap[t.tail] < 0)
      throw Error(ErrorKind::kReferentialIntegrity, "restricted triple leaves the entity subset");
    g.add_triple({remap[t.head], t.relation, remap[t.tail]});
  }
  return g;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::kData, "cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + p.string());
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::string where(const std::filesystem::path& p, std::size_t line) {
  return p.filename().string() + ":" + std::to_string(line);
}

}  // namespace

Graph load_graph(const std::filesystem::path& entities_path, const std::filesystem::path& triples_path) {
  Graph g;
  {
    auto in = open_in(entities_path);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      strip_cr(line);
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        throw Error(ErrorKind::kParse, where(entities_path, no) + ": malformed JSON");
      }
      if (!obj.is_object() || !obj.contains("id") || !obj.contains("name") || !obj["id"].is_string() ||
          !obj["name"].is_string())
        throw Error(ErrorKind::kParse, where(entities_path, no) + ": expected string fields id and name");
      std::string desc;
      if (obj.contains("description")) {
        if (!obj["description"].is_string())
          throw Error(ErrorKind::kParse, where(entities_path, no) + ": description must be a string");
        desc = obj["description"].get<std::string>();
      }
      try {
        g.add_entity({obj["id"].get<std::string>(), obj["name"].get<std::string>(), std::move(desc)});
      } catch (const Error& e) {
        throw Error(ErrorKind::kParse, where(entities_path, no) + ": " + e.what());
      }
    }
  }
  auto in = open_in(triples_path);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    strip_cr(line);
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 3 || cols[0].empty() || cols[1].empty() || cols[2].empty())
      throw Error(ErrorKind::kParse, where(triples_path, no) + ": expected head<TAB>relation<TAB>tail");
    const auto h = g.find_entity(cols[0]);
    const auto t = g.find_entity(cols[2]);
    if (!h || !t)
      throw Error(ErrorKind::kReferentialIntegrity,
                  where(triples_path, no) + ": unknown entity '" + (h ? cols[2] : cols[0]) + "'");
    const int r = g.add_relation(cols[1]);
    if (g.has_triple({*h, r, *t})) throw Error(ErrorKind::kParse, where(triples_path, no) + ": duplicate triple");
    g.add_triple({*h, r, *t});
  }
  return g;
}

void save_graph(const Graph& g, const std::filesystem::path& entities_path, const std::filesystem::path& triples_path) {
  {
    auto out = open_out(entities_path);
    for (const auto& e : g.entities())
      out << json{{"id", e.id}, {"name", e.name}, {"description", e.description}}.dump() << '\n';
  }
  auto out = open_out(triples_path);
  for (const auto& t : g.triples())
    out << g.entity(t.head).id << '\t' << g.relation(t.relation).id << '\t' << g.entity(t.tail).id << '\n';
}

// ---------------------------------------------------------------------------
// Splits

namespace {

std::vector<int> shuffled_range(std::size_t n, std::mt19937_64& rng) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

}  // namespace

SplitSet split_transductive(const Graph& g, SplitRatios ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.valid > 0 && ratios.test > 0) ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
    throw Error(ErrorKind::kConfiguration, "split ratios must be positive and sum to 1");
  const auto n = static_cast<long long>(g.triple_count());
  const long long n_valid = std::llround(ratios.valid * static_cast<double>(n));
  const long long n_test = std::llround(ratios.test * static_cast<double>(n));
  if (n_valid + n_test >= n) throw Error(ErrorKind::kInfeasibleSplit, "graph too small for the requested ratios");

  std::mt19937_64 rng(seed);
  const auto order = shuffled_range(g.triple_count(), rng);
  std::vector<int> degree(g.entity_count(), 0);
  for (const auto& t : g.triples()) {
    ++degree[t.head];
    if (t.tail != t.head) ++degree[t.tail];
  }
  std::vector<char> held(g.triple_count(), 0);
  SplitSet s;
  s.mode = SplitMode::kTransductive;
  s.seed = seed;
  for (int idx : order) {
    const bool want_test = static_cast<long long>(s.test.size()) < n_test;
    const bool want_valid = static_cast<long long>(s.valid.size()) < n_valid;
    if (!want_test && !want_valid) break;
    const Triple& t = g.triple(idx);
    if (degree[t.head] < 2 || degree[t.tail] < 2) continue;
    --degree[t.head];
    if (t.tail != t.head) --degree[t.tail];
    held[idx] = 1;
    (want_test ? s.test : s.valid).push_back(idx);
  }
  if (static_cast<long long>(s.test.size()) < n_test || static_cast<long long>(s.valid.size()) < n_valid)
    throw Error(ErrorKind::kInfeasibleSplit, "entity coverage cannot be kept for the requested valid/test sizes");
  for (int i = 0; i < static_cast<int>(g.triple_count()); ++i)
    if (!held[i]) s.train.push_back(i);
  std::sort(s.valid.begin(), s.valid.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

namespace {

void finish_inductive(const Graph& g, SplitSet& s) {
  std::vector<int> eval_triples = s.valid;
  eval_triples.insert(eval_triples.end(), s.test.begin(), s.test.end());
  std::sort(eval_triples.begin(), eval_triples.end());
  s.eval_graph = g.restrict(&s.holdout_entities, eval_triples);
}

}  // namespace

SplitSet split_inductive(const Graph& g, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw Error(ErrorKind::kConfiguration, "holdout_fraction must lie in (0, 1)");
  const auto nv = g.entity_count();
  if (nv < 2) throw Error(ErrorKind::kInfeasibleSplit, "need at least two entities");
  const auto target = static_cast<std::size_t>(
      std::clamp<long long>(std::llround(holdout_fraction * static_cast<double>(nv)), 1, static_cast<long long>(nv) - 1));

  std::mt19937_64 rng(seed);
  const auto order = shuffled_range(nv, rng);
  std::vector<char> in_eval(nv, 0);
  std::vector<char> queued(nv, 0);
  std::size_t taken = 0;
  for (int start : order) {
    if (taken >= target) break;
    if (queued[start]) continue;
    std::deque<int> queue{start};
    queued[start] = 1;
    while (!queue.empty() && taken < target) {
      const int e = queue.front();
      queue.pop_front();
      in_eval[e] = 1;
      ++taken;
      auto nbrs = g.neighbors(e);
      std::sort(nbrs.begin(), nbrs.end());
      for (int n : nbrs)
        if (!queued[n]) {
          queued[n] = 1;
          queue.push_back(n);
        }
    }
    // Entities queued but never reached stay on the training side.
    for (int e : queue) queued[e] = 0;
  }

  SplitSet s;
  s.mode = SplitMode::kInductive;
  s.seed = seed;
  std::vector<int> eval_triples;
  std::set<int> train_rel, eval_rel;
  for (int i = 0; i < static_cast<int>(g.triple_count()); ++i) {
    const Triple& t = g.triple(i);
    if (in_eval[t.head] && in_eval[t.tail]) {
      eval_triples.push_back(i);
      eval_rel.insert(t.relation);
    } else if (!in_eval[t.head] && !in_eval[t.tail]) {
      s.train.push_back(i);
      train_rel.insert(t.relation);
    }
  }
  if (eval_triples.empty()) throw Error(ErrorKind::kInfeasibleSplit, "evaluation subgraph has no triples");
  if (s.train.empty()) throw Error(ErrorKind::kInfeasibleSplit, "training subgraph has no triples");
  std::vector<int> shared;
  std::set_intersection(train_rel.begin(), train_rel.end(), eval_rel.begin(), eval_rel.end(),
                        std::back_inserter(shared));
  if (shared.empty()) throw Error(ErrorKind::kInfeasibleSplit, "training and evaluation relation sets are disjoint");

  std::shuffle(eval_triples.begin(), eval_triples.end(), rng);
  const std::size_t n_valid = eval_triples.size() / 2;
  s.valid.assign(eval_triples.begin(), eval_triples.begin() + static_cast<long>(n_valid));
  s.test.assign(eval_triples.begin() + static_cast<long>(n_valid), eval_triples.end());
  std::sort(s.valid.begin(), s.valid.end());
  std::sort(s.test.begin(), s.test.end());
  for (std::size_t e = 0; e < nv; ++e)
    if (in_eval[e]) s.holdout_entities.push_back(static_cast<int>(e));
  finish_inductive(g, s);
  return s;
}

void save_splits(const SplitSet& s, const Graph& g, const std::filesystem::path& path) {
  json j;
  j["mode"] = s.mode == SplitMode::kTransductive ? "transductive" : "inductive";
  j["seed"] = s.seed;
  j["train"] = s.train;
  j["valid"] = s.valid;
  j["test"] = s.test;
  if (s.mode == SplitMode::kInductive) {
    std::vector<std::string> ids;
    for (int e : s.holdout_entities) ids.push_back(g.entity(e).id);
    j["holdout_entities"] = ids;
  }
  auto out = open_out(path);
  out << j.dump(1) << '\n';
}

SplitSet load_splits(const Graph& g, const std::filesystem::path& path) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  SplitSet s;
  try {
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "transductive") {
      s.mode = SplitMode::kTransductive;
    } else if (mode == "inductive") {
      s.mode = SplitMode::kInductive;
    } else {
      throw Error(ErrorKind::kParse, path.string() + ": unknown split mode '" + mode + "'");
    }
    s.seed = j.value("seed", std::uint64_t{0});
    s.train = j.at("train").get<std::vector<int>>();
    s.valid = j.at("valid").get<std::vector<int>>();
    s.test = j.at("test").get<std::vector<int>>();
    if (s.mode == SplitMode::kInductive)
      for (const auto& id : j.at("holdout_entities").get<std::vector<std::string>>())
        s.holdout_entities.push_back(g.entity_index(id));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  const int n = static_cast<int>(g.triple_count());
  for (const auto* part : {&s.train, &s.valid, &s.test})
    for (int i : *part)
      if (i < 0 || i >= n) throw Error(ErrorKind::kReferentialIntegrity, path.string() + ": triple index out of range");
  std::sort(s.holdout_entities.begin(), s.holdout_entities.end());
  if (s.mode == SplitMode::kInductive) finish_inductive(g, s);
  return s;
}

SplitViews make_views(const Graph& g, const SplitSet& s) {
  SplitViews v;
  if (s.mode == SplitMode::kTransductive) {
    v.train_graph = g.restrict(nullptr, s.train);
    v.eval_graph = g;
    v.eval_context = v.train_graph;
    v.valid = s.valid;
    v.test = s.test;
    return v;
  }
  std::vector<char> in_eval(g.entity_count(), 0);
  for (int e : s.holdout_entities) in_eval[e] = 1;
  std::vector<int> train_entities;
  for (int e = 0; e < static_cast<int>(g.entity_count()); ++e)
    if (!in_eval[e]) train_entities.push_back(e);
  v.train_graph = g.restrict(&train_entities, s.train);
  v.eval_graph = s.eval_graph;
  v.eval_context = g.restrict(&s.holdout_entities, s.valid);
  auto locate = [&](int i) {
    const Triple& t = g.triple(i);
    const Triple mapped{v.eval_graph.entity_index(g.entity(t.head).id), t.relation,
                        v.eval_graph.entity_index(g.entity(t.tail).id)};
    if (auto j = v.eval_graph.find_triple(mapped)) return *j;
    throw Error(ErrorKind::kReferentialIntegrity, "evaluation triple missing from the evaluation graph");
  };
  for (int i : s.valid) v.valid.push_back(locate(i));
  for (int i : s.test) v.test.push_back(locate(i));
  return v;
}

// ---------------------------------------------------------------------------
// Synthetic graphs

namespace {

const std::vector<std::string>& clan_nouns() {
  static const std::vector<std::string> v = {"valley", "river", "harbor", "forest", "mountain", "desert", "island",
                                             "meadow"};
  return v;
}

const std::vector<std::string>& traits() {
  static const std::vector<std::string> v = {"quiet", "bold", "gentle", "clever", "proud", "calm", "eager", "humble"};
  return v;
}

const std::vector<std::string>& roles() {
  static const std::vector<std::string> v = {"farmer", "weaver",  "merchant", "sailor",
                                             "scholar", "healer", "smith",    "hunter"};
  return v;
}

RelationPattern parse_pattern(const std::string& s) {
  if (s == "plain") return RelationPattern::kPlain;
  if (s == "symmetric") return RelationPattern::kSymmetric;
  if (s == "inverse-of") return RelationPattern::kInverseOf;
  if (s == "compositional") return RelationPattern::kCompositional;
  throw Error(ErrorKind::kConfiguration, "unknown relation pattern '" + s + "'");
}

int auto_group_count(const SynthSpec& spec) {
  double dmin = 1.0;
  for (const auto& r : spec.relations)
    if (r.pattern == RelationPattern::kPlain || r.pattern == RelationPattern::kSymmetric) dmin = std::min(dmin, r.density);
  int g = static_cast<int>(std::lround(1.0 / dmin));
  g += g % 2;
  int cap = spec.entity_count / 2;
  cap -= cap % 2;
  return std::max(2, std::min(g, std::max(cap, 2)));
}

std::string make_name(std::mt19937_64& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::string s;
  for (int i = 0; i < 3; ++i) {
    s.push_back(consonants[rng() % consonants.size()]);
    s.push_back(vowels[rng() % vowels.size()]);
  }
  return s;
}

}  // namespace

void SynthSpec::validate() const {
  if (entity_count < 2) throw Error(ErrorKind::kConfiguration, "entity_count must be at least 2");
  if (relations.empty()) throw Error(ErrorKind::kConfiguration, "synthetic spec declares no relations");
  std::map<std::string, const SynthRelation*> by_id;
  for (const auto& r : relations) {
    if (r.id.empty()) throw Error(ErrorKind::kConfiguration, "relation with empty id");
    if (!(r.density > 0.0 && r.density <= 1.0))
      throw Error(ErrorKind::kConfiguration, "density of '" + r.id + "' must lie in (0, 1]");
    if (!by_id.emplace(r.id, &r).second) throw Error(ErrorKind::kConfiguration, "duplicate relation '" + r.id + "'");
  }
  for (const auto& r : relations) {
    const std::size_t need = r.pattern == RelationPattern::kInverseOf       ? 1
                             : r.pattern == RelationPattern::kCompositional ? 2
                                                                            : 0;
    if (r.of.size() != need)
      throw Error(ErrorKind::kConfiguration, "relation '" + r.id + "' has the wrong number of referenced relations");
    for (const auto& o : r.of) {
      if (!by_id.count(o))
        throw Error(ErrorKind::kConfiguration, "relation '" + r.id + "' references undeclared '" + o + "'");
      if (o == r.id) throw Error(ErrorKind::kConfiguration, "relation '" + r.id + "' references itself");
    }
  }
  // Reject dependency cycles.
  std::map<std::string, int> state;
  std::function<void(const std::string&)> visit = [&](const std::string& id) {
    int& st = state[id];
    if (st == 2) return;
    if (st == 1) throw Error(ErrorKind::kConfiguration, "cyclic relation dependency through '" + id + "'");
    st = 1;
    for (const auto& o : by_id.at(id)->of) visit(o);
    state[id] = 2;
  };
  for (const auto& r : relations) visit(r.id);
  if (group_count < 0 || group_count == 1) throw Error(ErrorKind::kConfiguration, "group_count must be 0 or >= 2");
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  SynthSpec spec;
  try {
    const json j = json::parse(json_text);
    spec.entity_count = j.at("entity_count").get<int>();
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.group_count = j.value("group_count", 0);
    if (j.contains("vocabulary")) spec.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    for (const auto& r : j.at("relations")) {
      SynthRelation rel;
      rel.id = r.at("id").get<std::string>();
      rel.pattern = parse_pattern(r.value("pattern", std::string("plain")));
      rel.density = r.value("density", 0.05);
      if (r.contains("of")) {
        if (r["of"].is_string()) {
          rel.of.push_back(r["of"].get<std::string>());
        } else {
          rel.of = r["of"].get<std::vector<std::string>>();
        }
      }
      spec.relations.push_back(std::move(rel));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::vector<std::string> default_group_vocabulary() {
  return {"amber", "azure", "crimson", "golden", "ivory", "jade",   "olive",  "scarlet", "silver", "violet", "cobalt", "copper",
          "coral", "ebony", "indigo",  "lilac",  "maroon", "ochre", "pearl", "ruby",    "sable",  "teal",   "umber",  "white"};
}

Graph synth_kg(const SynthSpec& spec) {
  spec.validate();
  const int n = spec.entity_count;
  const int groups = spec.group_count > 0 ? spec.group_count : auto_group_count(spec);
  const auto vocab = spec.vocabulary.empty() ? default_group_vocabulary() : spec.vocabulary;
  std::mt19937_64 rng(spec.seed);

  // Entities: a balanced group assignment under a seeded permutation.
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> group(static_cast<std::size_t>(n));
  const int width = static_cast<int>(std::to_string(n - 1).size());
  std::set<std::string> vocab_set(vocab.begin(), vocab.end());
  std::set<std::string> used;
  Graph g;
  for (int i = 0; i < n; ++i) {
    group[i] = perm[i] % groups;
    std::string name;
    do {
      name = make_name(rng);
    } while (used.count(name) || vocab_set.count(name));
    used.insert(name);
    const auto& word = vocab[static_cast<std::size_t>(group[i]) % vocab.size()];
    const auto& clan = clan_nouns()[(static_cast<std::size_t>(group[i]) / vocab.size()) % clan_nouns().size()];
    const auto& trait = traits()[rng() % traits().size()];
    const auto& role = roles()[rng() % roles().size()];
    std::string id = std::to_string(i);
    id = "e" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    g.add_entity({id, name, name + " is a " + trait + " " + role + " from the " + word + " " + clan + " ."});
  }
  for (const auto& r : spec.relations) g.add_relation(r.id);

  // Generate in dependency order, emit in declaration order.
  std::map<std::string, std::vector<std::pair<int, int>>> pairs;
  int next_shift = 1;
  std::map<std::string, int> shift;
  for (const auto& r : spec.relations) {
    if (r.pattern != RelationPattern::kPlain) continue;
    while (next_shift % groups == 0 || (next_shift % groups) * 2 == groups) ++next_shift;
    shift[r.id] = next_shift % groups;
    ++next_shift;
  }

  auto pick = [&](std::vector<std::pair<int, int>> rule, std::vector<std::pair<int, int>> rest, std::size_t want) {
    std::shuffle(rule.begin(), rule.end(), rng);
    std::shuffle(rest.begin(), rest.end(), rng);
    std::vector<std::pair<int, int>> out;
    for (auto& p : rule) {
      if (out.size() >= want) break;
      out.push_back(p);
    }
    for (auto& p : rest) {
      if (out.size() >= want) break;
      out.push_back(p);
    }
    return out;
  };

  std::function<void(const SynthRelation&)> generate = [&](const SynthRelation& r) {
    if (pairs.count(r.id)) return;
    std::vector<std::pair<int, int>> out;
    if (r.pattern == RelationPattern::kPlain) {
      std::vector<std::pair<int, int>> rule, rest;
      for (int h = 0; h < n; ++h)
        for (int t = 0; t < n; ++t) {
          if (h == t) continue;
          ((group[t] - group[h] + groups) % groups == shift[r.id] ? rule : rest).emplace_back(h, t);
        }
      const auto want = static_cast<std::size_t>(
          std::max<long long>(1, std::llround(r.density * static_cast<double>(n) * static_cast<double>(n - 1))));
      out = pick(std::move(rule), std::move(rest), want);
    } else if (r.pattern == RelationPattern::kSymmetric) {
      std::vector<std::pair<int, int>> rule, rest;
      for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
          ((group[b] - group[a] + groups) % groups == groups / 2 ? rule : rest).emplace_back(a, b);
      const auto want = static_cast<std::size_t>(
          std::max<long long>(1, std::llround(r.density * static_cast<double>(n) * static_cast<double>(n - 1) / 2.0)));
      for (auto [a, b] : pick(std::move(rule), std::move(rest), want)) {
        out.emplace_back(a, b);
        out.emplace_back(b, a);
      }
    } else if (r.pattern == RelationPattern::kInverseOf) {
      const auto& base = *std::find_if(spec.relations.begin(), spec.relations.end(),
                                       [&](const SynthRelation& x) { return x.id == r.of[0]; });
      generate(base);
      for (auto [h, t] : pairs.at(base.id)) out.emplace_back(t, h);
    } else {
      for (const auto& o : r.of)
        generate(*std::find_if(spec.relations.begin(), spec.relations.end(),
                               [&](const SynthRelation& x) { return x.id == o; }));
      std::vector<std::vector<int>> first(static_cast<std::size_t>(n));
      std::vector<std::vector<int>> second(static_cast<std::size_t>(n));
      for (auto [x, y] : pairs.at(r.of[0])) first[x].push_back(y);
      for (auto [y, z] : pairs.at(r.of[1])) second[y].push_back(z);
      std::set<std::pair<int, int>> cands;
      for (int x = 0; x < n; ++x)
        for (int y : first[x])
          for (int z : second[y])
            if (z != x) cands.emplace(x, z);
      if (cands.empty())
        throw Error(ErrorKind::kConfiguration, "compositional relation '" + r.id + "' has no witness paths");
      const auto want = static_cast<std::size_t>(
          std::max<long long>(1, std::llround(r.density * static_cast<double>(n) * static_cast<double>(n - 1))));
      out = pick({cands.begin(), cands.end()}, {}, want);
    }
    std::sort(out.begin(), out.end());
    pairs[r.id] = std::move(out);
  };
  for (const auto& r : spec.relations) generate(r);
  for (const auto& r : spec.relations) {
    const int rel = g.relation_index(r.id);
    for (auto [h, t] : pairs.at(r.id)) g.add_triple({h, rel, t});
  }
  return g;
}

std::vector<std::string> synth_pos_corpus(const Graph& g) {
  std::set<std::string> group_words;
  for (const auto& w : default_group_vocabulary()) group_words.insert(w);
  std::set<std::string> trait_set(traits().begin(), traits().end());
  std::set<std::string> noun_set(roles().begin(), roles().end());
  noun_set.insert(clan_nouns().begin(), clan_nouns().end());
  std::set<std::string> names;
  for (const auto& e : g.entities()) names.insert(e.name);
  std::vector<std::string> lines;
  for (const auto& e : g.entities()) {
    std::string line;
    for (const auto& t : tokenize(e.description)) {
      std::string tag;
      if (names.count(t)) {
        tag = "NNP";
      } else if (t == "is") {
        tag = "VBZ";
      } else if (t == "a" || t == "the") {
        tag = "DT";
      } else if (t == "from") {
        tag = "IN";
      } else if (t == ".") {
        tag = "PUNCT";
      } else if (noun_set.count(t)) {
        tag = "NN";
      } else {
        tag = "JJ";
      }
      if (!line.empty()) line.push_back(' ');
      line += t + "/" + tag;
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Descriptions

namespace {

bool contains_run(const Tokens& hay, const Tokens& needle) {
  if (needle.empty() || needle.size() > hay.size()) return needle.empty();
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

Tokens prepare_description(const EntityRecord& e, const Graph& g, int max_tokens) {
  if (max_tokens < 1) throw Error(ErrorKind::kConfiguration, "max_tokens must be at least 1");
  const auto limit = static_cast<std::size_t>(max_tokens);
  Tokens out = tokenize(e.description);
  if (out.size() >= limit) {
    out.resize(limit);
    return out;
  }
  const auto idx = g.find_entity(e.id);
  if (!idx) return out;
  for (int n : g.neighbors(*idx)) {
    const Tokens name = tokenize(g.entity(n).name);
    if (contains_run(out, name)) continue;
    for (const auto& t : name) {
      if (out.size() >= limit) return out;
      out.push_back(t);
    }
  }
  return out;
}

Tokens prepare_description(int entity, const Graph& g, int max_tokens) {
  return prepare_description(g.entity(entity), g, max_tokens);
}

}  // namespace bilink
