#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "bilink/error.hpp"
#include "bilink/graph_store.hpp"

using namespace bilink;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("bilink_gs_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

Graph entities_only(int n) {
  Graph g;
  for (int i = 0; i < n; ++i) g.add_entity({"e" + std::to_string(i), "n" + std::to_string(i), ""});
  return g;
}

// Random graph with every entity touched at least twice.
Graph random_graph(std::mt19937_64& rng, int entities, int triples, int relations) {
  Graph g = entities_only(entities);
  for (int r = 0; r < relations; ++r) g.add_relation("r" + std::to_string(r));
  std::uniform_int_distribution<int> pick(0, entities - 1), rel(0, relations - 1);
  for (int i = 0; i < entities; ++i) {
    Triple t{i, rel(rng), (i + 1) % entities};
    if (!g.has_triple(t)) g.add_triple(t);
  }
  while (static_cast<int>(g.triple_count()) < triples) {
    Triple t{pick(rng), rel(rng), pick(rng)};
    if (t.head != t.tail && !g.has_triple(t)) g.add_triple(t);
  }
  return g;
}

}  // namespace

TEST_CASE("load_graph counts and relation text") {
  const fs::path d = scratch("load");
  write(d / "e.jsonl",
        "{\"id\":\"a\",\"name\":\"alpha\",\"description\":\"first\"}\n"
        "{\"id\":\"b\",\"name\":\"beta\",\"description\":\"\"}\n");
  write(d / "t.tsv", "a\tpart_of\tb\n");
  const Graph g = load_graph(d / "e.jsonl", d / "t.tsv");
  CHECK(g.entity_count() == 2);
  CHECK(g.triple_count() == 1);
  CHECK(g.relation_count() == 1);
  CHECK(g.relation(0).text == "part of");
}

TEST_CASE("load_graph errors") {
  const fs::path d = scratch("load_err");
  write(d / "e.jsonl", "{\"id\":\"a\",\"name\":\"alpha\",\"description\":\"\"}\n");
  SUBCASE("dangling entity") {
    write(d / "t.tsv", "a\tr1\tmissing\n");
    try {
      load_graph(d / "e.jsonl", d / "t.tsv");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kReferentialIntegrity);
    }
  }
  SUBCASE("malformed line carries its number") {
    write(d / "t.tsv", "a\tr1\ta\nbroken line\n");
    try {
      load_graph(d / "e.jsonl", d / "t.tsv");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kParse);
      CHECK(std::string(e.what()).find('2') != std::string::npos);
    }
  }
  SUBCASE("malformed json") {
    write(d / "e2.jsonl", "{\"id\":\"a\",\n");
    write(d / "t.tsv", "");
    CHECK_THROWS_AS(load_graph(d / "e2.jsonl", d / "t.tsv"), Error);
  }
}

TEST_CASE("graph files round-trip") {
  std::mt19937_64 rng(3);
  const Graph g = random_graph(rng, 12, 30, 3);
  const fs::path d = scratch("roundtrip");
  save_graph(g, d / "e.jsonl", d / "t.tsv");
  const Graph h = load_graph(d / "e.jsonl", d / "t.tsv");
  REQUIRE(h.triple_count() == g.triple_count());
  for (std::size_t i = 0; i < g.triple_count(); ++i) {
    const Triple& a = g.triple(static_cast<int>(i));
    const Triple& b = h.triple(static_cast<int>(i));
    CHECK(g.entity(a.head).id == h.entity(b.head).id);
    CHECK(g.relation(a.relation).id == h.relation(b.relation).id);
    CHECK(g.entity(a.tail).id == h.entity(b.tail).id);
  }
}

TEST_CASE("duplicate triples are rejected") {
  Graph g = entities_only(2);
  g.add_relation("r");
  g.add_triple({0, 0, 1});
  CHECK_THROWS_AS(g.add_triple({0, 0, 1}), Error);
}

TEST_CASE("split_transductive sizes and determinism") {
  std::mt19937_64 rng(11);
  const Graph g = random_graph(rng, 20, 100, 3);
  const SplitSet a = split_transductive(g, {0.8, 0.1, 0.1}, 7);
  CHECK(a.train.size() == 80);
  CHECK(a.valid.size() == 10);
  CHECK(a.test.size() == 10);
  const SplitSet b = split_transductive(g, {0.8, 0.1, 0.1}, 7);
  CHECK(a == b);
  const fs::path d = scratch("split_bytes");
  save_splits(a, g, d / "a.json");
  save_splits(b, g, d / "b.json");
  std::ifstream fa(d / "a.json"), fb(d / "b.json");
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(load_splits(g, d / "a.json") == a);
}

TEST_CASE("split_transductive coverage property") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    const Graph g = random_graph(rng, 8 + static_cast<int>(seed % 10), 40, 2);
    const SplitSet s = split_transductive(g, {0.7, 0.15, 0.15}, seed);
    std::set<int> covered;
    for (int i : s.train) {
      covered.insert(g.triple(i).head);
      covered.insert(g.triple(i).tail);
    }
    std::set<int> all(s.train.begin(), s.train.end());
    for (const auto* part : {&s.valid, &s.test})
      for (int i : *part) {
        CHECK(covered.count(g.triple(i).head));
        CHECK(covered.count(g.triple(i).tail));
        CHECK(all.insert(i).second);
      }
    CHECK(all.size() == g.triple_count());
  }
}

TEST_CASE("star leaf triple is forced into train") {
  Graph g = entities_only(6);
  g.add_relation("r");
  // Hub 0 with leaves 1..4; leaf 5 hangs off leaf 4 only once.
  for (int i = 1; i <= 4; ++i) {
    g.add_triple({0, 0, i});
    g.add_triple({i, 0, 0});
  }
  g.add_triple({4, 0, 5});
  const int lone = *g.find_triple({4, 0, 5});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SplitSet s = split_transductive(g, {0.6, 0.2, 0.2}, seed);
    CHECK(std::find(s.train.begin(), s.train.end(), lone) != s.train.end());
  }
}

TEST_CASE("split_transductive rejects bad ratios and tiny graphs") {
  std::mt19937_64 rng(1);
  const Graph g = random_graph(rng, 6, 10, 1);
  CHECK_THROWS_AS(split_transductive(g, {0.8, 0.1, 0.2}, 1), Error);
  // A path 0-1-2-3 can only hold out its middle edge.
  Graph tiny = entities_only(4);
  tiny.add_relation("r");
  tiny.add_triple({0, 0, 1});
  tiny.add_triple({1, 0, 2});
  tiny.add_triple({2, 0, 3});
  try {
    split_transductive(tiny, {0.4, 0.3, 0.3}, 1);
    FAIL("expected an infeasible split");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInfeasibleSplit);
  }
}

TEST_CASE("split_inductive two cliques") {
  Graph g = entities_only(4);
  g.add_relation("r");
  g.add_triple({0, 0, 1});
  g.add_triple({1, 0, 0});
  g.add_triple({2, 0, 3});
  g.add_triple({3, 0, 2});
  const SplitSet s = split_inductive(g, 0.5, 5);
  REQUIRE(s.holdout_entities.size() == 2);
  const int a = s.holdout_entities[0], b = s.holdout_entities[1];
  CHECK(((a == 0 && b == 1) || (a == 2 && b == 3)));
  CHECK(s.train.size() == 2);
  CHECK(s.valid.size() + s.test.size() == 2);
}

TEST_CASE("split_inductive disjointness over 100 seeds") {
  std::mt19937_64 rng(99);
  const Graph g = synth_kg([] {
    SynthSpec spec;
    spec.entity_count = 60;
    spec.seed = 4;
    spec.relations = {{"r", RelationPattern::kSymmetric, {}, 0.1}, {"p", RelationPattern::kPlain, {}, 0.1}};
    return spec;
  }());
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SplitSet s = split_inductive(g, 0.3, seed);
    const SplitViews v = make_views(g, s);
    std::set<std::string> train_ids, eval_ids;
    for (const auto& e : v.train_graph.entities()) train_ids.insert(e.id);
    for (const auto& e : v.eval_graph.entities()) eval_ids.insert(e.id);
    for (const auto& id : eval_ids) CHECK_FALSE(train_ids.count(id));
    std::set<int> train_rel, eval_rel;
    for (const auto& t : v.train_graph.triples()) train_rel.insert(t.relation);
    bool shared = false;
    for (const auto& t : v.eval_graph.triples()) shared |= train_rel.count(t.relation) > 0;
    CHECK(shared);
    CHECK(v.eval_graph.triple_count() > 0);
  }
}

TEST_CASE("split_inductive infeasible") {
  Graph g = entities_only(3);
  g.add_relation("r");
  g.add_triple({0, 0, 1});
  CHECK_THROWS_AS(split_inductive(g, 0.5, 1), Error);
  CHECK_THROWS_AS(split_inductive(g, 1.0, 1), Error);
}

TEST_CASE("synth_kg pattern closure") {
  SynthSpec spec;
  spec.entity_count = 40;
  spec.seed = 2;
  spec.relations = {{"sibling_of", RelationPattern::kSymmetric, {}, 0.08},
                    {"parent_of", RelationPattern::kPlain, {}, 0.05},
                    {"child_of", RelationPattern::kInverseOf, {"parent_of"}, 0.05},
                    {"grandparent_of", RelationPattern::kCompositional, {"parent_of", "parent_of"}, 0.05}};
  const Graph g = synth_kg(spec);
  const int sib = g.relation_index("sibling_of"), par = g.relation_index("parent_of"),
            chi = g.relation_index("child_of"), gp = g.relation_index("grandparent_of");
  int counts[4] = {0, 0, 0, 0};
  for (const Triple& t : g.triples()) {
    if (t.relation == sib) {
      ++counts[0];
      CHECK(g.has_triple({t.tail, sib, t.head}));
    } else if (t.relation == par) {
      ++counts[1];
      CHECK(g.has_triple({t.tail, chi, t.head}));
    } else if (t.relation == chi) {
      ++counts[2];
    } else if (t.relation == gp) {
      ++counts[3];
      bool witness = false;
      for (int y = 0; y < static_cast<int>(g.entity_count()) && !witness; ++y)
        witness = g.has_triple({t.head, par, y}) && g.has_triple({y, par, t.tail});
      CHECK(witness);
    }
  }
  for (int c : counts) CHECK(c > 0);
}

TEST_CASE("synth_kg symmetric on 10 entities and dense plain relation") {
  SynthSpec spec;
  spec.entity_count = 10;
  spec.seed = 9;
  spec.relations = {{"s", RelationPattern::kSymmetric, {}, 0.3}};
  const Graph g = synth_kg(spec);
  for (const Triple& t : g.triples()) CHECK(g.has_triple({t.tail, t.relation, t.head}));

  SynthSpec dense;
  dense.entity_count = 4;
  dense.seed = 1;
  dense.relations = {{"p", RelationPattern::kPlain, {}, 1.0}};
  CHECK(synth_kg(dense).triple_count() == 12);
}

TEST_CASE("synth_kg determinism and spec validation") {
  SynthSpec spec;
  spec.entity_count = 30;
  spec.seed = 5;
  spec.relations = {{"p", RelationPattern::kPlain, {}, 0.1}};
  const Graph a = synth_kg(spec), b = synth_kg(spec);
  REQUIRE(a.triple_count() == b.triple_count());
  for (std::size_t i = 0; i < a.triple_count(); ++i) CHECK(a.triple(static_cast<int>(i)) == b.triple(static_cast<int>(i)));
  for (std::size_t i = 0; i < a.entity_count(); ++i)
    CHECK(a.entity(static_cast<int>(i)).description == b.entity(static_cast<int>(i)).description);

  SynthSpec bad = spec;
  bad.relations = {{"c", RelationPattern::kInverseOf, {"nope"}, 0.1}};
  CHECK_THROWS_AS(synth_kg(bad), Error);
  bad.relations = {{"p", RelationPattern::kPlain, {}, 0.0}};
  CHECK_THROWS_AS(synth_kg(bad), Error);
}

TEST_CASE("prepare_description examples") {
  Graph g;
  std::string hundred;
  for (int i = 0; i < 100; ++i) hundred += "w" + std::to_string(i) + " ";
  std::string sixty;
  for (int i = 0; i < 60; ++i) sixty += "x" + std::to_string(i) + " ";
  g.add_entity({"long", "long one", hundred});
  g.add_entity({"empty", "empty one", ""});
  g.add_entity({"a", "alpha", "first"});
  g.add_entity({"b", "beta", "second"});
  g.add_entity({"sixty", "sixty one", sixty});
  g.add_entity({"g", "gamma delta epsilon zeta", ""});
  g.add_relation("r");
  g.add_triple({1, 0, 2});
  g.add_triple({1, 0, 3});
  g.add_triple({4, 0, 5});

  const Tokens t = prepare_description(0, g, 64);
  REQUIRE(t.size() == 64);
  CHECK(t.front() == "w0");
  CHECK(t.back() == "w63");
  CHECK(prepare_description(1, g, 64) == Tokens{"alpha", "beta"});
  CHECK(prepare_description(4, g, 64).size() == 64);
}

TEST_CASE("prepare_description bound and idempotence property") {
  std::mt19937_64 rng(21);
  for (int round = 0; round < 50; ++round) {
    Graph g;
    const int n = 6;
    for (int i = 0; i < n; ++i) {
      std::string desc;
      const int len = std::uniform_int_distribution<int>(0, 20)(rng);
      for (int k = 0; k < len; ++k) desc += "t" + std::to_string(k % 7) + " ";
      g.add_entity({"e" + std::to_string(i), "name" + std::to_string(i), desc});
    }
    g.add_relation("r");
    for (int i = 0; i + 1 < n; ++i) g.add_triple({i, 0, i + 1});
    const int max_tokens = std::uniform_int_distribution<int>(1, 24)(rng);
    for (int e = 0; e < n; ++e) {
      const Tokens once = prepare_description(e, g, max_tokens);
      CHECK(once.size() <= static_cast<std::size_t>(max_tokens));
      EntityRecord prepared = g.entity(e);
      prepared.description = detokenize(once);
      CHECK(prepare_description(prepared, g, max_tokens) == once);
    }
  }
}
