#pragma once
// Knowledge-graph data model, dataset files, split construction, synthetic
// pattern-controlled graphs, and description preparation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bilink/tokenizer.hpp"

namespace bilink {

struct EntityRecord {
  std::string id;
  std::string name;
  std::string description;
};

struct RelationRecord {
  std::string id;
  std::string text;  // surface form used when verbalizing
};

// Indices into the owning Graph.
struct Triple {
  int head = 0;
  int relation = 0;
  int tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
};

// Default relation surface text: the id with underscores replaced by spaces,
// surrounding whitespace trimmed.
std::string relation_text_from_id(const std::string& id);

class Graph {
 public:
  // Throws kData on a duplicate id or empty name.
  int add_entity(EntityRecord e);
  // Returns the existing index when the id is already known.
  int add_relation(const std::string& id, std::optional<std::string> text = std::nullopt);
  // Throws kReferentialIntegrity for unknown indices and kData for duplicates.
  int add_triple(Triple t);
  bool has_triple(const Triple& t) const;
  std::optional<int> find_triple(const Triple& t) const;

  std::size_t entity_count() const { return entities_.size(); }
  std::size_t relation_count() const { return relations_.size(); }
  std::size_t triple_count() const { return triples_.size(); }

  const EntityRecord& entity(int i) const { return entities_[static_cast<std::size_t>(i)]; }
  const RelationRecord& relation(int i) const { return relations_[static_cast<std::size_t>(i)]; }
  const Triple& triple(int i) const { return triples_[static_cast<std::size_t>(i)]; }
  const std::vector<EntityRecord>& entities() const { return entities_; }
  const std::vector<RelationRecord>& relations() const { return relations_; }
  const std::vector<Triple>& triples() const { return triples_; }

  std::optional<int> find_entity(const std::string& id) const;
  std::optional<int> find_relation(const std::string& id) const;
  int entity_index(const std::string& id) const;    // throws kReferentialIntegrity
  int relation_index(const std::string& id) const;  // throws kReferentialIntegrity

  // Distinct neighbours over incoming and outgoing triples, ordered by
  // ascending (relation id, neighbour id); a neighbour reached through several
  // relations appears at its first position.
  std::vector<int> neighbors(int entity) const;

  // Copy holding `entity_subset` (in the given order; nullptr keeps all
  // entities in order), every relation, and the listed triples. Triples must
  // lie inside the subset.
  Graph restrict(const std::vector<int>* entity_subset, const std::vector<int>& triple_indices) const;

 private:
  struct TripleHash {
    std::size_t operator()(const Triple& t) const noexcept {
      std::uint64_t h = static_cast<std::uint32_t>(t.head);
      h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(t.relation);
      h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(t.tail);
      return static_cast<std::size_t>(h ^ (h >> 29));
    }
  };

  std::vector<EntityRecord> entities_;
  std::vector<RelationRecord> relations_;
  std::vector<Triple> triples_;
  std::unordered_map<std::string, int> entity_index_;
  std::unordered_map<std::string, int> relation_index_;
  std::unordered_map<Triple, int, TripleHash> triple_index_;
  std::vector<std::vector<std::pair<int, int>>> adjacency_;  // (relation, neighbour)
};

// entities.jsonl (id/name/description per line) + triples.tsv (head, relation,
// tail). Errors: kParse with the 1-based line number, kReferentialIntegrity for
// dangling references.
Graph load_graph(const std::filesystem::path& entities_path, const std::filesystem::path& triples_path);
void save_graph(const Graph& g, const std::filesystem::path& entities_path, const std::filesystem::path& triples_path);

enum class SplitMode { kTransductive, kInductive };

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct SplitSet {
  SplitMode mode = SplitMode::kTransductive;
  std::uint64_t seed = 0;
  std::vector<int> train, valid, test;  // 0-based triple indices, ascending
  std::vector<int> holdout_entities;    // inductive: evaluation entity indices, ascending
  Graph eval_graph;                     // inductive: subgraph induced on holdout_entities

  friend bool operator==(const SplitSet& a, const SplitSet& b) {
    return a.mode == b.mode && a.seed == b.seed && a.train == b.train && a.valid == b.valid && a.test == b.test &&
           a.holdout_entities == b.holdout_entities;
  }
};

// Every valid/test triple keeps both endpoints covered by a training triple.
SplitSet split_transductive(const Graph& g, SplitRatios ratios, std::uint64_t seed);

// Grows a held-out entity set by seeded breadth-first search; triples crossing
// the partition are dropped and the evaluation triples are halved into
// valid/test. Throws kInfeasibleSplit when either side has no triples or the
// relation sets do not intersect.
SplitSet split_inductive(const Graph& g, double holdout_fraction, std::uint64_t seed);

void save_splits(const SplitSet& s, const Graph& g, const std::filesystem::path& path);
SplitSet load_splits(const Graph& g, const std::filesystem::path& path);

// The graphs each stage works on. Transductive views share entity indexing
// with the input graph; inductive views re-index onto their entity subsets.
struct SplitViews {
  Graph train_graph;         // training entities + training triples
  Graph eval_graph;          // candidate pool and filter triples
  Graph eval_context;        // triples observable at evaluation time
  std::vector<int> valid;    // indices into eval_graph
  std::vector<int> test;     // indices into eval_graph
};

SplitViews make_views(const Graph& g, const SplitSet& s);

enum class RelationPattern { kPlain, kSymmetric, kInverseOf, kCompositional };

struct SynthRelation {
  std::string id;
  RelationPattern pattern = RelationPattern::kPlain;
  std::vector<std::string> of;  // inverse-of: one id; compositional: two ids
  double density = 0.05;
};

struct SynthSpec {
  int entity_count = 0;
  std::vector<SynthRelation> relations;
  std::uint64_t seed = 0;
  std::vector<std::string> vocabulary;  // group words for descriptions; default when empty
  int group_count = 0;                  // 0 picks ~1/min density, even

  void validate() const;
};

SynthSpec parse_synth_spec(const std::string& json_text);

// Entities carry a latent group stated in their description; each plain or
// symmetric relation links groups at a fixed offset, so relational structure
// is recoverable from text. Pairs obeying the offset are sampled first.
Graph synth_kg(const SynthSpec& spec);

// Group attribute assigned by synth_kg, parsed back from a description.
std::vector<std::string> default_group_vocabulary();

// POS-tagged sentences matching synth_kg descriptions, "word/TAG" per token.
std::vector<std::string> synth_pos_corpus(const Graph& g);

// Truncates to a prefix of max_tokens; shorter descriptions are padded with
// neighbour names (Graph::neighbors order), skipping names already present,
// until the limit or the neighbours run out.
Tokens prepare_description(const EntityRecord& e, const Graph& g, int max_tokens);
Tokens prepare_description(int entity, const Graph& g, int max_tokens);

}  // namespace bilink
