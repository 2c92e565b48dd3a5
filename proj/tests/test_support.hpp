#pragma once
// Small fixtures shared by the unit tests.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bilink/contrastive_trainer.hpp"
#include "bilink/graph_store.hpp"
#include "bilink/prompt_engine.hpp"

namespace bilink::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("bilink_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline SynthSpec tiny_spec(std::uint64_t seed, int entities = 30) {
  SynthSpec spec;
  spec.entity_count = entities;
  spec.seed = seed;
  spec.relations = {{"sibling_of", RelationPattern::kSymmetric, {}, 0.1},
                    {"parent_of", RelationPattern::kPlain, {}, 0.1}};
  return spec;
}

inline TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.model_dim = 16;
  cfg.ffn_dim = 32;
  cfg.max_len = 48;
  cfg.desc_tokens = 24;
  cfg.dropout = 0.0;
  cfg.k_clusters = 2;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.warmup_steps = 4;
  return cfg;
}

template <typename T>
LinkModel<T> tiny_model(const Graph& g, const TrainConfig& cfg) {
  const PromptRuleBase rules = default_rule_base();
  return init_link_model<T>(cfg, build_link_tokenizer(g, rules, 1), rules);
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace bilink::testing
