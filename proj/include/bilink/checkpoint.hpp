#pragma once
// JSON checkpoints: config text, vocabulary, templates, every tensor by name,
// g_theta and the mixture. Tensors are stored as doubles, so float models
// round-trip exactly.

#include <filesystem>
#include <string>

#include "bilink/contrastive_trainer.hpp"
#include "bilink/el_retrieval.hpp"
#include "bilink/encoder.hpp"

namespace bilink {

inline constexpr int kCheckpointFormat = 1;

// Encoder checkpoint of POS pretraining (with its POS head) plus vocabulary.
void save_pretrained(const Encoder<double>& enc, const Tokenizer& tok, const std::filesystem::path& path);
Encoder<double> load_pretrained(const std::filesystem::path& path, Tokenizer* tok = nullptr);

template <typename T>
void save_link_model(const LinkModel<T>& m, const std::filesystem::path& path);
LinkModel<double> load_link_model(const std::filesystem::path& path);

template <typename T>
void save_el_model(const ElModel<T>& m, const std::filesystem::path& path);
ElModel<double> load_el_model(const std::filesystem::path& path);

}  // namespace bilink
