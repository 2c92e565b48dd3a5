#include "bilink/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace bilink {

void EncoderConfig::validate() const {
  if (layers < 1) throw Error(ErrorKind::kConfiguration, "encoder needs at least one layer");
  if (heads < 1 || model_dim < 1 || model_dim % heads != 0)
    throw Error(ErrorKind::kConfiguration, "model_dim must be a positive multiple of heads");
  if (ffn_dim < 1) throw Error(ErrorKind::kConfiguration, "ffn_dim must be positive");
  if (max_len < 4) throw Error(ErrorKind::kConfiguration, "max_len must be at least 4");
  if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorKind::kConfiguration, "dropout must lie in [0, 1)");
  if (vocab_size < static_cast<int>(kSpecialTokens.size()))
    throw Error(ErrorKind::kConfiguration, "vocab_size smaller than the special-token block");
  if (pos_tags < 0 || soft_prompts < 0) throw Error(ErrorKind::kConfiguration, "negative head size");
}

std::string_view to_string(PoolingSite site) {
  switch (site) {
    case PoolingSite::kCls: return "CLS";
    case PoolingSite::kHeadMarker: return "HMARK";
    case PoolingSite::kTailMarker: return "TMARK";
  }
  return "CLS";
}

namespace {

void check_length(std::size_t n, int max_len) {
  if (n > static_cast<std::size_t>(max_len))
    throw Error(ErrorKind::kInputLayout,
                "framed input of " + std::to_string(n) + " tokens exceeds max_len " + std::to_string(max_len));
}

}  // namespace

EncoderInput expression_input(const Tokenizer& tok, const Tokens& expression, const Tokens& description,
                              int max_len) {
  int marker = -1;
  PoolingSite site = PoolingSite::kCls;
  for (std::size_t i = 0; i < expression.size(); ++i) {
    if (expression[i] == kHeadMarker || expression[i] == kTailMarker) {
      if (marker >= 0) throw Error(ErrorKind::kInputLayout, "expression carries more than one marker");
      marker = static_cast<int>(i);
      site = expression[i] == kHeadMarker ? PoolingSite::kHeadMarker : PoolingSite::kTailMarker;
    }
  }
  if (marker < 0) throw Error(ErrorKind::kInputLayout, "marker pooling requested but no marker present");
  EncoderInput in;
  in.ids.reserve(expression.size() + description.size() + 3);
  in.ids.push_back(kClsId);
  for (int id : tok.ids(expression)) in.ids.push_back(id);
  in.ids.push_back(kSepId);
  for (int id : tok.ids(description)) in.ids.push_back(id);
  in.ids.push_back(kSepId);
  check_length(in.ids.size(), max_len);
  in.mask.assign(in.ids.size(), 1);
  in.pool_index = marker + 1;
  in.site = site;
  return in;
}

EncoderInput entity_input(const Tokenizer& tok, const Tokens& description, int max_len) {
  return sequence_input(tok, description, -1, PoolingSite::kCls, max_len);
}

EncoderInput sequence_input(const Tokenizer& tok, const Tokens& tokens, int pool_index, PoolingSite site,
                            int max_len) {
  EncoderInput in;
  in.ids.reserve(tokens.size() + 2);
  in.ids.push_back(kClsId);
  for (int id : tok.ids(tokens)) in.ids.push_back(id);
  in.ids.push_back(kSepId);
  check_length(in.ids.size(), max_len);
  in.mask.assign(in.ids.size(), 1);
  in.pool_index = site == PoolingSite::kCls ? 0 : pool_index + 1;
  in.site = site;
  return in;
}

EncoderInput pad_to(EncoderInput in, std::size_t length) {
  if (in.mask.empty()) in.mask.assign(in.ids.size(), 1);
  while (in.ids.size() < length) {
    in.ids.push_back(kPadId);
    in.mask.push_back(0);
    if (!in.soft_prompt.empty()) in.soft_prompt.push_back(-1);
  }
  return in;
}

double relative_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

TaggedCorpus parse_tagged_corpus(const std::vector<std::string>& lines) {
  std::vector<std::vector<std::pair<std::string, std::string>>> rows;
  std::map<std::string, int> tag_ids;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    std::istringstream in(lines[n]);
    std::vector<std::pair<std::string, std::string>> row;
    for (std::string item; in >> item;) {
      const auto slash = item.rfind('/');
      if (slash == std::string::npos || slash == 0 || slash + 1 == item.size())
        throw Error(ErrorKind::kParse, "line " + std::to_string(n + 1) + ": '" + item + "' is not word/TAG");
      Tokens word = tokenize(item.substr(0, slash));
      if (word.size() != 1)
        throw Error(ErrorKind::kParse, "line " + std::to_string(n + 1) + ": '" + item + "' is not a single token");
      row.emplace_back(word.front(), item.substr(slash + 1));
      tag_ids.emplace(row.back().second, 0);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  TaggedCorpus out;
  for (auto& [tag, id] : tag_ids) {
    id = static_cast<int>(out.tags.size());
    out.tags.push_back(tag);
  }
  for (const auto& row : rows) {
    TaggedSentence s;
    for (const auto& [w, t] : row) {
      s.tokens.push_back(w);
      s.tags.push_back(tag_ids.at(t));
    }
    out.sentences.push_back(std::move(s));
  }
  return out;
}

}  // namespace bilink
