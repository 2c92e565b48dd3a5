#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bilink {

using Tokens = std::vector<std::string>;

inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kHeadMarker = "[HMARK]";
inline constexpr std::string_view kTailMarker = "[TMARK]";
inline constexpr std::string_view kUnk = "[UNK]";

// Reserved ids 0..5, in the order above.
inline constexpr std::array<std::string_view, 6> kSpecialTokens = {kCls, kSep, kPad, kHeadMarker, kTailMarker, kUnk};

enum SpecialId : int { kClsId = 0, kSepId = 1, kPadId = 2, kHeadMarkerId = 3, kTailMarkerId = 4, kUnkId = 5 };

// Lowercases ASCII, splits on whitespace, and emits every ASCII punctuation
// character as its own token. The bracketed special tokens are kept intact.
Tokens tokenize(std::string_view text);

// Joins tokens with single spaces.
std::string detokenize(const Tokens& tokens);

class Tokenizer {
 public:
  Tokenizer();

  // Tokens with count >= min_count, ordered by (-count, token) after the
  // specials. Throws kConfiguration for an empty corpus.
  static Tokenizer build(const std::vector<Tokens>& corpus, int min_count);

  // Restores a vocabulary from its id-ordered token list (specials first).
  static Tokenizer from_vocabulary(const std::vector<std::string>& vocabulary);

  int id(std::string_view token) const;
  const std::string& token(int id) const { return vocabulary_[static_cast<std::size_t>(id)]; }
  std::vector<int> ids(const Tokens& tokens) const;
  int size() const { return static_cast<int>(vocabulary_.size()); }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

 private:
  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace bilink
