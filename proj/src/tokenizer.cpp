#include "bilink/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "bilink/error.hpp"

namespace bilink {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '[') {
      bool matched = false;
      for (std::string_view special : kSpecialTokens) {
        if (text.substr(i, special.size()) == special) {
          flush();
          out.emplace_back(special);
          i += special.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return out;
}

std::string detokenize(const Tokens& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Tokenizer::Tokenizer() {
  for (std::string_view s : kSpecialTokens) {
    index_.emplace(std::string(s), static_cast<int>(vocabulary_.size()));
    vocabulary_.emplace_back(s);
  }
}

Tokenizer Tokenizer::build(const std::vector<Tokens>& corpus, int min_count) {
  std::map<std::string, long> counts;
  bool any = false;
  for (const auto& seq : corpus)
    for (const auto& tok : seq) {
      ++counts[tok];
      any = true;
    }
  if (!any) throw Error(ErrorKind::kConfiguration, "cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Tokenizer t;
  for (auto& [tok, n] : kept) {
    if (t.index_.count(tok)) continue;
    t.index_.emplace(tok, t.size());
    t.vocabulary_.push_back(tok);
  }
  return t;
}

Tokenizer Tokenizer::from_vocabulary(const std::vector<std::string>& vocabulary) {
  if (vocabulary.size() < kSpecialTokens.size())
    throw Error(ErrorKind::kParse, "vocabulary shorter than the special-token block");
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i)
    if (vocabulary[i] != kSpecialTokens[i]) throw Error(ErrorKind::kParse, "vocabulary special tokens out of order");
  Tokenizer t;
  for (std::size_t i = kSpecialTokens.size(); i < vocabulary.size(); ++i) {
    if (!t.index_.emplace(vocabulary[i], t.size()).second)
      throw Error(ErrorKind::kParse, "duplicate vocabulary entry '" + vocabulary[i] + "'");
    t.vocabulary_.push_back(vocabulary[i]);
  }
  return t;
}

int Tokenizer::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> Tokenizer::ids(const Tokens& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

}  // namespace bilink
