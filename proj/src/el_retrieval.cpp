#include "bilink/el_retrieval.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace bilink {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

template <typename F>
void read_jsonl(const std::filesystem::path& path, F&& on_row) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open " + path.string());
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      on_row(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, path.filename().string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

void open_out(std::ofstream& out, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out.open(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// BM25

Bm25Index::Bm25Index(std::vector<Tokens> docs) {
  double total = 0;
  for (const Tokens& d : docs) {
    std::unordered_map<std::string, int> tf;
    for (const auto& t : d) ++tf[t];
    for (const auto& [t, c] : tf) ++df_[t];
    tf_.push_back(std::move(tf));
    lengths_.push_back(d.size());
    total += static_cast<double>(d.size());
  }
  avgdl_ = docs.empty() ? 0.0 : total / static_cast<double>(docs.size());
}

int Bm25Index::df(const std::string& term) const {
  auto it = df_.find(term);
  return it == df_.end() ? 0 : it->second;
}

double Bm25Index::score(const Tokens& query, std::size_t doc, double k1, double b) const {
  if (doc >= size()) throw Error(ErrorKind::kReferentialIntegrity, "unknown document " + std::to_string(doc));
  const double n = static_cast<double>(size());
  const double norm = avgdl_ > 0 ? static_cast<double>(lengths_[doc]) / avgdl_ : 0.0;
  double s = 0;
  for (const auto& q : query) {
    auto it = tf_[doc].find(q);
    if (it == tf_[doc].end()) continue;
    const double tf = it->second;
    const double d = df(q);
    const double idf = std::log(1.0 + (n - d + 0.5) / (d + 0.5));
    s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * norm));
  }
  return s;
}

std::vector<std::pair<std::size_t, double>> Bm25Index::top(const Tokens& query, std::size_t k, double k1,
                                                           double b) const {
  std::vector<std::pair<std::size_t, double>> hits;
  for (std::size_t d = 0; d < size(); ++d) {
    const double s = score(query, d, k1, b);
    if (s > 0) hits.emplace_back(d, s);
  }
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

// ---------------------------------------------------------------------------
// Documents and mentions

DocumentCollection::DocumentCollection(std::vector<Document> docs) : docs_(std::move(docs)) {
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!by_id_.emplace(docs_[i].entity_id, i).second)
      throw Error(ErrorKind::kData, "duplicate document entity id " + docs_[i].entity_id);
    by_domain_[docs_[i].domain].push_back(i);
  }
  for (const auto& [domain, ids] : by_domain_) {
    std::vector<Tokens> toks;
    for (std::size_t i : ids) toks.push_back(tokenize(docs_[i].title + " " + docs_[i].body));
    index_.emplace(domain, Bm25Index(std::move(toks)));
  }
}

const Document& DocumentCollection::document(const std::string& entity_id) const {
  auto i = find(entity_id);
  if (!i) throw Error(ErrorKind::kReferentialIntegrity, "unknown document " + entity_id);
  return docs_[*i];
}

std::optional<std::size_t> DocumentCollection::find(const std::string& entity_id) const {
  auto it = by_id_.find(entity_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> DocumentCollection::domains() const {
  std::vector<std::string> out;
  for (const auto& [d, ids] : by_domain_) out.push_back(d);
  return out;
}

const std::vector<std::size_t>& DocumentCollection::domain_documents(const std::string& domain) const {
  auto it = by_domain_.find(domain);
  if (it == by_domain_.end()) throw Error(ErrorKind::kReferentialIntegrity, "unknown domain " + domain);
  return it->second;
}

const Bm25Index& DocumentCollection::domain_index(const std::string& domain) const {
  auto it = index_.find(domain);
  if (it == index_.end()) throw Error(ErrorKind::kReferentialIntegrity, "unknown domain " + domain);
  return it->second;
}

std::vector<Document> load_documents(const std::filesystem::path& path) {
  std::vector<Document> out;
  read_jsonl(path, [&](const nlohmann::json& j) {
    out.push_back(Document{j.at("entity_id").get<std::string>(), j.at("domain").get<std::string>(),
                           j.at("title").get<std::string>(), j.at("body").get<std::string>()});
  });
  return out;
}

void save_documents(const std::vector<Document>& docs, const std::filesystem::path& path) {
  std::ofstream out;
  open_out(out, path);
  for (const Document& d : docs) {
    nlohmann::ordered_json j;
    j["entity_id"] = d.entity_id;
    j["domain"] = d.domain;
    j["title"] = d.title;
    j["body"] = d.body;
    out << j.dump() << '\n';
  }
}

std::vector<MentionRecord> load_mentions(const std::filesystem::path& path) {
  std::vector<MentionRecord> out;
  read_jsonl(path, [&](const nlohmann::json& j) {
    out.push_back(MentionRecord{j.at("mention_id").get<std::string>(), j.at("domain").get<std::string>(),
                                j.at("context_left").get<std::string>(), j.at("mention").get<std::string>(),
                                j.at("context_right").get<std::string>(), j.at("entity_id").get<std::string>()});
  });
  return out;
}

void save_mentions(const std::vector<MentionRecord>& mentions, const std::filesystem::path& path) {
  std::ofstream out;
  open_out(out, path);
  for (const MentionRecord& m : mentions) {
    nlohmann::ordered_json j;
    j["mention_id"] = m.mention_id;
    j["domain"] = m.domain;
    j["context_left"] = m.context_left;
    j["mention"] = m.mention;
    j["context_right"] = m.context_right;
    j["entity_id"] = m.entity_id;
    out << j.dump() << '\n';
  }
}

std::string scrub_name(const std::string& text, const std::string& name) {
  if (name.empty()) return text;
  const std::string lt = lower(text), ln = lower(name);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = lt.find(ln, pos);
    if (hit == std::string::npos) break;
    out.append(text, pos, hit - pos);
    out += kUnk;
    pos = hit + ln.size();
  }
  out.append(text, pos, std::string::npos);
  return out;
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kBm25: return "bm25";
    case Provenance::kRandomPad: return "random-pad";
    case Provenance::kForced: return "forced";
  }
  return "bm25";
}

namespace {

Provenance parse_provenance(const std::string& s) {
  if (s == "bm25") return Provenance::kBm25;
  if (s == "random-pad") return Provenance::kRandomPad;
  if (s == "forced") return Provenance::kForced;
  throw Error(ErrorKind::kParse, "unknown candidate provenance '" + s + "'");
}

}  // namespace

void CandidateSet::validate(std::size_t k, const std::string& gold) const {
  auto fail = [&](const std::string& m) { throw Error(ErrorKind::kData, "candidate set " + mention_id + ": " + m); };
  if (candidates.size() != k) fail("has " + std::to_string(candidates.size()) + " candidates");
  if (provenance.size() != candidates.size()) fail("provenance count differs");
  if (gold_index < 0 || static_cast<std::size_t>(gold_index) >= candidates.size()) fail("gold index out of range");
  if (candidates[static_cast<std::size_t>(gold_index)] != gold) fail("gold not at its index");
  std::set<std::string> seen(candidates.begin(), candidates.end());
  if (seen.size() != candidates.size()) fail("duplicate candidates");
  // Retrieved entries come first, padding last; a forced entry is always gold.
  bool padding = false;
  for (std::size_t i = 0; i < provenance.size(); ++i) {
    if (provenance[i] == Provenance::kRandomPad) padding = true;
    else if (padding && provenance[i] == Provenance::kBm25) fail("retrieved candidate after padding");
    if (provenance[i] == Provenance::kForced && (static_cast<int>(i) != gold_index || i + 1 != provenance.size()))
      fail("forced candidate is not the gold in the last slot");
  }
}

Tokens bm25_query(const MentionRecord& m, int context) {
  const Tokens left = tokenize(m.context_left), right = tokenize(m.context_right);
  Tokens q = tokenize(m.mention);
  const auto c = static_cast<std::size_t>(std::max(0, context));
  q.insert(q.end(), left.end() - static_cast<std::ptrdiff_t>(std::min(c, left.size())), left.end());
  q.insert(q.end(), right.begin(), right.begin() + static_cast<std::ptrdiff_t>(std::min(c, right.size())));
  return q;
}

std::optional<CandidateSet> build_candidates(const MentionRecord& m, const DocumentCollection& docs,
                                             const CandidateOptions& opt, std::uint64_t seed) {
  if (opt.k < 1) throw Error(ErrorKind::kPrecondition, "candidate count must be >= 1");
  const auto& members = docs.domain_documents(m.domain);
  const Bm25Index& index = docs.domain_index(m.domain);
  const auto gold_doc = docs.find(m.entity_id);
  if (!gold_doc || docs.documents()[*gold_doc].domain != m.domain)
    throw Error(ErrorKind::kReferentialIntegrity, "mention " + m.mention_id + " gold not in its domain");
  if (members.size() < opt.k)
    throw Error(ErrorKind::kData, "domain " + m.domain + " has fewer than " + std::to_string(opt.k) + " documents");
  const auto hits = index.top(bm25_query(m, opt.context), opt.k, opt.k1, opt.b);
  if (hits.empty()) {
    spdlog::info("mention {} dropped: no coarse candidates", m.mention_id);
    return std::nullopt;
  }
  CandidateSet cs;
  cs.mention_id = m.mention_id;
  std::set<std::size_t> used;
  int gold_at = -1;
  for (const auto& [local, score] : hits) {
    const std::size_t global = members[local];
    if (global == *gold_doc) gold_at = static_cast<int>(cs.candidates.size());
    cs.candidates.push_back(docs.documents()[global].entity_id);
    cs.provenance.push_back(Provenance::kBm25);
    used.insert(global);
  }
  const bool forced = gold_at < 0;
  if (forced) {
    if (!opt.force_gold) {
      spdlog::info("mention {} dropped: gold outside the top {}", m.mention_id, opt.k);
      return std::nullopt;
    }
    // Gold takes the last slot.
    if (cs.candidates.size() == opt.k) {
      used.erase(members[hits.back().first]);
      cs.candidates.pop_back();
      cs.provenance.pop_back();
    }
    used.insert(*gold_doc);
  }
  const std::size_t fill = forced ? opt.k - 1 : opt.k;
  if (cs.candidates.size() < fill) {
    std::vector<std::size_t> pool;
    for (std::size_t g : members)
      if (!used.count(g)) pool.push_back(g);
    std::mt19937_64 rng(seed ^ fnv1a(m.mention_id));
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; cs.candidates.size() < fill; ++i) {
      cs.candidates.push_back(docs.documents()[pool[i]].entity_id);
      cs.provenance.push_back(Provenance::kRandomPad);
    }
  }
  if (forced) {
    gold_at = static_cast<int>(cs.candidates.size());
    cs.candidates.push_back(m.entity_id);
    cs.provenance.push_back(Provenance::kForced);
  }
  cs.gold_index = gold_at;
  cs.validate(opt.k, m.entity_id);
  return cs;
}

std::vector<CandidateSet> load_candidates(const std::filesystem::path& path) {
  std::vector<CandidateSet> out;
  read_jsonl(path, [&](const nlohmann::json& j) {
    CandidateSet cs;
    cs.mention_id = j.at("mention_id").get<std::string>();
    for (const auto& c : j.at("candidates")) {
      cs.candidates.push_back(c.at("entity_id").get<std::string>());
      cs.provenance.push_back(parse_provenance(c.at("provenance").get<std::string>()));
    }
    cs.gold_index = j.at("gold_index").get<int>();
    out.push_back(std::move(cs));
  });
  return out;
}

void save_candidates(const std::vector<CandidateSet>& sets, const std::filesystem::path& path) {
  std::ofstream out;
  open_out(out, path);
  for (const CandidateSet& cs : sets) {
    nlohmann::ordered_json j;
    j["mention_id"] = cs.mention_id;
    j["candidates"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < cs.candidates.size(); ++i) {
      nlohmann::ordered_json c;
      c["entity_id"] = cs.candidates[i];
      c["provenance"] = std::string(to_string(cs.provenance[i]));
      j["candidates"].push_back(c);
    }
    j["gold_index"] = cs.gold_index;
    out << j.dump() << '\n';
  }
}

ElSplits build_inductive_splits(const std::vector<MentionRecord>& mentions, ElSplitRatios ratios,
                                std::uint64_t seed) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
    throw Error(ErrorKind::kConfiguration, "split ratios must be non-negative and sum to 1");
  std::map<std::string, std::vector<const MentionRecord*>> by_domain;
  for (const MentionRecord& m : mentions) by_domain[m.domain].push_back(&m);
  ElSplits out;
  for (const auto& [domain, ms] : by_domain) {
    std::set<std::string> golds_set;
    for (const MentionRecord* m : ms) golds_set.insert(m->entity_id);
    if (golds_set.size() < 3) {
      spdlog::warn("domain {} skipped: fewer than 3 distinct gold entities", domain);
      continue;
    }
    std::vector<std::string> golds(golds_set.begin(), golds_set.end());
    std::mt19937_64 rng(seed ^ fnv1a(domain));
    std::shuffle(golds.begin(), golds.end(), rng);
    const auto n = static_cast<double>(golds.size());
    const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
    const auto n_valid = std::min(golds.size() - n_train, static_cast<std::size_t>(std::llround(ratios.valid * n)));
    std::unordered_map<std::string, int> part;
    for (std::size_t i = 0; i < golds.size(); ++i) part[golds[i]] = i < n_train ? 0 : (i < n_train + n_valid ? 1 : 2);
    for (const MentionRecord* m : ms) {
      const int p = part.at(m->entity_id);
      (p == 0 ? out.train : p == 1 ? out.valid : out.test).push_back(m->mention_id);
    }
  }
  return out;
}

void save_el_splits(const ElSplits& s, const std::filesystem::path& path) {
  std::ofstream out;
  open_out(out, path);
  nlohmann::ordered_json j;
  j["train"] = s.train;
  j["valid"] = s.valid;
  j["test"] = s.test;
  out << j.dump(1) << '\n';
}

ElSplits load_el_splits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return ElSplits{j.at("train").get<std::vector<std::string>>(), j.at("valid").get<std::vector<std::string>>(),
                    j.at("test").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path.filename().string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

ElCorpus synth_el_corpus(const ElSynthSpec& spec) {
  if (spec.domains < 1 || spec.docs_per_domain < 1 || spec.mentions_per_entity < 1)
    throw Error(ErrorKind::kConfiguration, "synthetic corpus sizes must be positive");
  static const std::vector<std::string> kDomains = {"forest", "harbor", "desert", "tundra", "isles",
                                                    "canyon", "steppe", "delta"};
  static const std::vector<std::string> kRoles = {"smith",  "baker",  "knight", "sailor", "healer",   "scribe",
                                                  "hunter", "miner",  "weaver", "farmer", "merchant", "bard"};
  static const std::vector<std::string> kTraits = {"brave", "quiet", "clever", "stern",  "gentle",
                                                   "proud", "swift", "humble", "wise",   "bold"};
  static const std::vector<std::string> kPlaces = {"ridge", "hollow", "bay",   "mill",  "fort",
                                                   "vale",  "creek",  "spire", "marsh", "grove"};
  static const std::vector<std::string> kItems = {"lantern", "hammer", "banner", "compass", "flute",
                                                  "shield",  "ledger", "sickle", "map",     "kettle"};
  static const std::vector<std::string> kOpen = {"we met", "people say", "last winter", "the story goes that",
                                                 "everyone knows"};
  static const std::string kCons = "bdfgklmnprstvz", kVow = "aeiou";
  std::mt19937_64 rng(spec.seed);
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  std::set<std::string> names;
  auto fresh_name = [&] {
    while (true) {
      std::string n;
      for (int s = 0; s < 3; ++s) {
        n += kCons[std::uniform_int_distribution<std::size_t>(0, kCons.size() - 1)(rng)];
        n += kVow[std::uniform_int_distribution<std::size_t>(0, kVow.size() - 1)(rng)];
      }
      if (names.insert(n).second) {
        n[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(n[0])));
        return n;
      }
    }
  };
  ElCorpus out;
  int mention_no = 0;
  for (int d = 0; d < spec.domains; ++d) {
    const std::string domain = d < static_cast<int>(kDomains.size()) ? kDomains[static_cast<std::size_t>(d)]
                                                                      : "domain" + std::to_string(d);
    for (int i = 0; i < spec.docs_per_domain; ++i) {
      const std::string name = fresh_name(), role = pick(kRoles), trait = pick(kTraits), place = pick(kPlaces),
                        item = pick(kItems);
      Document doc;
      doc.entity_id = domain + "_" + std::to_string(i);
      doc.domain = domain;
      doc.title = name;
      doc.body = name + " is a " + trait + " " + role + " from the " + place + " . " + name + " always carries a " +
                 item + " across the " + domain + " .";
      out.documents.push_back(doc);
      for (int k = 0; k < spec.mentions_per_entity; ++k) {
        // Three of the four attributes, in two fragments around the span.
        std::vector<std::string> frags = {"the " + trait + " " + role, "from the " + place, "with the " + item};
        const int skip = std::uniform_int_distribution<int>(0, 3)(rng);
        if (skip == 0) frags[0] = "the " + role;
        if (skip == 1) frags[0] = "the " + trait + " one";
        if (skip == 2) frags[1] = "from far away";
        if (skip == 3) frags[2] = "with nothing";
        std::shuffle(frags.begin() + 1, frags.end(), rng);
        MentionRecord m;
        m.mention_id = "m" + std::to_string(mention_no++);
        m.domain = domain;
        m.context_left = pick(kOpen) + " " + frags[0] + " called";
        m.mention = name;
        m.context_right = frags[1] + " came " + frags[2] + " .";
        m.entity_id = doc.entity_id;
        out.mentions.push_back(m);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model inputs and losses

Tokenizer build_el_tokenizer(const std::vector<MentionRecord>& mentions, const DocumentCollection& docs,
                             int min_count) {
  std::vector<Tokens> corpus;
  for (const MentionRecord& m : mentions) {
    corpus.push_back(tokenize(m.context_left));
    corpus.push_back(tokenize(m.mention));
    corpus.push_back(tokenize(m.context_right));
  }
  for (const Document& d : docs.documents()) corpus.push_back(tokenize(candidate_body(d)));
  return Tokenizer::build(corpus, min_count);
}

EncoderInput el_mention_input(const Tokenizer& tok, const MentionRecord& m, int soft_prompts, int max_len) {
  if (soft_prompts < 0) throw Error(ErrorKind::kConfiguration, "soft prompt count must be >= 0");
  const Tokens left = tokenize(m.context_left), span = tokenize(m.mention), right = tokenize(m.context_right);
  const int budget = max_len - 2 - 2 * soft_prompts - static_cast<int>(span.size());
  if (budget < 0)
    throw Error(ErrorKind::kInputLayout, "mention " + m.mention_id + " longer than max_len - 2 - 2p tokens");
  const auto l = static_cast<int>(left.size()), r = static_cast<int>(right.size());
  int keep_l = l, keep_r = r;
  if (l + r > budget) {
    keep_l = std::min(l, std::max(budget / 2, budget - r));
    keep_r = std::min(r, budget - keep_l);
  }
  EncoderInput in;
  auto push = [&](int id, int slot) {
    in.ids.push_back(id);
    in.soft_prompt.push_back(slot);
  };
  push(kClsId, -1);
  for (auto it = left.end() - keep_l; it != left.end(); ++it) push(tok.id(*it), -1);
  for (int i = 0; i < soft_prompts; ++i) push(kPadId, i);
  for (const auto& t : span) push(tok.id(t), -1);
  for (int i = 0; i < soft_prompts; ++i) push(kPadId, soft_prompts + i);
  for (int i = 0; i < keep_r; ++i) push(tok.id(right[static_cast<std::size_t>(i)]), -1);
  push(kSepId, -1);
  in.mask.assign(in.ids.size(), 1);
  in.pool_index = 0;
  in.site = PoolingSite::kCls;
  return in;
}

EncoderInput el_candidate_input(const Tokenizer& tok, const std::string& body, int max_len) {
  Tokens t = tokenize(body);
  if (static_cast<int>(t.size()) > max_len - 2) t.resize(static_cast<std::size_t>(std::max(0, max_len - 2)));
  return entity_input(tok, t, max_len);
}

std::string candidate_body(const Document& d) { return scrub_name(d.body, d.title); }

Matrix<std::uint8_t> el_pool_mask(const std::vector<ElExample>& batch, Eigen::Index candidate_rows) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  Matrix<std::uint8_t> m = Matrix<std::uint8_t>::Zero(n, candidate_rows);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = batch[static_cast<std::size_t>(i)].gold;
    m(i, own) = 1;
    for (const ElExample& ex : batch)
      for (int c : ex.candidates) {
        if (c < 0 || c >= candidate_rows) throw Error(ErrorKind::kData, "candidate row outside the batch");
        if (c != ex.gold && c != own) m(i, c) = 1;
      }
  }
  return m;
}

double el_batch_loss(const Eigen::MatrixXd& mentions, const Eigen::MatrixXd& candidates,
                     const std::vector<ElExample>& batch, double temperature) {
  if (mentions.rows() != static_cast<Eigen::Index>(batch.size()))
    throw Error(ErrorKind::kInputLayout, "one mention embedding per example expected");
  Tape<double> tape(false);
  Var m = tape.constant(Matrix<double>(mentions));
  Var c = tape.constant(Matrix<double>(candidates));
  return tape.scalar(el_loss(tape, m, c, batch, temperature));
}

template <typename T>
RankingMetrics el_evaluate(ElModel<T>& model, const std::vector<MentionRecord>& mentions,
                           const std::vector<CandidateSet>& sets, const DocumentCollection& docs,
                           std::vector<long>* ranks_out) {
  tune_allocator();
  std::unordered_map<std::string, const CandidateSet*> by_mention;
  for (const CandidateSet& cs : sets) by_mention[cs.mention_id] = &cs;
  std::vector<const MentionRecord*> kept;
  std::vector<EncoderInput> m_in;
  std::map<std::string, int> doc_row;
  std::vector<EncoderInput> d_in;
  for (const MentionRecord& m : mentions) {
    auto it = by_mention.find(m.mention_id);
    if (it == by_mention.end()) continue;
    kept.push_back(&m);
    m_in.push_back(el_mention_input(model.tok, m, model.cfg.el_soft_prompts, model.cfg.max_len));
    for (const std::string& c : it->second->candidates)
      if (doc_row.emplace(c, static_cast<int>(d_in.size())).second)
        d_in.push_back(el_candidate_input(model.tok, candidate_body(docs.document(c)), model.cfg.max_len));
  }
  if (kept.empty()) throw Error(ErrorKind::kEvaluation, "no mentions with candidate sets");
  const Eigen::MatrixXd me = encode_pooled(model.mention, m_in, model.cfg.workers);
  const Eigen::MatrixXd de = encode_pooled(model.candidate, d_in, model.cfg.workers);
  std::vector<long> ranks;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const CandidateSet& cs = *by_mention.at(kept[i]->mention_id);
    std::vector<double> scores;
    for (const std::string& c : cs.candidates)
      scores.push_back(cosine_sim(me.row(static_cast<Eigen::Index>(i)).transpose(),
                                  de.row(doc_row.at(c)).transpose(), model.cfg.temperature));
    ranks.push_back(filtered_rank(scores, cs.gold_index, {}));
  }
  if (ranks_out) *ranks_out = ranks;
  RankingMetrics m = metrics(ranks);
  m.check();
  return m;
}

template <typename T>
ElTrainer<T>::ElTrainer(ElModel<T>& model, const std::vector<MentionRecord>& train,
                        const std::vector<CandidateSet>& sets, const DocumentCollection& docs)
    : model_(model), docs_(docs), opt_(model.parameters(), model.cfg.weight_decay), rng_(model.cfg.seed ^ 0xE1ULL) {
  tune_allocator();
  std::unordered_map<std::string, const CandidateSet*> by_mention;
  for (const CandidateSet& cs : sets) by_mention[cs.mention_id] = &cs;
  for (const MentionRecord& m : train) {
    auto it = by_mention.find(m.mention_id);
    if (it == by_mention.end()) continue;
    mentions_.push_back(&m);
    sets_.push_back(it->second);
  }
  if (mentions_.empty()) throw Error(ErrorKind::kData, "no training mentions with candidate sets");
  const auto bs = static_cast<std::size_t>(model_.cfg.el_batch_size);
  total_steps_ = static_cast<std::int64_t>((mentions_.size() + bs - 1) / bs) * model_.cfg.epochs;
}

template <typename T>
double ElTrainer<T>::train_epoch(int epoch) {
  const TrainConfig& cfg = model_.cfg;
  std::vector<std::size_t> order(mentions_.size());
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0xE1u};
  std::mt19937_64 shuffle_rng(seq);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const auto bs = static_cast<std::size_t>(cfg.el_batch_size);
  double sum = 0;
  int batches = 0;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    std::vector<EncoderInput> m_in, d_in;
    std::map<std::string, int> doc_row;
    std::vector<ElExample> batch;
    auto row_of = [&](const std::string& id) {
      auto [it, fresh] = doc_row.emplace(id, static_cast<int>(d_in.size()));
      if (fresh) d_in.push_back(el_candidate_input(model_.tok, candidate_body(docs_.document(id)), cfg.max_len));
      return it->second;
    };
    for (std::size_t k = start; k < end; ++k) {
      const MentionRecord& m = *mentions_[order[k]];
      const CandidateSet& cs = *sets_[order[k]];
      m_in.push_back(el_mention_input(model_.tok, m, cfg.el_soft_prompts, cfg.max_len));
      std::vector<std::string> negs;
      for (std::size_t c = 0; c < cs.candidates.size(); ++c)
        if (static_cast<int>(c) != cs.gold_index) negs.push_back(cs.candidates[c]);
      std::shuffle(negs.begin(), negs.end(), rng_);
      negs.resize(std::min(negs.size(), static_cast<std::size_t>(cfg.el_negatives)));
      ElExample ex;
      ex.gold = row_of(cs.candidates[static_cast<std::size_t>(cs.gold_index)]);
      ex.candidates.push_back(ex.gold);
      for (const auto& n : negs) ex.candidates.push_back(row_of(n));
      batch.push_back(std::move(ex));
    }
    for (auto& [name, p] : opt_.params()) p->zero_grad();
    Tape<T> tape(true);
    EncoderGraph<T> mg(tape, model_.mention, &rng_);
    EncoderGraph<T> cg(tape, model_.candidate, &rng_);
    Var mv = mg.encode_batch(m_in).pooled;
    Var cv = cg.encode_batch(d_in).pooled;
    Var loss = el_loss(tape, mv, cv, batch, static_cast<T>(cfg.temperature));
    const double l = tape.scalar(loss);
    if (!std::isfinite(l))
      throw Error(ErrorKind::kNonFiniteLoss, "non-finite entity-linking loss at step " + std::to_string(opt_.steps() + 1));
    tape.backward(loss);
    opt_.step(scheduled_lr(cfg.lr, opt_.steps() + 1, cfg.warmup_steps, total_steps_));
    sum += l;
    ++batches;
  }
  return sum / std::max(1, batches);
}

template RankingMetrics el_evaluate<float>(ElModel<float>&, const std::vector<MentionRecord>&,
                                           const std::vector<CandidateSet>&, const DocumentCollection&,
                                           std::vector<long>*);
template RankingMetrics el_evaluate<double>(ElModel<double>&, const std::vector<MentionRecord>&,
                                            const std::vector<CandidateSet>&, const DocumentCollection&,
                                            std::vector<long>*);
template class ElTrainer<float>;
template class ElTrainer<double>;

std::string el_report_json(const RankingMetrics& m, const std::string& split, const std::string& config_hash,
                           std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["MRR"] = m.mrr;
  j["hits1"] = m.hits1;
  j["hits3"] = m.hits3;
  j["hits10"] = m.hits10;
  j["n_queries"] = m.count;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  return nlohmann::ordered_json::array({j}).dump(2);
}

}  // namespace bilink
