#pragma once
// Entity linking over per-domain document collections: Okapi BM25 coarse
// retrieval, fixed-size candidate sets with scrubbed names, splits with
// disjoint gold entities, a soft-prompted mention encoder, and ranking within
// candidate sets.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "bilink/contrastive_trainer.hpp"
#include "bilink/encoder.hpp"
#include "bilink/ranking_eval.hpp"
#include "bilink/tokenizer.hpp"

namespace bilink {

struct MentionRecord {
  std::string mention_id;
  std::string domain;
  std::string context_left;
  std::string mention;
  std::string context_right;
  std::string entity_id;  // gold
};

struct Document {
  std::string entity_id;
  std::string domain;
  std::string title;
  std::string body;
};

// Okapi BM25 over tokenized documents.
class Bm25Index {
 public:
  Bm25Index() = default;
  explicit Bm25Index(std::vector<Tokens> docs);

  std::size_t size() const { return lengths_.size(); }
  double avgdl() const { return avgdl_; }
  int df(const std::string& term) const;
  std::size_t length(std::size_t doc) const { return lengths_.at(doc); }

  // sum over query tokens of idf(q) tf (k1+1) / (tf + k1 (1 - b + b |d|/avgdl)),
  // idf(q) = ln(1 + (N - df + 0.5)/(df + 0.5)). Throws kReferentialIntegrity
  // for an unknown doc.
  double score(const Tokens& query, std::size_t doc, double k1 = 1.2, double b = 0.75) const;

  // Documents with a positive score, best first (ties to the lower index), at
  // most k.
  std::vector<std::pair<std::size_t, double>> top(const Tokens& query, std::size_t k, double k1 = 1.2,
                                                  double b = 0.75) const;

 private:
  std::vector<std::unordered_map<std::string, int>> tf_;
  std::vector<std::size_t> lengths_;
  std::unordered_map<std::string, int> df_;
  double avgdl_ = 0;
};

// Documents grouped by domain with one BM25 index per domain over title+body.
class DocumentCollection {
 public:
  DocumentCollection() = default;
  explicit DocumentCollection(std::vector<Document> docs);  // throws kData on duplicate entity ids

  const std::vector<Document>& documents() const { return docs_; }
  const Document& document(const std::string& entity_id) const;  // throws kReferentialIntegrity
  std::optional<std::size_t> find(const std::string& entity_id) const;
  std::vector<std::string> domains() const;
  const std::vector<std::size_t>& domain_documents(const std::string& domain) const;  // global indices
  const Bm25Index& domain_index(const std::string& domain) const;

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<std::string, std::vector<std::size_t>> by_domain_;
  std::map<std::string, Bm25Index> index_;
};

std::vector<Document> load_documents(const std::filesystem::path& path);
void save_documents(const std::vector<Document>& docs, const std::filesystem::path& path);
std::vector<MentionRecord> load_mentions(const std::filesystem::path& path);
void save_mentions(const std::vector<MentionRecord>& mentions, const std::filesystem::path& path);

// Replaces every case-insensitive occurrence of `name` in `text` by [UNK].
std::string scrub_name(const std::string& text, const std::string& name);

enum class Provenance { kBm25, kRandomPad, kForced };
std::string_view to_string(Provenance p);

struct CandidateSet {
  std::string mention_id;
  std::vector<std::string> candidates;  // entity ids
  std::vector<Provenance> provenance;
  int gold_index = 0;

  // Length k, gold at gold_index, no duplicates, labels consistent.
  void validate(std::size_t k, const std::string& gold) const;
};

struct CandidateOptions {
  std::size_t k = 64;
  int context = 32;         // tokens of context kept on each side for the query
  bool force_gold = false;  // otherwise mentions with gold outside the top-k are dropped
  double k1 = 1.2, b = 0.75;
};

// mention + up to `context` tokens each side.
Tokens bm25_query(const MentionRecord& m, int context);

// Top-k by BM25 padded with uniformly drawn in-domain documents. The padding
// draw is keyed by (seed, mention id). nullopt when nothing scores above zero
// or the gold is not retrieved (unless force_gold).
std::optional<CandidateSet> build_candidates(const MentionRecord& m, const DocumentCollection& docs,
                                             const CandidateOptions& opt, std::uint64_t seed);

std::vector<CandidateSet> load_candidates(const std::filesystem::path& path);
void save_candidates(const std::vector<CandidateSet>& sets, const std::filesystem::path& path);

struct ElSplitRatios {
  double train = 0.6, valid = 0.2, test = 0.2;
};

struct ElSplits {
  std::vector<std::string> train, valid, test;  // mention ids

  friend bool operator==(const ElSplits&, const ElSplits&) = default;
};

// Per domain, gold entities are shuffled and cut by the ratios, and each
// mention follows its gold; domains with fewer than 3 distinct golds are
// skipped.
ElSplits build_inductive_splits(const std::vector<MentionRecord>& mentions, ElSplitRatios ratios, std::uint64_t seed);
void save_el_splits(const ElSplits& s, const std::filesystem::path& path);
ElSplits load_el_splits(const std::filesystem::path& path);

// Synthetic multi-domain corpus: each document states a handful of attributes
// of its entity, and each mention's context repeats some of them.
struct ElSynthSpec {
  int domains = 5;
  int docs_per_domain = 70;
  int mentions_per_entity = 3;
  std::uint64_t seed = 0;
};

struct ElCorpus {
  std::vector<Document> documents;
  std::vector<MentionRecord> mentions;
};

ElCorpus synth_el_corpus(const ElSynthSpec& spec);

// ---------------------------------------------------------------------------
// Model.

template <typename T>
struct ElModel {
  TrainConfig cfg;
  Tokenizer tok;
  Encoder<T> mention;    // carries the soft prompt bank
  Encoder<T> candidate;

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> out;
    for (auto& [n, p] : mention.parameters()) out.emplace_back("mention." + n, p);
    for (auto& [n, p] : candidate.parameters()) out.emplace_back("candidate." + n, p);
    return out;
  }

  template <typename U>
  ElModel<U> cast() const {
    ElModel<U> out;
    out.cfg = cfg;
    out.tok = tok;
    out.mention = mention.template cast<U>();
    out.candidate = candidate.template cast<U>();
    return out;
  }
};

Tokenizer build_el_tokenizer(const std::vector<MentionRecord>& mentions, const DocumentCollection& docs,
                             int min_count);

template <typename T>
ElModel<T> init_el_model(const TrainConfig& cfg, Tokenizer tok) {
  cfg.validate();
  ElModel<T> m;
  m.cfg = cfg;
  m.tok = std::move(tok);
  EncoderConfig mc = cfg.encoder_config(m.tok.size());
  mc.soft_prompts = 2 * cfg.el_soft_prompts;
  const EncoderConfig cc = cfg.encoder_config(m.tok.size());
  m.mention = Encoder<double>(mc, cfg.seed * 2 + 11).template cast<T>();
  m.candidate = Encoder<double>(cc, cfg.seed * 2 + 12).template cast<T>();
  return m;
}

// [CLS] left [SP_1..SP_p] mention [SP_p+1..SP_2p] right [SEP], pooled at [CLS].
// Context is trimmed symmetrically around the span when too long; a mention
// longer than max_len - 2 - 2p throws kInputLayout. Soft prompt slots hold
// [PAD] tokens plus the bank vector.
EncoderInput el_mention_input(const Tokenizer& tok, const MentionRecord& m, int soft_prompts, int max_len);

// [CLS] body [SEP] with the body truncated to fit, pooled at [CLS]. The body
// passed in should already be scrubbed.
EncoderInput el_candidate_input(const Tokenizer& tok, const std::string& body, int max_len);

// Scrubbed body of a candidate document.
std::string candidate_body(const Document& d);

// Pooled eval-mode embeddings.
template <typename T>
Eigen::VectorXd el_encode(ElModel<T>& model, const MentionRecord& m) {
  return encode_pooled(model.mention, {el_mention_input(model.tok, m, model.cfg.el_soft_prompts, model.cfg.max_len)},
                       1)
      .row(0)
      .transpose();
}

template <typename T>
Eigen::VectorXd el_encode(ElModel<T>& model, const Document& d) {
  return encode_pooled(model.candidate, {el_candidate_input(model.tok, candidate_body(d), model.cfg.max_len)}, 1)
      .row(0)
      .transpose();
}

// One batch example: its gold and its other candidates as row indices into the
// candidate embedding matrix (one row per distinct document).
struct ElExample {
  int gold = 0;
  std::vector<int> candidates;  // may include gold
};

// Allowed columns per mention: its gold plus every other example's non-gold
// candidates, deduplicated, never its own gold as a negative.
Matrix<std::uint8_t> el_pool_mask(const std::vector<ElExample>& batch, Eigen::Index candidate_rows);

template <typename T>
Var el_loss(Tape<T>& tape, Var mentions, Var candidates, const std::vector<ElExample>& batch, T temperature) {
  const Eigen::Index rows = tape.value(candidates).rows();
  if (batch.empty()) throw Error(ErrorKind::kBatchSize, "entity-linking batch is empty");
  std::vector<int> targets;
  for (const ElExample& ex : batch) {
    if (ex.gold < 0 || ex.gold >= rows) throw Error(ErrorKind::kData, "gold embedding missing from the batch");
    targets.push_back(ex.gold);
  }
  Var logits = ad::cosine_matrix(tape, mentions, candidates, temperature);
  return ad::masked_cross_entropy(tape, logits, std::move(targets), el_pool_mask(batch, rows));
}

// Mean softmax cross-entropy of precomputed embeddings.
double el_batch_loss(const Eigen::MatrixXd& mentions, const Eigen::MatrixXd& candidates,
                     const std::vector<ElExample>& batch, double temperature);

// Gold rank by cosine within each mention's candidate set (no filter).
template <typename T>
RankingMetrics el_evaluate(ElModel<T>& model, const std::vector<MentionRecord>& mentions,
                           const std::vector<CandidateSet>& sets, const DocumentCollection& docs,
                           std::vector<long>* ranks_out = nullptr);

template <typename T>
class ElTrainer {
 public:
  ElTrainer(ElModel<T>& model, const std::vector<MentionRecord>& train, const std::vector<CandidateSet>& sets,
            const DocumentCollection& docs);

  // Mean batch loss of the epoch.
  double train_epoch(int epoch);
  std::int64_t steps() const { return opt_.steps(); }

 private:
  ElModel<T>& model_;
  std::vector<const MentionRecord*> mentions_;
  std::vector<const CandidateSet*> sets_;
  const DocumentCollection& docs_;
  AdamW<T> opt_;
  std::mt19937_64 rng_;
  std::int64_t total_steps_ = 0;
};

extern template RankingMetrics el_evaluate<float>(ElModel<float>&, const std::vector<MentionRecord>&,
                                                  const std::vector<CandidateSet>&, const DocumentCollection&,
                                                  std::vector<long>*);
extern template RankingMetrics el_evaluate<double>(ElModel<double>&, const std::vector<MentionRecord>&,
                                                   const std::vector<CandidateSet>&, const DocumentCollection&,
                                                   std::vector<long>*);
extern template class ElTrainer<float>;
extern template class ElTrainer<double>;

// el report: [{split, MRR, hits1, hits3, hits10, n_queries, config_hash, seed}]
std::string el_report_json(const RankingMetrics& m, const std::string& split, const std::string& config_hash,
                            std::uint64_t seed);

}  // namespace bilink
