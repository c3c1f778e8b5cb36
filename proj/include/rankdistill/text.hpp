#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rankdistill {

// Token-id space shared by all models. Ids 0..3 are the fixed special
// tokens; word tokens follow, most frequent first. Decoder control tokens
// are appended later via add_token and live at the tail.
class Vocabulary {
 public:
  static constexpr const char* kPad = "[PAD]";
  static constexpr const char* kCls = "[CLS]";
  static constexpr const char* kSep = "[SEP]";
  static constexpr const char* kUnk = "<unk>";

  Vocabulary();

  int add_token(const std::string& token);  // appends; error if already present
  bool has(std::string_view token) const;
  std::optional<int> id_of(std::string_view token) const;
  const std::string& token(int id) const;  // error on out-of-range id
  int size() const { return static_cast<int>(id_to_token_.size()); }

  int pad_id() const { return 0; }
  int cls_id() const { return 1; }
  int sep_id() const { return 2; }
  int unk_id() const { return 3; }
  static int base_special_count() { return 4; }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Lowercased word splitter: runs of ASCII alphanumerics (and any non-ASCII
// bytes) form tokens, everything else separates. "Dog sleeps." -> dog, sleeps
std::vector<std::string> split_words(std::string_view text);

// split_words mapped through the vocabulary; unknown words become <unk>.
// Text with characters but no extractable words maps to a single <unk> so
// nonblank input never produces an empty sequence.
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);

// Space-joined token strings for the given ids.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// Frequency-ranked vocabulary over the given texts, capped at max_size
// entries including the 4 fixed specials. Frequency ties break toward the
// lexicographically smaller token.
Vocabulary build_vocabulary(const std::vector<std::string>& texts, int max_size);

struct Document {
  std::string id;
  std::string text;
  std::vector<int> token_ids;
  std::optional<double> hidden_relevance;  // ground truth, synthetic corpora only
};

struct Query {
  std::string id;
  std::string text;
  std::vector<int> token_ids;
};

struct CandidateSet {
  Query query;
  std::vector<Document> documents;
};

struct Corpus {
  Vocabulary vocab;
  std::vector<CandidateSet> sets;

  const Document* find_document(std::string_view doc_id) const;
  const CandidateSet* find_set(std::string_view query_id) const;
  void rebuild_index();

 private:
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> doc_index_;
  std::unordered_map<std::string, std::size_t> set_index_;
};

// Topic-model synthetic retrieval corpus. Each query draws from one topic's
// word slice; each candidate document mixes query words, query-topic words
// and off-topic filler in proportion to its hidden relevance, so term
// overlap correlates with relevance without determining it. Relevance
// levels are stratified across (roughly) [0.03, 0.97] within every set.
// Output is bit-reproducible for a given seed: integer-seeded draws only,
// no time, locale or platform dependence.
Corpus generate_synthetic_corpus(std::uint64_t seed, int n_queries, int docs_per_query,
                                 int vocab_size);

// JSONL, one candidate set per line:
// {"query":{"id","text"},"documents":[{"id","text","hidden_relevance"?}]}
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path, int vocab_max_size = 4000);

}  // namespace rankdistill
