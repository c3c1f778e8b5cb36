#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rankdistill/text.hpp"

namespace rankdistill {

// Candidate set ordered by a pre-ranker. top10/bottom10 are the head and
// tail of the ordering (min(10, n) each); pre is their union with
// duplicates removed, which is the whole set whenever n < 20.
struct PreRankedSet {
  Query query;
  std::vector<Document> ordered;   // ranker score descending, doc-id ascending on ties
  std::vector<Document> top10;
  std::vector<Document> bottom10;
  std::vector<Document> pre;       // what the labeler sees
};

PreRankedSet pre_rank(const CandidateSet& cands,
                      const std::function<double(const Document&)>& ranker);

// Convenience pre-ranker: BM25 over the candidate pool itself.
std::function<double(const Document&)> make_bm25_preranker(const CandidateSet& cands);

// Produces an ordered subset of the given documents' ids, most relevant
// first. Documents it leaves out are the "missing" ones the pipeline turns
// into hard negatives.
class Labeler {
 public:
  virtual ~Labeler() = default;
  virtual std::vector<std::string> rank(const Query& query,
                                        const std::vector<Document>& docs) = 0;
};

// Deterministic stand-in for the teacher: includes documents with
// hidden_relevance above the threshold, ordered by relevance descending.
// Documents within +-0.05 of the threshold flip sides with probability
// miss_noise (seeded per query/document), modeling imperfect exclusion.
class SyntheticOracleLabeler : public Labeler {
 public:
  SyntheticOracleLabeler(double threshold, double miss_noise, std::uint64_t seed)
      : threshold_(threshold), miss_noise_(miss_noise), seed_(seed) {}

  std::vector<std::string> rank(const Query& query, const std::vector<Document>& docs) override;

 private:
  double threshold_;
  double miss_noise_;
  std::uint64_t seed_;
};

struct HttpLabelerConfig {
  std::string endpoint;                              // http(s)://host[:port]/path
  std::string token_env = "RANKDISTILL_HTTP_TOKEN";  // bearer token source
  int timeout_seconds = 30;
  int max_retries = 2;
};

// Chat-completion client. Sends one list-wise prompt per query and expects
// the reply content to be "id ( > id)*" over the supplied ids; anything
// else (unknown ids, duplicates, empty content) is a contract violation.
class HttpChatLabeler : public Labeler {
 public:
  explicit HttpChatLabeler(HttpLabelerConfig config) : config_(std::move(config)) {}

  std::vector<std::string> rank(const Query& query, const std::vector<Document>& docs) override;

  static std::string build_prompt(const Query& query, const std::vector<Document>& docs);
  static std::vector<std::string> parse_ranking(const std::string& content,
                                                const std::vector<Document>& docs);

 private:
  HttpLabelerConfig config_;
};

// Labeler verdict for one query, plus the graded/binary training targets
// derived from it.
struct RankingLabel {
  std::string query_id;
  std::string query_text;
  std::vector<std::string> ranked;     // labeler order
  std::vector<std::string> excluded;   // pre-set docs the labeler left out (pre order)
  std::vector<std::string> negatives;  // sampled from outside the candidate set
  std::map<std::string, double> graded_scores;
  std::map<std::string, int> binary_labels;      // 1 iff id in ranked
  std::map<std::string, std::string> reasoning;  // point-wise explanation text
  std::uint64_t seed = 0;                        // per-query sub-seed used below
};

// Splits the pre set by the labeler's output; validates the contract
// (subset of pre ids, no duplicates).
void label_with_missing(const PreRankedSet& pre, const std::vector<std::string>& labeler_output,
                        std::vector<std::string>& ranked_out,
                        std::vector<std::string>& excluded_out);

// size documents from outside the query's candidate set, uniform from the
// pool of essentially-unrelated documents (no meaningful term overlap with
// the query); falls back to lowest-overlap documents when that pool is
// thin. Errors when fewer than size documents exist outside the set.
std::vector<std::string> sample_negatives(const Corpus& corpus, const std::string& query_id,
                                          int size, std::uint64_t seed);

// Graded targets: ranked doc i (1-based) scores (20 - i)/10 floored at
// 0.21; excluded docs score (20 - (j+1))/100 with j a seeded permutation of
// 0..|excluded|-1 (the excluded band 0.19, 0.18, ...); negatives score 0.
// Id sets must be disjoint.
std::map<std::string, double> assign_graded_scores(const std::vector<std::string>& ranked,
                                                   const std::vector<std::string>& excluded,
                                                   const std::vector<std::string>& negatives,
                                                   std::uint64_t seed);

using ReasoningGenerator =
    std::function<std::string(const Query&, const Document&, int binary_label)>;

// Template-based mock: cites shared terms for label 1 and their absence for
// label 0.
std::string mock_reasoning(const Query& query, const Document& doc, int binary_label);

// Back-to-front sliding-window re-ranking over the full list (the labeling
// scheme of the list-wise baseline). Each window is re-ordered by the
// labeler, window-excluded ids keeping their prior relative order after the
// ranked ones; the window then slides toward the front by `step`.
std::vector<std::string> sliding_window_label(const Query& query,
                                              const std::vector<Document>& docs, Labeler& labeler,
                                              int window = 20, int step = 10);

struct SkipReport {
  std::string query_id;
  std::string reason;
};

struct DatasetBuildResult {
  std::vector<RankingLabel> labels;
  std::vector<SkipReport> skipped;
};

struct DatasetBuildOptions {
  int negatives = 3;
  bool sliding_window = false;  // label the full candidate list with windows instead of pre sets
  ReasoningGenerator reasoning = mock_reasoning;
};

// Full pipeline over a corpus: pre-rank, label, capture missing docs,
// sample negatives, grade, attach reasoning. Queries with empty or
// contract-violating labeler output are skipped and reported. Deterministic
// for a given seed regardless of call order.
DatasetBuildResult build_dataset(const Corpus& corpus, Labeler& labeler, std::uint64_t seed,
                                 const DatasetBuildOptions& options = {});

// JSONL, one object per query:
// {"query_id","query","ranked","excluded","negatives","graded","binary","reasoning","seed"}
void save_dataset(const std::vector<RankingLabel>& labels, const std::filesystem::path& path);
std::vector<RankingLabel> load_dataset(const std::filesystem::path& path);

}  // namespace rankdistill
