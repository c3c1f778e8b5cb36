#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rankdistill {

// Graded relevance judgments: query id -> (doc id -> integer grade).
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct RunEntry {
  std::string doc_id;
  double score = 0;
};

// System output: query id -> docs in rank order.
using Run = std::map<std::string, std::vector<RunEntry>>;

// Exponential-gain nDCG: DCG = sum (2^rel - 1) / log2(rank + 1) over the
// first k positions; ideal from the same relevance multiset sorted
// descending. All-zero relevance yields 0.
double ndcg_at_k(const std::vector<double>& rels_in_rank_order, int k);

struct EvalResult {
  std::map<std::string, std::map<int, double>> per_query;  // qid -> k -> ndcg
  std::map<int, double> mean;                              // k -> macro average
  int evaluated_queries = 0;
  std::vector<std::string> skipped_queries;  // in the run but absent from qrels
};

// Macro-averaged nDCG at each cutoff. Docs missing from qrels count as
// relevance 0; run queries missing from qrels are skipped and reported.
EvalResult evaluate_run(const Run& run, const Qrels& qrels, const std::vector<int>& ks = {5, 10});

// TREC formats: qrels "qid 0 docid rel", run "qid Q0 docid rank score tag".
void save_qrels(const Qrels& qrels, const std::filesystem::path& path);
Qrels load_qrels(const std::filesystem::path& path);
void save_run(const Run& run, const std::filesystem::path& path, const std::string& tag);
Run load_run(const std::filesystem::path& path);

}  // namespace rankdistill
