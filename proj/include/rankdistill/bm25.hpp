#pragma once

#include <map>
#include <string>
#include <vector>

#include "rankdistill/text.hpp"

namespace rankdistill {

// Okapi BM25 scoped to a candidate pool: document frequencies, document
// count and average length all come from the pool itself, so documents
// outside the pool never influence scores.
class Bm25 {
 public:
  static constexpr double kDefaultK1 = 1.2;
  static constexpr double kDefaultB = 0.75;

  explicit Bm25(const std::vector<Document>& pool, double k1 = kDefaultK1, double b = kDefaultB);

  // idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1); unique query terms each
  // contribute once; terms absent from the document contribute 0.
  double score(const Query& query, const Document& doc) const;

  double idf(const std::string& term) const;
  double avgdl() const { return avgdl_; }
  int doc_count() const { return n_; }

 private:
  double k1_, b_;
  int n_ = 0;
  double avgdl_ = 0;
  std::map<std::string, int> df_;
};

// Pool ranked by BM25 descending, score ties broken by ascending doc id.
std::vector<std::pair<std::string, double>> bm25_rank(const Query& query,
                                                      const std::vector<Document>& pool,
                                                      double k1 = Bm25::kDefaultK1,
                                                      double b = Bm25::kDefaultB);

}  // namespace rankdistill
