#include "rankdistill/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "rankdistill/errors.hpp"

namespace rankdistill {

Bm25::Bm25(const std::vector<Document>& pool, double k1, double b) : k1_(k1), b_(b) {
  if (pool.empty()) throw InputError("bm25 candidate pool is empty");
  n_ = static_cast<int>(pool.size());
  long total_len = 0;
  for (const auto& d : pool) {
    auto words = split_words(d.text);
    total_len += static_cast<long>(words.size());
    std::set<std::string> uniq(words.begin(), words.end());
    for (const auto& w : uniq) ++df_[w];
  }
  avgdl_ = static_cast<double>(total_len) / n_;
}

double Bm25::idf(const std::string& term) const {
  auto it = df_.find(term);
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((n_ - df + 0.5) / (df + 0.5) + 1.0);
}

double Bm25::score(const Query& query, const Document& doc) const {
  auto dwords = split_words(doc.text);
  const double dl = static_cast<double>(dwords.size());
  std::map<std::string, int> tf;
  for (const auto& w : dwords) ++tf[w];

  auto qwords = split_words(query.text);
  std::set<std::string> qterms(qwords.begin(), qwords.end());

  double s = 0;
  for (const auto& t : qterms) {
    auto it = tf.find(t);
    if (it == tf.end()) continue;
    const double f = static_cast<double>(it->second);
    const double norm = f + k1_ * (1.0 - b_ + b_ * (avgdl_ > 0 ? dl / avgdl_ : 0.0));
    s += idf(t) * (f * (k1_ + 1.0)) / norm;
  }
  return s;
}

std::vector<std::pair<std::string, double>> bm25_rank(const Query& query,
                                                      const std::vector<Document>& pool,
                                                      double k1, double b) {
  Bm25 index(pool, k1, b);
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(pool.size());
  for (const auto& d : pool) scored.emplace_back(d.id, index.score(query, d));
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b2) {
    if (a.second != b2.second) return a.second > b2.second;
    return a.first < b2.first;
  });
  return scored;
}

}  // namespace rankdistill
