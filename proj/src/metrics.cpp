#include "rankdistill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rankdistill/errors.hpp"

namespace rankdistill {

double ndcg_at_k(const std::vector<double>& rels, int k) {
  if (k <= 0) throw InputError("ndcg cutoff must be positive");
  auto dcg = [k](const std::vector<double>& r) {
    double s = 0;
    const int n = std::min<int>(k, static_cast<int>(r.size()));
    for (int i = 0; i < n; ++i) {
      s += (std::pow(2.0, r[static_cast<std::size_t>(i)]) - 1.0) / std::log2(i + 2.0);
    }
    return s;
  };
  std::vector<double> ideal = rels;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal);
  if (idcg == 0.0) return 0.0;
  return dcg(rels) / idcg;
}

EvalResult evaluate_run(const Run& run, const Qrels& qrels, const std::vector<int>& ks) {
  EvalResult result;
  for (const auto& [qid, entries] : run) {
    auto qit = qrels.find(qid);
    if (qit == qrels.end()) {
      result.skipped_queries.push_back(qid);
      continue;
    }
    std::vector<double> rels;
    rels.reserve(entries.size());
    for (const auto& e : entries) {
      auto dit = qit->second.find(e.doc_id);
      rels.push_back(dit == qit->second.end() ? 0.0 : static_cast<double>(dit->second));
    }
    for (int k : ks) result.per_query[qid][k] = ndcg_at_k(rels, k);
    ++result.evaluated_queries;
  }
  for (int k : ks) {
    double sum = 0;
    for (const auto& [qid, by_k] : result.per_query) sum += by_k.at(k);
    result.mean[k] = result.evaluated_queries ? sum / result.evaluated_queries : 0.0;
  }
  return result;
}

void save_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open qrels file for writing: " + path.string());
  for (const auto& [qid, docs] : qrels) {
    for (const auto& [did, rel] : docs) out << qid << " 0 " << did << " " << rel << "\n";
  }
}

Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open qrels file: " + path.string());
  Qrels qrels;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, zero, did;
    int rel;
    if (!(ss >> qid >> zero >> did >> rel)) {
      throw InputError("malformed qrels line " + std::to_string(lineno) + ": " + line);
    }
    qrels[qid][did] = rel;
  }
  return qrels;
}

void save_run(const Run& run, const std::filesystem::path& path, const std::string& tag) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open run file for writing: " + path.string());
  out.precision(17);
  for (const auto& [qid, entries] : run) {
    int rank = 1;
    for (const auto& e : entries) {
      out << qid << " Q0 " << e.doc_id << " " << rank++ << " " << e.score << " " << tag << "\n";
    }
  }
}

Run load_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run file: " + path.string());
  Run run;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, q0, did, tag;
    long rank;
    double score;
    if (!(ss >> qid >> q0 >> did >> rank >> score >> tag)) {
      throw InputError("malformed run line " + std::to_string(lineno) + ": " + line);
    }
    run[qid].push_back({did, score});
  }
  return run;
}

}  // namespace rankdistill
