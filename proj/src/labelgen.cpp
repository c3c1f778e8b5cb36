#include "rankdistill/labelgen.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rankdistill/bm25.hpp"
#include "rankdistill/errors.hpp"
#include "rankdistill/random.hpp"

namespace rankdistill {

using nlohmann::json;

PreRankedSet pre_rank(const CandidateSet& cands,
                      const std::function<double(const Document&)>& ranker) {
  if (cands.documents.empty()) throw InputError("pre_rank: empty candidate set");
  PreRankedSet out;
  out.query = cands.query;

  std::vector<std::pair<double, const Document*>> scored;
  scored.reserve(cands.documents.size());
  for (const auto& d : cands.documents) scored.emplace_back(ranker(d), &d);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->id < b.second->id;
  });
  for (const auto& [score, doc] : scored) {
    (void)score;
    out.ordered.push_back(*doc);
  }

  const std::size_t n = out.ordered.size();
  const std::size_t ten = std::min<std::size_t>(10, n);
  out.top10.assign(out.ordered.begin(), out.ordered.begin() + static_cast<long>(ten));
  out.bottom10.assign(out.ordered.end() - static_cast<long>(ten), out.ordered.end());

  std::set<std::string> seen;
  for (const auto& d : out.top10) {
    if (seen.insert(d.id).second) out.pre.push_back(d);
  }
  for (const auto& d : out.bottom10) {
    if (seen.insert(d.id).second) out.pre.push_back(d);
  }
  return out;
}

std::function<double(const Document&)> make_bm25_preranker(const CandidateSet& cands) {
  auto index = std::make_shared<Bm25>(cands.documents);
  Query q = cands.query;
  return [index, q](const Document& d) { return index->score(q, d); };
}

std::vector<std::string> SyntheticOracleLabeler::rank(const Query& query,
                                                      const std::vector<Document>& docs) {
  std::vector<std::pair<double, std::string>> included;
  for (const auto& d : docs) {
    if (!d.hidden_relevance) {
      throw InputError("synthetic oracle labeler requires hidden_relevance on document " + d.id);
    }
    const double r = *d.hidden_relevance;
    bool in = r > threshold_;
    if (std::abs(r - threshold_) <= 0.05 && miss_noise_ > 0) {
      // Seeded per (query, doc) so the decision is independent of call order.
      RandomSource flip(derive_seed(seed_, query.id, d.id));
      if (flip.bernoulli(miss_noise_)) in = !in;
    }
    if (in) included.emplace_back(r, d.id);
  }
  std::sort(included.begin(), included.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> out;
  out.reserve(included.size());
  for (auto& [r, id] : included) {
    (void)r;
    out.push_back(std::move(id));
  }
  return out;
}

void label_with_missing(const PreRankedSet& pre, const std::vector<std::string>& labeler_output,
                        std::vector<std::string>& ranked_out,
                        std::vector<std::string>& excluded_out) {
  ranked_out.clear();
  excluded_out.clear();
  std::set<std::string> pre_ids;
  for (const auto& d : pre.pre) pre_ids.insert(d.id);

  std::set<std::string> seen;
  for (const auto& id : labeler_output) {
    if (!pre_ids.count(id)) {
      throw LabelerContractError("labeler returned id outside the pre set: " + id);
    }
    if (!seen.insert(id).second) {
      throw LabelerContractError("labeler returned duplicate id: " + id);
    }
    ranked_out.push_back(id);
  }
  for (const auto& d : pre.pre) {
    if (!seen.count(d.id)) excluded_out.push_back(d.id);
  }
}

namespace {

// Fraction of the query's terms that also occur in the document; the
// cross-query stand-in for relevance when judging eligibility of negatives.
double term_overlap(const Query& q, const Document& d) {
  auto qw = split_words(q.text);
  std::set<std::string> qs(qw.begin(), qw.end());
  if (qs.empty()) return 0.0;
  auto dw = split_words(d.text);
  std::set<std::string> ds(dw.begin(), dw.end());
  int hit = 0;
  for (const auto& t : qs) {
    if (ds.count(t)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(qs.size());
}

}  // namespace

std::vector<std::string> sample_negatives(const Corpus& corpus, const std::string& query_id,
                                          int size, std::uint64_t seed) {
  if (size <= 0) throw InputError("negative sample size must be positive");
  const CandidateSet* set = corpus.find_set(query_id);
  if (!set) throw InputError("unknown query id: " + query_id);

  std::set<std::string> own;
  for (const auto& d : set->documents) own.insert(d.id);

  std::vector<const Document*> eligible;   // essentially unrelated to the query
  std::vector<std::pair<double, const Document*>> fallback;
  for (const auto& other : corpus.sets) {
    for (const auto& d : other.documents) {
      if (own.count(d.id)) continue;
      const double overlap = term_overlap(set->query, d);
      if (overlap < 0.05) {
        eligible.push_back(&d);
      } else {
        fallback.emplace_back(overlap, &d);
      }
    }
  }
  if (static_cast<int>(eligible.size() + fallback.size()) < size) {
    throw InputError("not enough documents outside the candidate set to sample negatives for " +
                     query_id);
  }

  RandomSource rng(derive_seed(seed, "negatives", query_id));
  std::vector<std::string> out;
  auto picks = rng.sample_without_replacement(eligible.size(), static_cast<std::size_t>(size));
  for (auto i : picks) out.push_back(eligible[i]->id);
  if (static_cast<int>(out.size()) < size) {
    std::sort(fallback.begin(), fallback.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second->id < b.second->id;
    });
    for (const auto& [overlap, d] : fallback) {
      (void)overlap;
      if (static_cast<int>(out.size()) == size) break;
      out.push_back(d->id);
    }
  }
  return out;
}

std::map<std::string, double> assign_graded_scores(const std::vector<std::string>& ranked,
                                                   const std::vector<std::string>& excluded,
                                                   const std::vector<std::string>& negatives,
                                                   std::uint64_t seed) {
  std::set<std::string> all;
  auto check = [&all](const std::vector<std::string>& ids, const char* which) {
    for (const auto& id : ids) {
      if (!all.insert(id).second) {
        throw InputError(std::string("graded score id sets overlap at ") + which + ": " + id);
      }
    }
  };
  check(ranked, "ranked");
  check(excluded, "excluded");
  check(negatives, "negatives");

  std::map<std::string, double> scores;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    // (20 - i)/10 instead of 2 - 0.1*i: same values, exact decimals.
    double s = (20.0 - static_cast<double>(i + 1)) / 10.0;
    scores[ranked[i]] = std::max(s, 0.21);
  }
  std::vector<std::size_t> perm(excluded.size());
  for (std::size_t j = 0; j < perm.size(); ++j) perm[j] = j;
  RandomSource rng(derive_seed(seed, "excluded-permutation"));
  rng.shuffle(perm);
  for (std::size_t j = 0; j < excluded.size(); ++j) {
    scores[excluded[j]] = (20.0 - static_cast<double>(perm[j] + 1)) / 100.0;
  }
  for (const auto& id : negatives) scores[id] = 0.0;
  return scores;
}

std::string mock_reasoning(const Query& query, const Document& doc, int binary_label) {
  auto qw = split_words(query.text);
  std::set<std::string> qs(qw.begin(), qw.end());
  auto dw = split_words(doc.text);
  std::set<std::string> ds(dw.begin(), dw.end());
  std::vector<std::string> shared;
  for (const auto& t : qs) {
    if (ds.count(t)) shared.push_back(t);
  }
  std::string joined;
  for (std::size_t i = 0; i < shared.size(); ++i) {
    if (i) joined.push_back(' ');
    joined += shared[i];
  }
  if (binary_label == 1) {
    return "relevant: shares terms [" + joined + "]";
  }
  if (shared.empty()) return "irrelevant: no shared terms";
  return "irrelevant: shares only [" + joined + "] insufficient";
}

std::vector<std::string> sliding_window_label(const Query& query,
                                              const std::vector<Document>& docs, Labeler& labeler,
                                              int window, int step) {
  if (window <= 0 || step <= 0 || step > window) {
    throw ConfigError("sliding window requires 0 < step <= window");
  }
  if (docs.empty()) return {};

  std::vector<Document> work(docs.begin(), docs.end());
  const int n = static_cast<int>(work.size());

  std::vector<int> starts;
  if (n <= window) {
    starts.push_back(0);
  } else {
    for (int s = n - window; s > 0; s -= step) starts.push_back(s);
    starts.push_back(0);
  }

  for (int s : starts) {
    const int len = std::min(window, n - s);
    std::vector<Document> slice(work.begin() + s, work.begin() + s + len);
    std::vector<std::string> ranked = labeler.rank(query, slice);

    std::set<std::string> slice_ids;
    for (const auto& d : slice) slice_ids.insert(d.id);
    std::set<std::string> seen;
    for (const auto& id : ranked) {
      if (!slice_ids.count(id)) {
        throw LabelerContractError("sliding window labeler returned id outside window: " + id);
      }
      if (!seen.insert(id).second) {
        throw LabelerContractError("sliding window labeler returned duplicate id: " + id);
      }
    }

    std::map<std::string, Document> by_id;
    for (auto& d : slice) by_id.emplace(d.id, std::move(d));
    std::vector<Document> reordered;
    for (const auto& id : ranked) reordered.push_back(by_id.at(id));
    // window-excluded docs keep their prior relative order after the ranked ones
    for (int i = 0; i < len; ++i) {
      const std::string& id = work[static_cast<std::size_t>(s + i)].id;
      if (!seen.count(id)) reordered.push_back(by_id.at(id));
    }
    for (int i = 0; i < len; ++i) work[static_cast<std::size_t>(s + i)] = reordered[static_cast<std::size_t>(i)];
  }

  std::vector<std::string> out;
  out.reserve(work.size());
  for (const auto& d : work) out.push_back(d.id);
  return out;
}

DatasetBuildResult build_dataset(const Corpus& corpus, Labeler& labeler, std::uint64_t seed,
                                 const DatasetBuildOptions& options) {
  DatasetBuildResult result;
  for (const auto& set : corpus.sets) {
    const std::uint64_t qseed = derive_seed(seed, "query", set.query.id);
    RankingLabel label;
    label.query_id = set.query.id;
    label.query_text = set.query.text;
    label.seed = qseed;

    try {
      if (options.sliding_window) {
        label.ranked = sliding_window_label(set.query, set.documents, labeler);
        label.excluded.clear();
      } else {
        PreRankedSet pre = pre_rank(set, make_bm25_preranker(set));
        std::vector<std::string> output = labeler.rank(set.query, pre.pre);
        label_with_missing(pre, output, label.ranked, label.excluded);
      }
    } catch (const LabelerContractError& e) {
      result.skipped.push_back({set.query.id, e.what()});
      continue;
    }
    if (label.ranked.empty()) {
      result.skipped.push_back({set.query.id, "labeler produced an empty ranking"});
      continue;
    }

    label.negatives = sample_negatives(corpus, set.query.id, options.negatives, qseed);
    label.graded_scores =
        assign_graded_scores(label.ranked, label.excluded, label.negatives, qseed);

    auto add_doc = [&](const std::string& id, int binary) {
      label.binary_labels[id] = binary;
      const Document* doc = corpus.find_document(id);
      if (!doc) throw InputError("document vanished from corpus: " + id);
      label.reasoning[id] = options.reasoning(set.query, *doc, binary);
    };
    for (const auto& id : label.ranked) add_doc(id, 1);
    for (const auto& id : label.excluded) add_doc(id, 0);
    for (const auto& id : label.negatives) add_doc(id, 0);

    result.labels.push_back(std::move(label));
  }
  return result;
}

void save_dataset(const std::vector<RankingLabel>& labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open dataset file for writing: " + path.string());
  for (const auto& l : labels) {
    json line = {{"query_id", l.query_id}, {"query", l.query_text},
                 {"ranked", l.ranked},     {"excluded", l.excluded},
                 {"negatives", l.negatives}, {"graded", l.graded_scores},
                 {"binary", l.binary_labels}, {"reasoning", l.reasoning},
                 {"seed", l.seed}};
    out << line.dump() << "\n";
  }
}

std::vector<RankingLabel> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path.string());
  std::vector<RankingLabel> labels;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    RankingLabel l;
    l.query_id = j.at("query_id").get<std::string>();
    l.query_text = j.at("query").get<std::string>();
    l.ranked = j.at("ranked").get<std::vector<std::string>>();
    l.excluded = j.at("excluded").get<std::vector<std::string>>();
    l.negatives = j.at("negatives").get<std::vector<std::string>>();
    l.graded_scores = j.at("graded").get<std::map<std::string, double>>();
    l.binary_labels = j.at("binary").get<std::map<std::string, int>>();
    l.reasoning = j.at("reasoning").get<std::map<std::string, std::string>>();
    l.seed = j.at("seed").get<std::uint64_t>();
    labels.push_back(std::move(l));
  }
  return labels;
}

}  // namespace rankdistill
