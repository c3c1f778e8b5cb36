#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rankdistill/labelgen.hpp"
#include "rankdistill/rra_bert.hpp"
#include "rankdistill/rra_gpt.hpp"
#include "rankdistill/text.hpp"

namespace rankdistill {

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  int validate_every = 300;  // decoder runs usually want 1000
  int patience = 5;          // non-improving validations before stopping
  double split_ratio = 0.9;
  long max_steps = 20000;
  std::uint64_t seed = 1;
  bool use_excluded = true;    // left-out documents join training as near-zero targets
  bool bert_train_tcl = true;  // encoder trains with the term-control branch
  std::filesystem::path out_dir;  // when set, writes model.ckpt and metrics.jsonl

  void validate() const;  // positive rates and steps, patience >= 1, ratio in (0,1)
};

struct TrainReport {
  long steps_to_best = 0;
  std::vector<std::pair<long, double>> curve;  // (step, validation nDCG@5)
  double best_metric = 0;
  bool stopped_early = false;
  std::filesystem::path checkpoint;  // empty when out_dir unset
};

// Query-level 90/10 split: floor(ratio * n) queries train, the rest validate,
// no query straddles the two. Fewer than 10 queries is an input error.
std::pair<std::vector<RankingLabel>, std::vector<RankingLabel>> split_dataset(
    const std::vector<RankingLabel>& labels, double ratio, std::uint64_t seed);

// One query's labeled documents resolved against the corpus. Document order
// is ranked, then excluded (when kept), then negatives.
struct QueryTrainItem {
  Query query;
  std::vector<Document> docs;
  std::vector<double> graded;
  std::vector<int> binary;
  std::vector<int> gain;  // nDCG grade: ranked top half 3, bottom half 2, rest 0
  std::vector<std::string> reasoning;
};

std::vector<QueryTrainItem> resolve_items(const std::vector<RankingLabel>& labels,
                                          const Corpus& corpus, bool use_excluded);

// Mean nDCG@5 over the items' document pools, ranked by the model's deployed
// inference path (encoder honors use_tcl_at_inference; decoder never
// generates).
double validation_ndcg(const RraBert& model, const std::vector<QueryTrainItem>& items);
double validation_ndcg(const RraBert& model, const std::vector<QueryTrainItem>& items,
                       bool use_tcl);
double validation_ndcg(const RraGpt& model, const std::vector<QueryTrainItem>& items);

// One query per optimizer step, per-epoch reshuffles, periodic validation,
// early stopping on stale validations, best-parameters restore at the end.
// Non-finite loss aborts with TrainingDiverged. Validation pools always keep
// the excluded documents even when training drops them.
TrainReport train_bert(RraBert& model, const std::vector<RankingLabel>& labels,
                       const Corpus& corpus, const TrainConfig& config);
TrainReport train_gpt(RraGpt& model, const std::vector<RankingLabel>& labels,
                      const Corpus& corpus, const TrainConfig& config);

}  // namespace rankdistill
