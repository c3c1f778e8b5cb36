#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rankdistill/labelgen.hpp"
#include "rankdistill/metrics.hpp"
#include "rankdistill/rra_bert.hpp"
#include "rankdistill/rra_gpt.hpp"
#include "rankdistill/text.hpp"
#include "rankdistill/training.hpp"

namespace rankdistill {

// Untuned-encoder baseline: query and document pooled separately (mean over
// the final hidden states), ranked by cosine. Zero-norm vectors score 0.
std::vector<std::pair<std::string, double>> naive_cosine_rank(const Query& query,
                                                              const std::vector<Document>& docs,
                                                              const RraBert& encoder);

// Untuned-decoder baseline: p(relevant) - p(irrelevant) under a two-way
// softmax over the plain word tokens at the response position.
std::vector<std::pair<std::string, double>> vanilla_decoder_rank(const Query& query,
                                                                 const std::vector<Document>& docs,
                                                                 const RraGpt& decoder);

// Graded labels binned for nDCG: ranked top half 3, bottom half 2, excluded
// and sampled negatives 0.
Qrels qrels_from_labels(const std::vector<RankingLabel>& labels);

// --- ablation harness -------------------------------------------------------

struct BertVariant {
  std::string name;
  bool use_excluded = true;  // false reproduces training without the left-out documents
  bool train_tcl = true;
  bool infer_tcl = true;
};

struct GptVariant {
  std::string name;
  TaskFlags tasks;
  bool reasoning = true;
  RankingInput ranking_input = RankingInput::kResponse;
  bool use_ranking_layer = true;
};

std::vector<BertVariant> bert_table_variants();
std::vector<GptVariant> gpt_table_variants();

struct AblationRow {
  std::string variant;
  std::vector<double> per_seed;  // validation nDCG@5, best checkpoint
  double mean = 0;
  double stddev = 0;  // sample standard deviation, 0 for a single seed
  std::vector<long> steps_per_seed;
  double mean_steps = 0;  // steps_to_best; 0 for untrained baselines
};

struct AblationTable {
  std::string suite;  // "bert" | "gpt"
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
};

// Trains every variant on the same data and seeds. Baseline rows (bm25 and
// the untuned naive rankers) are evaluated on each seed's validation split
// without training. Any variant failure aborts with the variant named in
// the diagnostic.
AblationTable run_bert_ablation(const Corpus& corpus, const std::vector<RankingLabel>& labels,
                                const ModelConfig& model_config, const BertSettings& settings,
                                const TrainConfig& base_config,
                                const std::vector<BertVariant>& variants,
                                const std::vector<std::uint64_t>& seeds);
AblationTable run_gpt_ablation(const Corpus& corpus, const std::vector<RankingLabel>& labels,
                               const ModelConfig& model_config, const GptSettings& settings,
                               const TrainConfig& base_config,
                               const std::vector<GptVariant>& variants,
                               const std::vector<std::uint64_t>& seeds);

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);
void write_ablation_json(const AblationTable& table, const std::filesystem::path& path);

}  // namespace rankdistill
