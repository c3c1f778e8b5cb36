#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rankdistill/nn.hpp"
#include "rankdistill/text.hpp"

namespace rankdistill {

// Decoder control tokens, in registration order.
struct SpecialTokens {
  int relevant = -1;
  int irrelevant = -1;
  int response = -1;
  int reason = -1;

  static constexpr const char* kRelevant = "<|Relevant|>";
  static constexpr const char* kIrrelevant = "<|Irrelevant|>";
  static constexpr const char* kResponse = "<|Response|>";
  static constexpr const char* kReason = "<|Reason|>";
};

struct TaskFlags {
  bool gen = true;
  bool clf = true;
  bool rank = true;
};

enum class RankingInput { kResponse, kReason };

struct GptSettings {
  TaskFlags tasks;
  bool reasoning = true;          // append <|Reason|> + explanation in training prompts
  bool use_ranking_layer = true;  // otherwise score falls back to p_rel - p_irrel
  RankingInput ranking_input = RankingInput::kResponse;
  bool mask_prompt = false;       // limit generation loss to post-response tokens
};

// One tokenized prompt. Inference form ends at <|Response|>; training form
// continues with the label token and, when reasoning is on, <|Reason|> and
// the explanation. Over-length prompts lose document tokens first, then
// reasoning tokens, never query tokens.
struct PromptedExample {
  std::vector<int> ids;
  int response_index = -1;  // position of <|Response|>
  int reason_index = -1;    // position of <|Reason|>, -1 when absent
  int label = -1;           // 1 relevant / 0 irrelevant, -1 for inference form
  bool truncated = false;
};

// Per-example loss breakdown plus the differentiable ranking score.
struct GptDocForward {
  ad::Var score;       // ranking-layer output (or p_rel - p_irrel fallback)
  ad::Var gen_loss;    // invalid unless the gen task is on and the prompt is labeled
  ad::Var clf_loss;    // invalid unless the clf task is on and the prompt is labeled
  int predicted_label = 0;  // 1 when z_relevant > z_irrelevant at the response position
};

struct GptJointLoss {
  ad::Var total;
  ad::Var gen;   // means over the query's documents; invalid when the task is off
  ad::Var clf;
  ad::Var rank;
  int rank_pairs = 0;
  bool rank_degenerate = false;
};

// Plain min-max scaling to [0, 1]; a constant list maps to all 0.5.
std::vector<double> min_max_scale(std::span<const double> values);

// Decoder ranker. Trains with a joint objective (full-sequence generation
// loss, two-way label classification at the response position, RankNet over
// min-max-scaled ranking-layer scores); ranks with a single forward pass
// per document and no autoregressive generation.
class RraGpt {
 public:
  RraGpt(ModelConfig config, GptSettings settings, Vocabulary vocab, std::uint64_t seed);

  // Appends the four control tokens to the vocabulary, growing the word
  // embedding and LM head. Each new embedding row starts as an exact copy
  // of its source word's row (mean of rows for multi-token sources, <unk>
  // with a warning for out-of-vocabulary sources). Idempotent.
  void register_special_tokens();
  bool specials_registered() const { return specials_.response >= 0; }
  const SpecialTokens& specials() const { return specials_; }
  bool special_init_warning() const { return special_init_warning_; }

  PromptedExample build_prompt(const Query& query, const Document& doc,
                               std::optional<int> label = std::nullopt,
                               const std::string& reasoning = {}) const;

  GptDocForward forward_example(ModelTape& mt, const PromptedExample& ex) const;

  double score(const Query& query, const Document& doc) const;
  std::vector<std::pair<std::string, double>> rank(const Query& query,
                                                   const std::vector<Document>& docs) const;

  // 1 when p(relevant) > p(irrelevant) at the response position.
  int classify(const Query& query, const Document& doc) const;

  struct DocTarget {
    const Document* doc;
    double graded = 0;
    int binary = 0;
    std::string reasoning;
  };
  GptJointLoss joint_loss(ModelTape& mt, const Query& query,
                          std::span<const DocTarget> docs) const;

  // Greedy autoregressive continuation; only this method advances the
  // generation-step counter. Ranking never calls it.
  std::vector<int> generate_greedy(const std::vector<int>& prompt, int max_new_tokens) const;
  long generation_steps() const { return generation_steps_; }
  void reset_counters() const { generation_steps_ = 0; }

  const ModelConfig& config() const { return config_; }
  const GptSettings& settings() const { return settings_; }
  GptSettings& settings() { return settings_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  void save(const std::filesystem::path& path) const;
  static RraGpt load(const std::filesystem::path& path);
  static RraGpt load(const std::filesystem::path& path, const ModelConfig& expected);

 private:
  RraGpt() = default;

  ModelConfig config_;
  GptSettings settings_;
  Vocabulary vocab_;
  ParamStore params_;
  SpecialTokens specials_;
  bool special_init_warning_ = false;
  mutable long generation_steps_ = 0;
};

}  // namespace rankdistill
