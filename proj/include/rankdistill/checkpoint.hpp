#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "rankdistill/nn.hpp"
#include "rankdistill/text.hpp"

namespace rankdistill {

// Single-file model snapshot: a magic line, a JSON header (kind tag, model
// configuration, extra model settings, vocabulary, tensor manifest), then
// the tensors as raw little-endian 64-bit floats in manifest order.
// Round-trips are bit-exact.
struct CheckpointPayload {
  std::string kind;            // "rra_bert" | "rra_gpt"
  nlohmann::json config;       // ModelConfig fields plus model-specific settings
  Vocabulary vocab;
  ParamStore params;
};

void save_checkpoint(const CheckpointPayload& payload, const std::filesystem::path& path);

// Throws IoError with a byte offset on truncated or corrupt files.
CheckpointPayload load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace rankdistill
