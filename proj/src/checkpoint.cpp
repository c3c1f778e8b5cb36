#include "rankdistill/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "rankdistill/errors.hpp"

namespace rankdistill {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {
constexpr const char* kMagic = "RANKDISTILL-CKPT-1";
}

void save_checkpoint(const CheckpointPayload& payload, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());

  json tensors = json::array();
  for (std::size_t i = 0; i < payload.params.size(); ++i) {
    const Mat& m = payload.params.value(i);
    tensors.push_back({{"name", payload.params.name(i)},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"dtype", "f64"}});
  }
  json header = {{"kind", payload.kind},
                 {"config", payload.config},
                 {"vocab", payload.vocab.tokens()},
                 {"tensors", std::move(tensors)}};
  out << kMagic << "\n" << header.dump() << "\n";

  for (std::size_t i = 0; i < payload.params.size(); ++i) {
    const Mat& m = payload.params.value(i);
    // row-major stream so the layout is independent of Eigen's default
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double v = m(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
  if (!out) throw IoError("short write while saving checkpoint: " + path.string());
}

CheckpointPayload load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());

  std::string magic;
  if (!std::getline(in, magic)) throw IoError("empty checkpoint file: " + path.string(), 0);
  if (magic != kMagic) throw IoError("bad checkpoint magic in " + path.string(), 0);

  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw IoError("missing checkpoint header: " + path.string(), static_cast<long long>(magic.size() + 1));
  }
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what(),
                  static_cast<long long>(magic.size() + 1));
  }

  CheckpointPayload payload;
  payload.kind = header.at("kind").get<std::string>();
  payload.config = header.at("config");

  const auto tokens = header.at("vocab").get<std::vector<std::string>>();
  if (tokens.size() < static_cast<std::size_t>(Vocabulary::base_special_count())) {
    throw IoError("checkpoint vocabulary too small", static_cast<long long>(magic.size() + 1));
  }
  for (std::size_t i = static_cast<std::size_t>(Vocabulary::base_special_count());
       i < tokens.size(); ++i) {
    payload.vocab.add_token(tokens[i]);
  }
  for (int i = 0; i < Vocabulary::base_special_count(); ++i) {
    if (payload.vocab.token(i) != tokens[static_cast<std::size_t>(i)]) {
      throw IoError("checkpoint vocabulary special tokens out of order",
                    static_cast<long long>(magic.size() + 1));
    }
  }

  for (const auto& jt : header.at("tensors")) {
    const std::string name = jt.at("name").get<std::string>();
    const Eigen::Index rows = jt.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = jt.at("cols").get<Eigen::Index>();
    if (jt.at("dtype").get<std::string>() != "f64") {
      throw IoError("unsupported tensor dtype in checkpoint for " + name);
    }
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v;
        if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
          in.clear();
          throw IoError("truncated tensor data for " + name, static_cast<long long>(in.tellg()));
        }
        m(r, c) = v;
      }
    }
    payload.params.add(name, std::move(m));
  }
  return payload;
}

json model_config_to_json(const ModelConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size},   {"d_hidden", cfg.d_hidden},
          {"n_layers", cfg.n_layers},       {"n_heads", cfg.n_heads},
          {"max_seq_len", cfg.max_seq_len}, {"ffn_multiplier", cfg.ffn_multiplier}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_hidden = j.at("d_hidden").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.ffn_multiplier = j.at("ffn_multiplier").get<int>();
  cfg.validate();
  return cfg;
}

}  // namespace rankdistill
