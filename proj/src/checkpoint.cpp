#include "jacreg/checkpoint.hpp"

#include "jacreg/error.hpp"

#include <fstream>

namespace jacreg {

namespace {
constexpr const char* kFormat = "jacreg-mlp";
constexpr int kVersion = 1;
}  // namespace

nlohmann::json checkpoint_to_json(const MlpParams& params) {
  nlohmann::json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["input_dim"] = params.input_dim();
  doc["output_dim"] = params.output_dim();
  doc["layers"] = nlohmann::json::array();
  for (const auto& l : params.layers()) {
    doc["layers"].push_back({{"activation", std::string(to_string(l.activation))},
                             {"rows", l.weights.rows()},
                             {"cols", l.weights.cols()},
                             {"weights", l.weights.values()},
                             {"bias", l.bias.values()}});
  }
  return doc;
}

MlpParams checkpoint_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kFormat) {
      throw ConfigError("checkpoint: unexpected format tag");
    }
    if (doc.at("version").get<int>() != kVersion) {
      throw ConfigError("checkpoint: unsupported version " + doc.at("version").dump());
    }
    std::vector<Layer> layers;
    for (const auto& jl : doc.at("layers")) {
      const auto rows = jl.at("rows").get<std::size_t>();
      const auto cols = jl.at("cols").get<std::size_t>();
      layers.push_back(Layer{Matrix(rows, cols, jl.at("weights").get<std::vector<double>>()),
                             Vector(jl.at("bias").get<std::vector<double>>()),
                             parse_activation(jl.at("activation").get<std::string>())});
    }
    MlpParams params(std::move(layers));
    if (params.input_dim() != doc.at("input_dim").get<std::size_t>() ||
        params.output_dim() != doc.at("output_dim").get<std::size_t>()) {
      throw DimensionError("checkpoint: declared dims disagree with layer shapes");
    }
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed document: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("checkpoint: inconsistent document: ") + e.what());
  }
}

void save_checkpoint(const MlpParams& params, const std::filesystem::path& path,
                     const nlohmann::json& meta) {
  nlohmann::json doc = checkpoint_to_json(params);
  if (!meta.empty()) doc["meta"] = meta;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string(), path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw IoError("failed writing checkpoint: " + path.string(), path.string());
}

MlpParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path.string(), path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace jacreg
