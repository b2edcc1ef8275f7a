#pragma once

#include "jacreg/mlp.hpp"

#include <json.hpp>

#include <filesystem>

namespace jacreg {

/// Checkpoint document:
///   {"format": "jacreg-mlp", "version": 1, "input_dim": d, "output_dim": m,
///    "layers": [{"activation": "tanh", "rows": r, "cols": c,
///                "weights": [row-major...], "bias": [...]}, ...]}
/// Doubles are written in shortest round-trip form, so a reload is bit-exact.
nlohmann::json checkpoint_to_json(const MlpParams& params);
MlpParams checkpoint_from_json(const nlohmann::json& doc);

/// Writes the checkpoint with an optional "meta" block.
void save_checkpoint(const MlpParams& params, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
MlpParams load_checkpoint(const std::filesystem::path& path);

}  // namespace jacreg
