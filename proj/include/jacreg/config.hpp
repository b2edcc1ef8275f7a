#pragma once

#include "jacreg/dataset.hpp"
#include "jacreg/mlp.hpp"
#include "jacreg/objectives.hpp"
#include "jacreg/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace jacreg {

/// Typed, strict view of one JSON object. Every accessor records the key;
/// finish() rejects keys that were never asked for. Errors are ConfigError
/// messages naming the dotted key path.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& doc, std::string where);

  bool has(const std::string& key) const;
  ConfigReader object(const std::string& key);

  double number(const std::string& key);
  double number(const std::string& key, double fallback);
  std::optional<double> optional_number(const std::string& key);
  std::uint64_t integer(const std::string& key);
  std::uint64_t integer(const std::string& key, std::uint64_t fallback);
  bool boolean(const std::string& key, bool fallback);
  std::string text(const std::string& key);
  std::string text(const std::string& key, const std::string& fallback);
  std::vector<double> numbers(const std::string& key);
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback);
  std::vector<std::uint64_t> integers(const std::string& key,
                                      const std::vector<std::uint64_t>& fallback);
  std::vector<std::string> texts(const std::string& key, const std::vector<std::string>& fallback);

  void finish() const;
  const std::string& where() const { return where_; }

 private:
  const nlohmann::json& at(const std::string& key);
  std::string path(const std::string& key) const;

  const nlohmann::json& doc_;
  std::string where_;
  std::set<std::string> seen_;
};

/// Name of the environment variable holding the default dataset root.
inline constexpr const char* kDataRootEnv = "JACREG_DATA_ROOT";

/// kind: "two-moons" {n, noise, seed}
///       "mnist"     {root?, binarize?, train_subset?}
///       "idx"       {root?, train_images, train_labels, test_images,
///                    test_labels, valid_count, binarize?, train_subset?}
///       "cache"     {path}
/// Relative IDX names resolve against root; root falls back to the
/// JACREG_DATA_ROOT environment variable.
LabeledDataset load_dataset(ConfigReader cfg);

struct ModelShape {
  std::vector<std::size_t> hidden = {400};
  Activation hidden_activation = Activation::tanh;
  Activation output_activation = Activation::sigmoid;
};

/// {hidden, hidden_activation, output_activation}
ModelShape read_model_shape(ConfigReader cfg);

/// Either {"variant": label, weight_decay?, input_noise?, jacobian_lambda?,
/// penalty_noise?} with the numbers overriding the variant defaults, or the
/// explicit form {weight_decay?, input_noise?, jacobian_lambda?, penalty_noise?}.
ObjectiveSpec read_objective(ConfigReader cfg);

VariantHyperparams read_hyperparams(ConfigReader cfg);

/// {learning_rate, batch_size, max_epochs, patience, track_test_error}
void read_training(ConfigReader cfg, TrainConfig& out);

/// kind: "random" {input_dim, hidden, output_dim, hidden_activation,
///                 output_activation, weight_scale, bias_scale, seed}
///       "linear" {weights}: F(x) = w.x through identity layers
///       "checkpoint" {path}
MlpParams read_verification_model(ConfigReader cfg);

/// FNV-1a over the compact dump of `doc` (object keys are sorted).
std::uint64_t config_hash(const nlohmann::json& doc);

}  // namespace jacreg
