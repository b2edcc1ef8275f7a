#include "jacreg/config.hpp"

#include "jacreg/checkpoint.hpp"
#include "jacreg/error.hpp"

#include <cmath>
#include <cstdlib>

namespace jacreg {

using nlohmann::json;

ConfigReader::ConfigReader(const json& doc, std::string where) : doc_(doc), where_(std::move(where)) {
  if (!doc_.is_object()) throw ConfigError((where_.empty() ? "config" : where_) + ": expected an object");
}

std::string ConfigReader::path(const std::string& key) const {
  return where_.empty() ? key : where_ + "." + key;
}

bool ConfigReader::has(const std::string& key) const { return doc_.contains(key); }

const json& ConfigReader::at(const std::string& key) {
  seen_.insert(key);
  auto it = doc_.find(key);
  if (it == doc_.end()) throw ConfigError(path(key) + ": required key missing");
  return *it;
}

ConfigReader ConfigReader::object(const std::string& key) { return ConfigReader(at(key), path(key)); }

namespace {

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(where + ": must be finite");
  return d;
}

std::uint64_t as_integer(const json& v, const std::string& where) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(where + ": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

const json& as_array(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  return v;
}

}  // namespace

double ConfigReader::number(const std::string& key) { return as_number(at(key), path(key)); }

double ConfigReader::number(const std::string& key, double fallback) {
  return has(key) ? number(key) : (seen_.insert(key), fallback);
}

std::optional<double> ConfigReader::optional_number(const std::string& key) {
  seen_.insert(key);
  if (!has(key) || doc_.at(key).is_null()) return std::nullopt;
  return number(key);
}

std::uint64_t ConfigReader::integer(const std::string& key) { return as_integer(at(key), path(key)); }

std::uint64_t ConfigReader::integer(const std::string& key, std::uint64_t fallback) {
  return has(key) ? integer(key) : (seen_.insert(key), fallback);
}

bool ConfigReader::boolean(const std::string& key, bool fallback) {
  seen_.insert(key);
  if (!has(key)) return fallback;
  const json& v = doc_.at(key);
  if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
  return v.get<bool>();
}

std::string ConfigReader::text(const std::string& key) {
  const json& v = at(key);
  if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
  return v.get<std::string>();
}

std::string ConfigReader::text(const std::string& key, const std::string& fallback) {
  return has(key) ? text(key) : (seen_.insert(key), fallback);
}

std::vector<double> ConfigReader::numbers(const std::string& key) {
  const json& arr = as_array(at(key), path(key));
  std::vector<double> out;
  for (std::size_t i = 0; i < arr.size(); ++i)
    out.push_back(as_number(arr[i], path(key) + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<double> ConfigReader::numbers(const std::string& key, const std::vector<double>& fallback) {
  return has(key) ? numbers(key) : (seen_.insert(key), fallback);
}

std::vector<std::uint64_t> ConfigReader::integers(const std::string& key,
                                                  const std::vector<std::uint64_t>& fallback) {
  if (!has(key)) {
    seen_.insert(key);
    return fallback;
  }
  const json& arr = as_array(at(key), path(key));
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < arr.size(); ++i)
    out.push_back(as_integer(arr[i], path(key) + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<std::string> ConfigReader::texts(const std::string& key,
                                             const std::vector<std::string>& fallback) {
  if (!has(key)) {
    seen_.insert(key);
    return fallback;
  }
  const json& arr = as_array(at(key), path(key));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_string()) throw ConfigError(path(key) + "[" + std::to_string(i) + "]: expected a string");
    out.push_back(arr[i].get<std::string>());
  }
  return out;
}

void ConfigReader::finish() const {
  for (const auto& [key, value] : doc_.items()) {
    if (!seen_.count(key)) throw ConfigError(path(key) + ": unknown key");
  }
}

namespace {

std::filesystem::path data_root(ConfigReader& cfg) {
  if (cfg.has("root")) return cfg.text("root");
  cfg.text("root", "");
  const char* env = std::getenv(kDataRootEnv);
  if (env == nullptr || *env == '\0') {
    throw ConfigError(cfg.where() + ".root: not given and " + std::string(kDataRootEnv) + " is not set");
  }
  return env;
}

LabeledDataset finish_dataset(ConfigReader& cfg, LabeledDataset data) {
  const bool binary = cfg.boolean("binarize", false);
  const std::uint64_t subset = cfg.integer("train_subset", 0);
  cfg.finish();
  if (subset > 0) data = subset_train(data, subset);
  if (binary) data = binarize(data);
  validate_dataset(data);
  return data;
}

Activation activation_key(ConfigReader& cfg, const std::string& key, Activation fallback) {
  const std::string name = cfg.text(key, std::string(to_string(fallback)));
  try {
    return parse_activation(name);
  } catch (const Error&) {
    throw ConfigError(cfg.where() + "." + key + ": unknown activation '" + name + "'");
  }
}

std::vector<std::size_t> sizes(const std::vector<std::uint64_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

LabeledDataset load_dataset(ConfigReader cfg) {
  const std::string kind = cfg.text("kind");
  if (kind == "two-moons") {
    const auto n = cfg.integer("n", 300);
    const double noise = cfg.number("noise", 0.1);
    const auto seed = cfg.integer("seed", 0);
    cfg.finish();
    return synthetic_two_moons(n, noise, seed);
  }
  if (kind == "mnist") {
    const auto root = data_root(cfg);
    return finish_dataset(cfg, load_mnist(root));
  }
  if (kind == "idx") {
    const auto root = data_root(cfg);
    const RawDataset train = load_idx(root / cfg.text("train_images"), root / cfg.text("train_labels"));
    const RawDataset test = load_idx(root / cfg.text("test_images"), root / cfg.text("test_labels"));
    const auto n_valid = cfg.integer("valid_count");
    return finish_dataset(cfg, holdout_split(train, test, n_valid));
  }
  if (kind == "cache") {
    const std::string p = cfg.text("path");
    cfg.finish();
    LabeledDataset data = load_cache(p);
    validate_dataset(data);
    return data;
  }
  throw ConfigError(cfg.where() + ".kind: unknown dataset kind '" + kind + "'");
}

ModelShape read_model_shape(ConfigReader cfg) {
  ModelShape s;
  s.hidden = sizes(cfg.integers("hidden", {400}));
  s.hidden_activation = activation_key(cfg, "hidden_activation", Activation::tanh);
  s.output_activation = activation_key(cfg, "output_activation", Activation::sigmoid);
  cfg.finish();
  return s;
}

VariantHyperparams read_hyperparams(ConfigReader cfg) {
  VariantHyperparams hp;
  hp.weight_decay = cfg.number("weight_decay", hp.weight_decay);
  hp.input_noise = cfg.number("input_noise", hp.input_noise);
  hp.jacobian_lambda = cfg.number("jacobian_lambda", hp.jacobian_lambda);
  hp.penalty_noise = cfg.number("penalty_noise", hp.penalty_noise);
  cfg.finish();
  return hp;
}

ObjectiveSpec read_objective(ConfigReader cfg) {
  ObjectiveSpec spec;
  if (cfg.has("variant")) {
    const std::string label = cfg.text("variant");
    Variant v;
    try {
      v = parse_variant(label);
    } catch (const Error&) {
      throw ConfigError(cfg.where() + ".variant: unknown variant '" + label + "'");
    }
    spec = objective_for(v, read_hyperparams(cfg));
  } else {
    spec.weight_decay = cfg.number("weight_decay", 0.0);
    spec.input_noise = cfg.optional_number("input_noise");
    const auto lambda = cfg.optional_number("jacobian_lambda");
    const auto pen_sigma = cfg.optional_number("penalty_noise");
    if (lambda) spec.jacobian = JacobianPenalty{*lambda, pen_sigma};
    else if (pen_sigma) throw ConfigError(cfg.where() + ".penalty_noise: requires jacobian_lambda");
    cfg.finish();
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw ConfigError(cfg.where() + ": " + e.what());
  }
  return spec;
}

void read_training(ConfigReader cfg, TrainConfig& out) {
  out.learning_rate = cfg.number("learning_rate", out.learning_rate);
  out.batch_size = cfg.integer("batch_size", out.batch_size);
  out.max_epochs = cfg.integer("max_epochs", out.max_epochs);
  out.patience = cfg.integer("patience", out.patience);
  out.track_test_error = cfg.boolean("track_test_error", out.track_test_error);
  cfg.finish();
}

MlpParams read_verification_model(ConfigReader cfg) {
  const std::string kind = cfg.text("kind");
  if (kind == "random") {
    const auto d = cfg.integer("input_dim", 3);
    const auto hidden = sizes(cfg.integers("hidden", {5}));
    const auto m = cfg.integer("output_dim", 1);
    const Activation ha = activation_key(cfg, "hidden_activation", Activation::tanh);
    const Activation oa = activation_key(cfg, "output_activation", Activation::identity);
    const double ws = cfg.number("weight_scale", 0.8);
    const double bs = cfg.number("bias_scale", 0.5);
    RngStream rng(cfg.integer("seed", 1), 0);
    cfg.finish();
    return MlpParams::gaussian(d, hidden, m, ha, oa, ws, bs, rng);
  }
  if (kind == "linear") {
    const auto w = cfg.numbers("weights");
    cfg.finish();
    if (w.empty()) throw ConfigError(cfg.where() + ".weights: must not be empty");
    Layer first{Matrix(1, w.size(), w), Vector(1), Activation::identity};
    Layer out{Matrix{{1.0}}, Vector(1), Activation::identity};
    return MlpParams({first, out});
  }
  if (kind == "checkpoint") {
    const std::string p = cfg.text("path");
    cfg.finish();
    return load_checkpoint(p);
  }
  throw ConfigError(cfg.where() + ".kind: unknown model kind '" + kind + "'");
}

std::uint64_t config_hash(const nlohmann::json& doc) {
  const std::string s = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace jacreg
