#pragma once

#include "jacreg/dataset.hpp"
#include "jacreg/mlp.hpp"
#include "jacreg/objectives.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace jacreg {

struct TrainConfig {
  ObjectiveSpec objective;
  std::vector<std::size_t> hidden = {400};
  Activation hidden_activation = Activation::tanh;
  Activation output_activation = Activation::sigmoid;
  double learning_rate = 0.01;
  std::size_t batch_size = 20;
  std::size_t max_epochs = 100;
  /// Epochs without a strict validation improvement before stopping.
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  /// Record test error every epoch (skipped when the test split is empty).
  bool track_test_error = true;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown train;    // sample-weighted mean over the epoch's minibatches
  double valid_error = 0.0;
  std::optional<double> test_error;
};

struct TrainingTrace {
  std::vector<EpochRecord> epochs;
  /// Epoch whose parameters were returned; empty when no epoch ran.
  std::optional<std::size_t> best_epoch;
  double best_valid_error = 1.0;
  bool stopped_early = false;
  bool almost_everywhere_gradient = false;
  double wall_time_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpParams params;
  TrainingTrace trace;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch SGD with per-epoch shuffling and patience-based early stopping.
/// Streams derived from config.seed: 1 = initialization, 2 = shuffling,
/// 3 = noise. Returns the parameters of the best validation epoch (the
/// initialization when max_epochs == 0). Throws DivergenceError when an
/// epoch's training loss is not finite.
TrainResult train(const TrainConfig& config, const LabeledDataset& data,
                  const EpochCallback& on_epoch = {});

/// Network outputs for every row of `inputs` (n x m).
Matrix batch_outputs(const MlpParams& params, const Matrix& inputs);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Fraction of samples whose output argmax differs from the target argmax.
double classification_error(const MlpParams& params, const Split& split);

struct RobustnessPoint {
  double sigma = 0.0;
  double mean_error = 0.0;
  double stderr_error = 0.0;
};

/// Error on Gaussian-corrupted inputs for each sigma, in the given order.
/// Repeat r uses the same standard-normal draws for every sigma; sigma = 0
/// reproduces classification_error exactly without sampling.
std::vector<RobustnessPoint> robustness_curve(const MlpParams& params, const Split& split,
                                              const std::vector<double>& sigmas,
                                              std::size_t repeats, RngStream& rng);

struct LayerHistogram {
  std::size_t layer = 0;  // hidden layer index, 0-based
  double lo = -1.0;
  double hi = 1.0;
  std::vector<double> mass;  // normalized, sums to 1
};

/// Normalized histograms of hidden-unit activations over the split. Tanh
/// and identity layers use [-1, 1] (values outside are clamped into the end
/// bins); rectifier layers use [0, max activation].
std::vector<LayerHistogram> activation_histogram(const MlpParams& params, const Split& split,
                                                 std::size_t bins);

/// Mass of the bins lying entirely in |a| > saturation or |a| < linear.
double regime_mass(const LayerHistogram& hist, double saturation = 0.9, double linear = 0.1);

struct AblationConfig {
  TrainConfig base;
  VariantHyperparams hyper;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<Variant> variants = {Variant::mlp, Variant::l2, Variant::noise, Variant::jacobian,
                                   Variant::noise_jacobian};
  /// When non-empty, the penalty weight is chosen on validation error of the
  /// +Jacob variant with the first seed and reused everywhere.
  std::vector<double> lambda_grid;
  std::size_t workers = 1;
  bool keep_models = false;
};

struct AblationRun {
  Variant variant = Variant::mlp;
  std::uint64_t seed = 0;
  double valid_error = 0.0;
  double test_error = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::optional<MlpParams> model;
};

struct AblationResult {
  std::vector<AblationRun> runs;  // variant-major, seeds in config order
  double chosen_lambda = 0.0;
  std::vector<std::pair<double, double>> lambda_search;  // (lambda, valid error)

  double median_test_error(Variant v) const;
  const AblationRun& run(Variant v, std::uint64_t seed) const;
};

using RunCallback = std::function<void(const AblationRun&)>;

AblationResult ablation_grid(const LabeledDataset& data, const AblationConfig& config,
                             const RunCallback& on_run = {});

double median(std::vector<double> values);

}  // namespace jacreg
