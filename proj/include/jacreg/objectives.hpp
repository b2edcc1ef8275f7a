#pragma once

#include "jacreg/matrix.hpp"
#include "jacreg/mlp.hpp"
#include "jacreg/rng.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace jacreg {

struct JacobianPenalty {
  double lambda = 0.0;
  /// When set, the penalty is evaluated at x + N(0, sigma^2 I) instead of x.
  std::optional<double> noise_sigma;
};

/// Training objective: MSE on (optionally corrupted) inputs, plus optional
/// weight decay on all weight matrices and an optional Jacobian penalty.
struct ObjectiveSpec {
  double weight_decay = 0.0;
  std::optional<double> input_noise;
  std::optional<JacobianPenalty> jacobian;

  /// Throws ParameterError on negative or non-finite coefficients.
  void validate() const;

  double penalty_lambda() const { return jacobian ? jacobian->lambda : 0.0; }
  bool has_penalty() const { return penalty_lambda() > 0.0; }

  static ObjectiveSpec clean() { return {}; }
  static ObjectiveSpec with_weight_decay(double lambda_wd);
  static ObjectiveSpec with_input_noise(double sigma);
  static ObjectiveSpec with_jacobian(double lambda, std::optional<double> penalty_sigma = {});
};

/// The five ablation rows.
enum class Variant { mlp, l2, noise, jacobian, noise_jacobian };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct VariantHyperparams {
  double weight_decay = 1e-4;
  double input_noise = 0.1;
  double jacobian_lambda = 0.01;
  double penalty_noise = 0.1;
};

/// MLP: clean. +L2: weight decay. +Noise: input noise. +Jacob: penalty at
/// clean x. +N+J: input noise and penalty at an independently corrupted x.
ObjectiveSpec objective_for(Variant v, const VariantHyperparams& hp);

struct LossBreakdown {
  double mse = 0.0;               // batch mean of ||F(x~) - y||^2
  double weight_decay = 0.0;      // sum_k ||W_k||_F^2, biases excluded
  double jacobian_penalty = 0.0;  // batch mean of ||J_F(x~)||_F^2
  double total = 0.0;             // mse + lambda_wd * weight_decay + lambda * jacobian_penalty
};

struct Batch {
  Matrix inputs;   // n x d
  Matrix targets;  // n x m
};

/// ||F(x) - y||^2 for one sample.
double mse_loss(const MlpParams& params, const Vector& x, const Vector& y);

/// x + eps with eps ~ N(0, sigma^2 I), fresh draw per call.
Vector corrupt_input(const Vector& x, double sigma, RngStream& rng);

/// Inputs actually seen by the two loss terms for one call.
struct CorruptedBatch {
  Matrix mse_inputs;
  Matrix penalty_inputs;  // empty when the penalty reads mse_inputs
};

/// Draws the noise for one objective call. Per example, in order: the input
/// noise vector (if input_noise is set), then the penalty noise vector (if the
/// penalty is active and has a noise sigma).
CorruptedBatch draw_corruption(const ObjectiveSpec& spec, const Batch& batch, RngStream& rng);

struct GradientResult {
  LossBreakdown loss;
  ParamGradient gradient;
  /// Set when the penalty gradient relies on rectifier derivatives that only
  /// exist almost everywhere.
  bool almost_everywhere = false;
};

/// Objective on an already corrupted batch (no randomness).
LossBreakdown objective_value_on(const ObjectiveSpec& spec, const MlpParams& params,
                                 const Batch& batch, const CorruptedBatch& corrupted);
GradientResult objective_gradient_on(const ObjectiveSpec& spec, const MlpParams& params,
                                     const Batch& batch, const CorruptedBatch& corrupted);

/// Draws noise from `rng` and evaluates. Value and gradient calls that start
/// from copies of the same stream see identical noise.
LossBreakdown objective_value(const ObjectiveSpec& spec, const MlpParams& params,
                              const Batch& batch, RngStream& rng);
GradientResult objective_gradient(const ObjectiveSpec& spec, const MlpParams& params,
                                  const Batch& batch, RngStream& rng);

}  // namespace jacreg
