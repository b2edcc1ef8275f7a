#pragma once

#include "jacreg/matrix.hpp"
#include "jacreg/rng.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace jacreg {

enum class Activation { tanh, rectifier, sigmoid, identity };

std::string_view to_string(Activation a);
/// Parses "tanh", "rectifier" (alias "relu"), "sigmoid", "identity".
Activation parse_activation(std::string_view name);

double activate(Activation a, double z);
/// First derivative with respect to the pre-activation. Rectifier uses 0 at z = 0.
double activation_d1(Activation a, double z);
double activation_d2(Activation a, double z);

/// True when the activation is C-infinity, so input Hessians exist everywhere.
bool is_smooth(Activation a);

struct Layer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::tanh;

  bool operator==(const Layer&) const = default;
};

/// Multilayer perceptron with one or two hidden layers.
///
/// Hidden layers use tanh or rectifier; identity is also accepted so that
/// linear reference models share the same code path. The output layer uses
/// sigmoid or identity.
class MlpParams {
 public:
  /// Validates dimension chaining, the 1-2 hidden layer rule and the
  /// activation placement. Throws DimensionError / ParameterError.
  explicit MlpParams(std::vector<Layer> layers);

  /// Uniform init in [-r, r], r = sqrt(6 / (fan_in + fan_out)); zero biases.
  static MlpParams initialize(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                              std::size_t output_dim, Activation hidden_activation,
                              Activation output_activation, RngStream& rng);

  /// Weights N(0, weight_scale^2), biases N(0, bias_scale^2). Used for
  /// verification and test models rather than training.
  static MlpParams gaussian(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                            std::size_t output_dim, Activation hidden_activation,
                            Activation output_activation, double weight_scale, double bias_scale,
                            RngStream& rng);

  std::size_t input_dim() const { return layers_.front().weights.cols(); }
  std::size_t output_dim() const { return layers_.back().weights.rows(); }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t hidden_count() const { return layers_.size() - 1; }
  std::vector<std::size_t> hidden_sizes() const;

  const Layer& layer(std::size_t k) const { return layers_[k]; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// Number of scalar parameters; flat order is layer by layer, weights
  /// row-major then bias.
  std::size_t parameter_count() const;
  double parameter(std::size_t index) const;
  void set_parameter(std::size_t index, double value);

  /// Mutable access to weights and biases. Shapes must not change.
  Matrix& weights(std::size_t k) { return layers_[k].weights; }
  Vector& bias(std::size_t k) { return layers_[k].bias; }

  /// True when every hidden layer is smooth (tanh or identity).
  bool is_smooth() const;

  bool operator==(const MlpParams&) const = default;

 private:
  std::vector<Layer> layers_;
};

/// Gradient with the same shapes as the parameters it refers to.
struct ParamGradient {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static ParamGradient zeros_like(const MlpParams& params);
  std::size_t parameter_count() const;
  double parameter(std::size_t index) const;
  double norm() const;
};

/// params <- params - learning_rate * grad
void apply_sgd_step(MlpParams& params, const ParamGradient& grad, double learning_rate);

/// Per-layer pre-activations and activations for one input.
struct ForwardTrace {
  std::vector<Vector> pre_activations;
  std::vector<Vector> activations;

  bool operator==(const ForwardTrace&) const = default;
};

struct ForwardResult {
  Vector output;
  ForwardTrace trace;
};

ForwardResult forward(const MlpParams& params, const Vector& x);

/// Output only; same arithmetic as forward().
Vector predict(const MlpParams& params, const Vector& x);

/// Input Jacobian dF_i/dx_j (m x d), accumulated from the output side:
/// J = D_L W_L D_{L-1} ... D_1 W_1 with D_k = diag(phi_k'(z_k)).
Matrix analytic_jacobian(const MlpParams& params, const Vector& x);

/// Squared Frobenius norm of analytic_jacobian.
double jacobian_frobenius_sq(const MlpParams& params, const Vector& x);

constexpr double kHessianStep = 1e-4;

/// Input Hessian of output `out_index`: central differences of the analytic
/// Jacobian row, then symmetrized. Throws UnsupportedActivation for
/// rectifier nets.
Matrix hessian_of_output(const MlpParams& params, const Vector& x, std::size_t out_index,
                         double step = kHessianStep);

/// All m output Hessians from one set of 2d Jacobian evaluations.
std::vector<Matrix> output_hessians(const MlpParams& params, const Vector& x,
                                    double step = kHessianStep);

/// Sum over outputs of ||H_i||_F^2.
double hessian_frobenius_sq_F(const MlpParams& params, const Vector& x,
                              double step = kHessianStep);

/// Stable 64-bit fingerprint of shapes, activations and parameter bits.
std::uint64_t fingerprint(const MlpParams& params);

}  // namespace jacreg
