#pragma once

#include "jacreg/matrix.hpp"
#include "jacreg/mlp.hpp"
#include "jacreg/rng.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jacreg {

/// A model F: R^d -> R^m with value, input Jacobian and per-output input
/// Hessians. The verification harness only talks to models through this
/// interface, so synthetic test models plug into the same code paths.
class DifferentiableMap {
 public:
  virtual ~DifferentiableMap() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual Vector value(const Vector& x) const = 0;
  virtual Matrix jacobian(const Vector& x) const = 0;
  /// Default: central differences of jacobian() with `kHessianStep`, symmetrized.
  virtual std::vector<Matrix> output_hessians(const Vector& x) const;
};

class MlpMap final : public DifferentiableMap {
 public:
  explicit MlpMap(const MlpParams& params) : params_(params) {}
  std::size_t input_dim() const override { return params_.input_dim(); }
  std::size_t output_dim() const override { return params_.output_dim(); }
  Vector value(const Vector& x) const override { return predict(params_, x); }
  Matrix jacobian(const Vector& x) const override { return analytic_jacobian(params_, x); }
  /// Throws UnsupportedActivation for rectifier nets.
  std::vector<Matrix> output_hessians(const Vector& x) const override;
  const MlpParams& params() const { return params_; }

 private:
  const MlpParams& params_;
};

/// Scalar quadratic F(x) = c + g.x + x'Ax/2 with A symmetric; its third and
/// higher input derivatives vanish.
class QuadraticMap final : public DifferentiableMap {
 public:
  QuadraticMap(double offset, Vector gradient, Matrix hessian);
  std::size_t input_dim() const override { return gradient_.size(); }
  std::size_t output_dim() const override { return 1; }
  Vector value(const Vector& x) const override;
  Matrix jacobian(const Vector& x) const override;
  std::vector<Matrix> output_hessians(const Vector& x) const override;

 private:
  double offset_;
  Vector gradient_;
  Matrix hessian_;
};

using ScalarField = std::function<double(std::span<const double>)>;

enum class LossKind { squared_error, jacobian_penalty };

/// x -> ||F(x) - y||^2
ScalarField squared_error_field(const DifferentiableMap& map, Vector target);
/// x -> ||J_F(x)||_F^2
ScalarField jacobian_penalty_field(const DifferentiableMap& map);
ScalarField loss_field(LossKind kind, const DifferentiableMap& map, const Vector& target);

enum class NoiseKind { gaussian, uniform };

/// plain: mean of f(x + eps).
/// antithetic: mean of (f(x + eps) + f(x - eps)) / 2, one sample per draw.
/// control_variate: antithetic minus (sigma^2/2)(u'Au - tr A) with u = eps/sigma
///   and A a fixed symmetric matrix (by default the finite-difference Hessian
///   of f at x). The subtracted term has zero mean for any A, so the
///   estimator stays unbiased; it removes the quadratic part of the variance.
enum class Estimator { plain, antithetic, control_variate };

struct McOptions {
  NoiseKind noise = NoiseKind::gaussian;
  Estimator estimator = Estimator::plain;
  std::size_t workers = 1;
  /// Matrix used by the control variate; computed by fd_hessian when empty.
  std::optional<Matrix> control_hessian;
};

struct Estimate {
  double mean = 0.0;
  double stderr_mean = 0.0;
  std::size_t samples = 0;
};

/// Monte-Carlo estimate of E[f(x + eps)], eps with zero mean and covariance
/// sigma^2 I. Draws are taken in fixed chunks, each chunk from its own
/// substream, and merged in chunk order: the result depends on (rng, n) only,
/// not on the worker count.
Estimate mc_expectation(const ScalarField& f, const Vector& x, double sigma, std::size_t n_samples,
                        RngStream& rng, const McOptions& options = {});

/// E[L(x + eps, y)]; noise touches the input only, never the target.
Estimate mc_noisy_loss(LossKind kind, const DifferentiableMap& map, const Vector& x,
                       const Vector& y, double sigma, std::size_t n_samples, RngStream& rng,
                       const McOptions& options = {});

/// E[||J_F(x + eps)||_F^2].
Estimate mc_noisy_jacpenalty(const DifferentiableMap& map, const Vector& x, double sigma,
                             std::size_t n_samples, RngStream& rng, const McOptions& options = {});

constexpr double kSecondDerivativeStep = 1e-3;
constexpr double kThirdOrderStep = 1e-3;
constexpr double kFourthDerivativeStep = 1e-2;

/// sum_j [f(x + h e_j) - 2 f(x) + f(x - h e_j)] / h^2
double fd_trace_hessian(const ScalarField& f, const Vector& x, double step = kSecondDerivativeStep);
double fd_trace_hessian_loss(LossKind kind, const DifferentiableMap& map, const Vector& x,
                             const Vector& y, double step = kSecondDerivativeStep);

/// Full central-difference Hessian (symmetric by construction).
Matrix fd_hessian(const ScalarField& f, const Vector& x, double step = kSecondDerivativeStep);

/// Central-difference Jacobian of the map's value.
Matrix fd_jacobian(const DifferentiableMap& map, const Vector& x, double step = 1e-5);

struct MseTraceDecomposition {
  double total = 0.0;
  double overshoot_term = 0.0;  // 2 sum_i (F_i - y_i) tr(H_i)
  double jac_term = 0.0;        // 2 ||J||_F^2
};

/// Trace of the input Hessian of ||F(x) - y||^2, split into its two parts.
MseTraceDecomposition analytic_trace_hessian_mse(const DifferentiableMap& map, const Vector& x,
                                                 const Vector& y);

struct PenaltyTraceDecomposition {
  double total = 0.0;
  double third_order_term = 0.0;  // 2 sum_i sum_{j,k} T_i,jjk J_ik
  double hess_sq_term = 0.0;      // 2 sum_i ||H_i||_F^2
};

/// Trace of the input Hessian of ||J_F(x)||_F^2. Third derivatives come from
/// central differences of output_hessians() with `step`.
PenaltyTraceDecomposition analytic_trace_hessian_jacpenalty(const DifferentiableMap& map,
                                                            const Vector& x,
                                                            double step = kThirdOrderStep);

struct FourthOrderTerms {
  double diagonal_sum = 0.0;  // sum_i T_iiii
  double full_sum = 0.0;      // sum_{i,j} T_iijj
  double paper_diagonal = 0.0;  // sigma^4/4! * diagonal_sum
  double isserlis_full = 0.0;   // sigma^4/8 * full_sum, the exact Gaussian contraction
  /// |estimate(h/2) - estimate(h)| for the two contractions: a conservative
  /// bound on the remaining truncation and rounding error.
  double paper_diagonal_error = 0.0;
  double isserlis_full_error = 0.0;
};

/// Fourth-derivative contractions by central differences (5-point pure and
/// 3x3 mixed stencils) with one Richardson step (h, h/2).
FourthOrderTerms fourth_order_terms(const ScalarField& f, const Vector& x, double sigma,
                                    double step = kFourthDerivativeStep);

struct ExpansionTerm {
  int order = 2;
  std::string label;   // trace-hessian, jac-sq, hess-F-sq, cross-third-order,
                       // fourth-diagonal, fourth-isserlis, residual-R
  std::string method;  // "fd" or "mc"
  std::optional<double> analytic;
  std::optional<double> oracle;
  double oracle_stderr = 0.0;
  std::optional<double> tolerance;
  bool informational = false;
  bool pass = true;
  std::string note;
};

struct TaylorReport {
  std::uint64_t model_fingerprint = 0;
  Vector x;
  Vector y;
  double sigma = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::vector<ExpansionTerm> terms;
  /// "isserlis-full" or "paper-diagonal": whichever fourth-order candidate
  /// lies closer to the Monte-Carlo residual.
  std::string fourth_order_match;
  /// Hessian-norm coefficient in the noisy-penalty expansion (sigma^2) and the
  /// doubled alternative 2 sigma^2, with whether the alternative would also
  /// reconcile.
  double hessian_sq_coefficient = 0.0;
  double alternative_hessian_sq_coefficient = 0.0;
  bool alternative_within_tolerance = false;
  bool pass = false;

  const ExpansionTerm& term(const std::string& label, const std::string& method) const;
};

struct ReportOptions {
  std::size_t workers = 1;
  /// Multiple of the truncation estimate (fourth-order term plus the
  /// sixth-order part measured at sigma and sigma/2) allowed as slack for the
  /// second-order checks.
  double fourth_order_slack = 2.0;
};

/// Runs every reconciliation at (x, y) with noise level sigma and n_samples
/// Monte-Carlo draws (control-variate estimator). Throws
/// UnsupportedActivation for models without input Hessians.
TaylorReport build_taylor_report(const DifferentiableMap& map, std::uint64_t model_fingerprint,
                                 const Vector& x, const Vector& y, double sigma,
                                 std::size_t n_samples, RngStream& rng,
                                 const ReportOptions& options = {});

nlohmann::json to_json(const TaylorReport& report);

/// Least-squares slope of log|r| against log(sigma).
double fitted_exponent(std::span<const double> sigmas, std::span<const double> residuals);

}  // namespace jacreg
