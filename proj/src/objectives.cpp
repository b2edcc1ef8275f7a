#include "jacreg/objectives.hpp"

#include "jacreg/error.hpp"

#include <cmath>

namespace jacreg {

void ObjectiveSpec::validate() const {
  auto check = [](double v, const char* what) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ParameterError(std::string(what) + " must be finite and >= 0, got " +
                           std::to_string(v));
    }
  };
  check(weight_decay, "weight_decay");
  if (input_noise) check(*input_noise, "input_noise");
  if (jacobian) {
    check(jacobian->lambda, "jacobian lambda");
    if (jacobian->noise_sigma) check(*jacobian->noise_sigma, "penalty noise sigma");
  }
}

ObjectiveSpec ObjectiveSpec::with_weight_decay(double lambda_wd) {
  ObjectiveSpec s;
  s.weight_decay = lambda_wd;
  return s;
}

ObjectiveSpec ObjectiveSpec::with_input_noise(double sigma) {
  ObjectiveSpec s;
  s.input_noise = sigma;
  return s;
}

ObjectiveSpec ObjectiveSpec::with_jacobian(double lambda, std::optional<double> penalty_sigma) {
  ObjectiveSpec s;
  s.jacobian = JacobianPenalty{lambda, penalty_sigma};
  return s;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::mlp: return "MLP";
    case Variant::l2: return "MLP+L2";
    case Variant::noise: return "MLP+Noise";
    case Variant::jacobian: return "MLP+Jacob";
    case Variant::noise_jacobian: return "MLP+N+J";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::mlp, Variant::l2, Variant::noise, Variant::jacobian,
                    Variant::noise_jacobian}) {
    if (name == to_string(v)) return v;
  }
  if (name == "mlp") return Variant::mlp;
  if (name == "l2") return Variant::l2;
  if (name == "noise") return Variant::noise;
  if (name == "jacob" || name == "jacobian") return Variant::jacobian;
  if (name == "noise_jacob" || name == "n+j") return Variant::noise_jacobian;
  throw ParameterError("unknown variant '" + std::string(name) + "'");
}

ObjectiveSpec objective_for(Variant v, const VariantHyperparams& hp) {
  switch (v) {
    case Variant::mlp: return ObjectiveSpec::clean();
    case Variant::l2: return ObjectiveSpec::with_weight_decay(hp.weight_decay);
    case Variant::noise: return ObjectiveSpec::with_input_noise(hp.input_noise);
    case Variant::jacobian: return ObjectiveSpec::with_jacobian(hp.jacobian_lambda);
    case Variant::noise_jacobian: {
      ObjectiveSpec s = ObjectiveSpec::with_jacobian(hp.jacobian_lambda, hp.penalty_noise);
      s.input_noise = hp.input_noise;
      return s;
    }
  }
  return {};
}

double mse_loss(const MlpParams& params, const Vector& x, const Vector& y) {
  if (y.size() != params.output_dim()) {
    throw DimensionError("mse_loss: target length " + std::to_string(y.size()) +
                         " but model has " + std::to_string(params.output_dim()) + " outputs");
  }
  const Vector f = predict(params, x);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double r = f[i] - y[i];
    s += r * r;
  }
  return s;
}

Vector corrupt_input(const Vector& x, double sigma, RngStream& rng) {
  const Vector eps = gaussian_vector(rng, x.size(), sigma);
  Vector out = x;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += eps[i];
  return out;
}

CorruptedBatch draw_corruption(const ObjectiveSpec& spec, const Batch& batch, RngStream& rng) {
  spec.validate();
  const std::size_t n = batch.inputs.rows();
  const std::size_t d = batch.inputs.cols();
  CorruptedBatch out;
  out.mse_inputs = batch.inputs;
  const bool penalty_noise = spec.has_penalty() && spec.jacobian->noise_sigma.has_value();
  if (penalty_noise) out.penalty_inputs = batch.inputs;
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.input_noise) {
      const Vector eps = gaussian_vector(rng, d, *spec.input_noise);
      auto row = out.mse_inputs.row(i);
      for (std::size_t j = 0; j < d; ++j) row[j] += eps[j];
    }
    if (penalty_noise) {
      const Vector eps = gaussian_vector(rng, d, *spec.jacobian->noise_sigma);
      auto row = out.penalty_inputs.row(i);
      for (std::size_t j = 0; j < d; ++j) row[j] += eps[j];
    }
  }
  // The penalty reads the clean inputs when it has no noise of its own.
  if (spec.has_penalty() && !penalty_noise && spec.input_noise) out.penalty_inputs = batch.inputs;
  return out;
}

namespace {

using Eigen::Index;

struct BatchTrace {
  std::vector<EigenRowMatrix> pre;  // B x n_{k+1}
  std::vector<EigenRowMatrix> act;  // B x n_{k+1}
};

template <typename Fn>
EigenRowMatrix map_elementwise(const EigenRowMatrix& z, Fn fn) {
  EigenRowMatrix out(z.rows(), z.cols());
  const double* src = z.data();
  double* dst = out.data();
  for (Index i = 0; i < z.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

BatchTrace forward_batch(const MlpParams& params, const Matrix& inputs) {
  BatchTrace t;
  EigenRowMatrix current = inputs.map();
  for (const auto& layer : params.layers()) {
    EigenRowMatrix z = current * layer.weights.map().transpose();
    z.rowwise() += layer.bias.map().transpose();
    const Activation act = layer.activation;
    EigenRowMatrix a = map_elementwise(z, [act](double v) { return activate(act, v); });
    t.pre.push_back(std::move(z));
    current = a;
    t.act.push_back(std::move(a));
  }
  return t;
}

/// Standard reverse pass. `out_grad` is dLoss/dF (B x m, may be empty for a
/// zero top gradient); `extra_pre` adds direct contributions to dLoss/dz_k.
void backward_batch(const MlpParams& params, const Matrix& inputs, const BatchTrace& t,
                    const EigenRowMatrix* out_grad, const std::vector<EigenRowMatrix>* extra_pre,
                    ParamGradient& grad) {
  const std::size_t n_layers = params.layer_count();
  const Index batch = static_cast<Index>(inputs.rows());
  EigenRowMatrix act_grad;
  if (out_grad) {
    act_grad = *out_grad;
  } else {
    act_grad = EigenRowMatrix::Zero(batch, static_cast<Index>(params.output_dim()));
  }
  for (std::size_t k = n_layers; k-- > 0;) {
    const Layer& layer = params.layer(k);
    const Activation act = layer.activation;
    EigenRowMatrix pre_grad =
        map_elementwise(t.pre[k], [act](double v) { return activation_d1(act, v); });
    pre_grad.array() *= act_grad.array();
    if (extra_pre) pre_grad += (*extra_pre)[k];
    if (k > 0) {
      grad.weights[k].map().noalias() += pre_grad.transpose() * t.act[k - 1];
    } else {
      grad.weights[k].map().noalias() += pre_grad.transpose() * inputs.map();
    }
    grad.biases[k].map() += pre_grad.colwise().sum().transpose();
    if (k > 0) act_grad.noalias() = pre_grad * layer.weights.map();
  }
}

struct PenaltyResult {
  Eigen::VectorXd per_sample;  // ||J_F(x_b)||_F^2
};

/// Penalty value and, when `grad` is non-null, the gradient of
/// scale * sum_b ||J_b||^2 added into `grad`.
///
/// J_b = Acc_0 W_0 with Acc_k built from the output side:
///   B_{L-1} = diag(phi'_{L-1}) W_{L-1},  Acc_k = B_{k+1} diag(phi'_k),  B_k = Acc_k W_k.
/// The reverse sweep walks k upward from the input layer, collecting
/// weight gradients and the derivative with respect to every phi'_k, which
/// reaches the pre-activations through phi''_k and then flows through the
/// ordinary forward graph.
PenaltyResult penalty_pass(const MlpParams& params, const Matrix& inputs, const BatchTrace& t,
                           double scale, ParamGradient* grad) {
  const std::size_t n_layers = params.layer_count();
  const std::size_t last = n_layers - 1;
  const Index batch = static_cast<Index>(inputs.rows());
  const Index m = static_cast<Index>(params.output_dim());
  const Index n1 = static_cast<Index>(params.layer(0).weights.rows());

  std::vector<EigenRowMatrix> d1(n_layers), d2(n_layers);
  for (std::size_t k = 0; k < n_layers; ++k) {
    const Activation act = params.layer(k).activation;
    d1[k] = map_elementwise(t.pre[k], [act](double v) { return activation_d1(act, v); });
    d2[k] = map_elementwise(t.pre[k], [act](double v) { return activation_d2(act, v); });
  }

  // Per example: b_mats[k] = B_k (k >= 1), acc_mats[k] = Acc_k (1 <= k < last).
  std::vector<std::vector<EigenRowMatrix>> b_mats(static_cast<std::size_t>(batch));
  std::vector<std::vector<EigenRowMatrix>> acc_mats(static_cast<std::size_t>(batch));
  EigenRowMatrix acc0(batch * m, n1);
  for (Index b = 0; b < batch; ++b) {
    auto& bm = b_mats[static_cast<std::size_t>(b)];
    auto& am = acc_mats[static_cast<std::size_t>(b)];
    bm.resize(n_layers);
    am.resize(n_layers);
    EigenRowMatrix cur = d1[last].row(b).transpose().asDiagonal() * params.layer(last).weights.map();
    bm[last] = cur;
    for (std::size_t k = last - 1; k >= 1; --k) {
      am[k] = bm[k + 1] * d1[k].row(b).transpose().asDiagonal();
      bm[k] = am[k] * params.layer(k).weights.map();
    }
    acc0.middleRows(b * m, m) = bm[1] * d1[0].row(b).transpose().asDiagonal();
  }
  const EigenRowMatrix jac = acc0 * params.layer(0).weights.map();  // (B*m) x d

  PenaltyResult result;
  result.per_sample.resize(batch);
  for (Index b = 0; b < batch; ++b) result.per_sample[b] = jac.middleRows(b * m, m).squaredNorm();
  if (!grad) return result;

  const EigenRowMatrix jac_bar = (2.0 * scale) * jac;
  const EigenRowMatrix acc0_bar = jac_bar * params.layer(0).weights.map().transpose();
  grad->weights[0].map().noalias() += acc0.transpose() * jac_bar;

  std::vector<EigenRowMatrix> extra(n_layers);
  for (std::size_t k = 0; k < n_layers; ++k) extra[k] = EigenRowMatrix::Zero(batch, t.pre[k].cols());

  for (Index b = 0; b < batch; ++b) {
    const auto& bm = b_mats[static_cast<std::size_t>(b)];
    const auto& am = acc_mats[static_cast<std::size_t>(b)];
    EigenRowMatrix acc_bar = acc0_bar.middleRows(b * m, m);  // dP/dAcc_k, m x n_{k+1}
    for (std::size_t k = 0; k < last; ++k) {
      // Acc_k = B_{k+1} diag(phi'_k)
      const Eigen::RowVectorXd dphi_bar = (acc_bar.array() * bm[k + 1].array()).colwise().sum();
      extra[k].row(b) = dphi_bar.array() * d2[k].row(b).array();
      const EigenRowMatrix b_bar = acc_bar * d1[k].row(b).transpose().asDiagonal();
      // B_{k+1} = Acc_{k+1} W_{k+1}
      const auto& w = params.layer(k + 1).weights.map();
      if (k + 1 == last) {
        grad->weights[last].map().noalias() += d1[last].row(b).transpose().asDiagonal() * b_bar;
      } else {
        grad->weights[k + 1].map().noalias() += am[k + 1].transpose() * b_bar;
      }
      acc_bar = b_bar * w.transpose();
    }
    // Acc_{last} = diag(phi'_{last})
    for (Index i = 0; i < m; ++i) extra[last](b, i) = acc_bar(i, i) * d2[last](b, i);
  }
  backward_batch(params, inputs, t, nullptr, &extra, *grad);
  return result;
}

struct CoreResult {
  LossBreakdown loss;
  ParamGradient grad;
};

CoreResult evaluate(const ObjectiveSpec& spec, const MlpParams& params, const Batch& batch,
                    const CorruptedBatch& corrupted, bool want_grad) {
  spec.validate();
  const std::size_t n = batch.inputs.rows();
  if (n == 0) throw ParameterError("objective: batch is empty");
  if (batch.inputs.cols() != params.input_dim()) {
    throw DimensionError("objective: batch inputs " + shape_string(batch.inputs) +
                         " but model expects " + std::to_string(params.input_dim()) + " features");
  }
  if (batch.targets.rows() != n || batch.targets.cols() != params.output_dim()) {
    throw DimensionError("objective: batch targets " + shape_string(batch.targets) +
                         " do not match " + std::to_string(n) + "x" +
                         std::to_string(params.output_dim()));
  }
  if (corrupted.mse_inputs.rows() != n || corrupted.mse_inputs.cols() != params.input_dim()) {
    throw DimensionError("objective: corrupted inputs do not match the batch");
  }

  CoreResult out;
  if (want_grad) out.grad = ParamGradient::zeros_like(params);
  const double inv_n = 1.0 / static_cast<double>(n);

  const BatchTrace trace = forward_batch(params, corrupted.mse_inputs);
  const EigenRowMatrix residual = trace.act.back() - batch.targets.map();
  out.loss.mse = residual.rowwise().squaredNorm().sum() * inv_n;
  if (want_grad) {
    const EigenRowMatrix out_grad = (2.0 * inv_n) * residual;
    backward_batch(params, corrupted.mse_inputs, trace, &out_grad, nullptr, out.grad);
  }

  for (const auto& layer : params.layers()) out.loss.weight_decay += layer.weights.frobenius_sq();
  if (want_grad && spec.weight_decay > 0.0) {
    for (std::size_t k = 0; k < params.layer_count(); ++k) {
      out.grad.weights[k].map() += (2.0 * spec.weight_decay) * params.layer(k).weights.map();
    }
  }

  const double lambda = spec.penalty_lambda();
  if (lambda > 0.0) {
    const bool separate = corrupted.penalty_inputs.size() > 0;
    const Matrix& pen_inputs = separate ? corrupted.penalty_inputs : corrupted.mse_inputs;
    const BatchTrace pen_trace_storage = separate ? forward_batch(params, pen_inputs) : BatchTrace{};
    const BatchTrace& pen_trace = separate ? pen_trace_storage : trace;
    const PenaltyResult pen =
        penalty_pass(params, pen_inputs, pen_trace, lambda * inv_n, want_grad ? &out.grad : nullptr);
    out.loss.jacobian_penalty = pen.per_sample.sum() * inv_n;
  }

  out.loss.total = out.loss.mse + spec.weight_decay * out.loss.weight_decay +
                   lambda * out.loss.jacobian_penalty;
  if (!std::isfinite(out.loss.total)) throw NumericError("objective value is not finite");
  return out;
}

}  // namespace

LossBreakdown objective_value_on(const ObjectiveSpec& spec, const MlpParams& params,
                                 const Batch& batch, const CorruptedBatch& corrupted) {
  return evaluate(spec, params, batch, corrupted, false).loss;
}

GradientResult objective_gradient_on(const ObjectiveSpec& spec, const MlpParams& params,
                                     const Batch& batch, const CorruptedBatch& corrupted) {
  CoreResult core = evaluate(spec, params, batch, corrupted, true);
  GradientResult r;
  r.loss = core.loss;
  r.gradient = std::move(core.grad);
  r.almost_everywhere = spec.has_penalty() && !params.is_smooth();
  return r;
}

LossBreakdown objective_value(const ObjectiveSpec& spec, const MlpParams& params,
                              const Batch& batch, RngStream& rng) {
  return objective_value_on(spec, params, batch, draw_corruption(spec, batch, rng));
}

GradientResult objective_gradient(const ObjectiveSpec& spec, const MlpParams& params,
                                  const Batch& batch, RngStream& rng) {
  return objective_gradient_on(spec, params, batch, draw_corruption(spec, batch, rng));
}

}  // namespace jacreg
