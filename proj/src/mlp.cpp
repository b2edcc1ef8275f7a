#include "jacreg/mlp.hpp"

#include "jacreg/error.hpp"

#include <bit>
#include <cmath>

namespace jacreg {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::rectifier: return "rectifier";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "rectifier" || name == "relu") return Activation::rectifier;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw ParameterError("unknown activation '" + std::string(name) + "'");
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::tanh: return std::tanh(z);
    case Activation::rectifier: return z > 0.0 ? z : 0.0;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::identity: return z;
  }
  return z;
}

double activation_d1(Activation a, double z) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::rectifier: return z > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s);
    }
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

double activation_d2(Activation a, double z) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::rectifier: return 0.0;
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    case Activation::identity: return 0.0;
  }
  return 0.0;
}

bool is_smooth(Activation a) { return a != Activation::rectifier; }

MlpParams::MlpParams(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.size() < 2 || layers_.size() > 3) {
    throw ParameterError("an MLP needs 1 or 2 hidden layers, got " +
                         std::to_string(layers_.empty() ? 0 : layers_.size() - 1));
  }
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& l = layers_[k];
    if (l.weights.rows() == 0 || l.weights.cols() == 0) {
      throw DimensionError("layer " + std::to_string(k) + " has empty weights");
    }
    if (l.bias.size() != l.weights.rows()) {
      throw DimensionError("layer " + std::to_string(k) + ": bias length " +
                           std::to_string(l.bias.size()) + " vs weights " +
                           shape_string(l.weights));
    }
    if (k > 0 && l.weights.cols() != layers_[k - 1].weights.rows()) {
      throw DimensionError("layer " + std::to_string(k) + " weights " + shape_string(l.weights) +
                           " do not chain with previous " + shape_string(layers_[k - 1].weights));
    }
    const bool is_output = k + 1 == layers_.size();
    if (is_output && l.activation != Activation::sigmoid && l.activation != Activation::identity) {
      throw ParameterError("output layer must use sigmoid or identity, got " +
                           std::string(to_string(l.activation)));
    }
    if (!is_output && l.activation == Activation::sigmoid) {
      throw ParameterError("hidden layers must use tanh, rectifier or identity");
    }
    if (!all_finite(l.weights.span()) || !all_finite(l.bias.span())) {
      throw NumericError("layer " + std::to_string(k) + " has non-finite parameters");
    }
  }
}

MlpParams MlpParams::initialize(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                std::size_t output_dim, Activation hidden_activation,
                                Activation output_activation, RngStream& rng) {
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);
  std::vector<Layer> layers;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const std::size_t fan_in = dims[k];
    const std::size_t fan_out = dims[k + 1];
    if (fan_in == 0 || fan_out == 0) throw DimensionError("layer sizes must be positive");
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Layer layer{Matrix(fan_out, fan_in), Vector(fan_out),
                k + 2 == dims.size() ? output_activation : hidden_activation};
    for (double& w : layer.weights.span()) w = r * (2.0 * rng.uniform() - 1.0);
    layers.push_back(std::move(layer));
  }
  return MlpParams(std::move(layers));
}

MlpParams MlpParams::gaussian(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                              std::size_t output_dim, Activation hidden_activation,
                              Activation output_activation, double weight_scale, double bias_scale,
                              RngStream& rng) {
  if (!(weight_scale >= 0.0) || !(bias_scale >= 0.0)) {
    throw ParameterError("gaussian init: scales must be >= 0");
  }
  MlpParams p = initialize(input_dim, hidden, output_dim, hidden_activation, output_activation, rng);
  for (auto& layer : p.layers_) {
    for (double& w : layer.weights.span()) w = weight_scale * rng.gaussian();
    for (double& b : layer.bias.span()) b = bias_scale * rng.gaussian();
  }
  return p;
}

std::vector<std::size_t> MlpParams::hidden_sizes() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) out.push_back(layers_[k].weights.rows());
  return out;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

double MlpParams::parameter(std::size_t index) const {
  for (const auto& l : layers_) {
    if (index < l.weights.size()) return l.weights.span()[index];
    index -= l.weights.size();
    if (index < l.bias.size()) return l.bias[index];
    index -= l.bias.size();
  }
  throw ParameterError("parameter index out of range");
}

void MlpParams::set_parameter(std::size_t index, double value) {
  for (auto& l : layers_) {
    if (index < l.weights.size()) {
      l.weights.span()[index] = value;
      return;
    }
    index -= l.weights.size();
    if (index < l.bias.size()) {
      l.bias[index] = value;
      return;
    }
    index -= l.bias.size();
  }
  throw ParameterError("parameter index out of range");
}

bool MlpParams::is_smooth() const {
  for (const auto& l : layers_)
    if (!jacreg::is_smooth(l.activation)) return false;
  return true;
}

ParamGradient ParamGradient::zeros_like(const MlpParams& params) {
  ParamGradient g;
  for (const auto& l : params.layers()) {
    g.weights.emplace_back(l.weights.rows(), l.weights.cols());
    g.biases.emplace_back(l.bias.size());
  }
  return g;
}

std::size_t ParamGradient::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
  return n;
}

double ParamGradient::parameter(std::size_t index) const {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (index < weights[k].size()) return weights[k].span()[index];
    index -= weights[k].size();
    if (index < biases[k].size()) return biases[k][index];
    index -= biases[k].size();
  }
  throw ParameterError("gradient index out of range");
}

double ParamGradient::norm() const {
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    s += weights[k].frobenius_sq();
    for (double b : biases[k].span()) s += b * b;
  }
  return std::sqrt(s);
}

void apply_sgd_step(MlpParams& params, const ParamGradient& grad, double learning_rate) {
  for (std::size_t k = 0; k < params.layer_count(); ++k) {
    params.weights(k).map() -= learning_rate * grad.weights[k].map();
    params.bias(k).map() -= learning_rate * grad.biases[k].map();
  }
}

ForwardResult forward(const MlpParams& params, const Vector& x) {
  if (x.size() != params.input_dim()) {
    throw DimensionError("forward: input length " + std::to_string(x.size()) +
                         " but model expects " + std::to_string(params.input_dim()));
  }
  ForwardResult result;
  const Vector* input = &x;
  for (const auto& layer : params.layers()) {
    Vector z(layer.weights.rows());
    for (std::size_t r = 0; r < z.size(); ++r) {
      z[r] = dot(layer.weights.row(r), input->span()) + layer.bias[r];
    }
    Vector a(z.size());
    for (std::size_t r = 0; r < z.size(); ++r) a[r] = activate(layer.activation, z[r]);
    result.trace.pre_activations.push_back(std::move(z));
    result.trace.activations.push_back(std::move(a));
    input = &result.trace.activations.back();
  }
  result.output = result.trace.activations.back();
  return result;
}

Vector predict(const MlpParams& params, const Vector& x) { return forward(params, x).output; }

Matrix analytic_jacobian(const MlpParams& params, const Vector& x) {
  const ForwardTrace trace = forward(params, x).trace;
  const std::size_t n_layers = params.layer_count();
  const std::size_t m = params.output_dim();

  // acc = D_L W_L D_{L-1} ... accumulated right-to-left into an m x n_k block.
  const Layer& out = params.layer(n_layers - 1);
  EigenRowMatrix acc = out.weights.map();
  for (std::size_t i = 0; i < m; ++i) {
    acc.row(i) *= activation_d1(out.activation, trace.pre_activations.back()[i]);
  }
  for (std::size_t k = n_layers - 1; k-- > 0;) {
    const Layer& layer = params.layer(k);
    const Vector& z = trace.pre_activations[k];
    for (std::size_t c = 0; c < z.size(); ++c) acc.col(c) *= activation_d1(layer.activation, z[c]);
    EigenRowMatrix next = acc * layer.weights.map();
    acc = std::move(next);
  }
  return Matrix::from_eigen(acc);
}

double jacobian_frobenius_sq(const MlpParams& params, const Vector& x) {
  return analytic_jacobian(params, x).frobenius_sq();
}

namespace {

void require_smooth(const MlpParams& params, const char* what) {
  if (!params.is_smooth()) {
    throw UnsupportedActivation(std::string(what) +
                                " requires smooth hidden activations (tanh or identity); "
                                "rectifier second derivatives vanish almost everywhere");
  }
}

}  // namespace

std::vector<Matrix> output_hessians(const MlpParams& params, const Vector& x, double step) {
  require_smooth(params, "output_hessians");
  if (!(step > 0.0)) throw ParameterError("output_hessians: step must be positive");
  const std::size_t d = params.input_dim();
  const std::size_t m = params.output_dim();
  if (x.size() != d) throw DimensionError("output_hessians: input length mismatch");

  std::vector<Matrix> hessians(m, Matrix(d, d));
  Vector probe = x;
  for (std::size_t j = 0; j < d; ++j) {
    probe[j] = x[j] + step;
    const Matrix jp = analytic_jacobian(params, probe);
    probe[j] = x[j] - step;
    const Matrix jm = analytic_jacobian(params, probe);
    probe[j] = x[j];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) hessians[i](j, k) = (jp(i, k) - jm(i, k)) / (2.0 * step);
  }
  for (auto& h : hessians) {
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = j + 1; k < d; ++k) {
        const double s = 0.5 * (h(j, k) + h(k, j));
        h(j, k) = s;
        h(k, j) = s;
      }
    }
  }
  return hessians;
}

Matrix hessian_of_output(const MlpParams& params, const Vector& x, std::size_t out_index,
                         double step) {
  if (out_index >= params.output_dim()) {
    throw DimensionError("hessian_of_output: output index " + std::to_string(out_index) +
                         " out of range for " + std::to_string(params.output_dim()) + " outputs");
  }
  return output_hessians(params, x, step)[out_index];
}

double hessian_frobenius_sq_F(const MlpParams& params, const Vector& x, double step) {
  double s = 0.0;
  for (const auto& h : output_hessians(params, x, step)) s += h.frobenius_sq();
  return s;
}

std::uint64_t fingerprint(const MlpParams& params) {
  // FNV-1a over shapes, activation tags and raw parameter bits.
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& l : params.layers()) {
    mix(l.weights.rows());
    mix(l.weights.cols());
    mix(static_cast<std::uint64_t>(l.activation));
    for (double w : l.weights.span()) mix(std::bit_cast<std::uint64_t>(w));
    for (double b : l.bias.span()) mix(std::bit_cast<std::uint64_t>(b));
  }
  return h;
}

}  // namespace jacreg
