#include "jacreg/taylor.hpp"

#include "jacreg/error.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace jacreg {

std::vector<Matrix> DifferentiableMap::output_hessians(const Vector& x) const {
  const std::size_t d = input_dim();
  const std::size_t m = output_dim();
  const double h = kHessianStep;
  std::vector<Matrix> hs(m, Matrix(d, d));
  Vector probe = x;
  for (std::size_t j = 0; j < d; ++j) {
    probe[j] = x[j] + h;
    const Matrix jp = jacobian(probe);
    probe[j] = x[j] - h;
    const Matrix jm = jacobian(probe);
    probe[j] = x[j];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) hs[i](j, k) = (jp(i, k) - jm(i, k)) / (2.0 * h);
  }
  for (auto& hm : hs) {
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = j + 1; k < d; ++k) hm(j, k) = hm(k, j) = 0.5 * (hm(j, k) + hm(k, j));
  }
  return hs;
}

std::vector<Matrix> MlpMap::output_hessians(const Vector& x) const {
  return jacreg::output_hessians(params_, x);
}

QuadraticMap::QuadraticMap(double offset, Vector gradient, Matrix hessian)
    : offset_(offset), gradient_(std::move(gradient)), hessian_(std::move(hessian)) {
  const std::size_t d = gradient_.size();
  if (hessian_.rows() != d || hessian_.cols() != d) {
    throw DimensionError("QuadraticMap: Hessian " + shape_string(hessian_) +
                         " does not match dimension " + std::to_string(d));
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (hessian_(i, j) != hessian_(j, i)) throw ParameterError("QuadraticMap: Hessian not symmetric");
}

Vector QuadraticMap::value(const Vector& x) const {
  const Vector ax = matvec(hessian_, x);
  return Vector{offset_ + dot(gradient_.span(), x.span()) + 0.5 * dot(x.span(), ax.span())};
}

Matrix QuadraticMap::jacobian(const Vector& x) const {
  const Vector ax = matvec(hessian_, x);
  Matrix j(1, x.size());
  for (std::size_t k = 0; k < x.size(); ++k) j(0, k) = gradient_[k] + ax[k];
  return j;
}

std::vector<Matrix> QuadraticMap::output_hessians(const Vector&) const { return {hessian_}; }

ScalarField squared_error_field(const DifferentiableMap& map, Vector target) {
  if (target.size() != map.output_dim()) {
    throw DimensionError("squared_error_field: target length " + std::to_string(target.size()) +
                         " vs " + std::to_string(map.output_dim()) + " outputs");
  }
  return [&map, y = std::move(target)](std::span<const double> x) {
    const Vector f = map.value(Vector(x));
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += (f[i] - y[i]) * (f[i] - y[i]);
    return s;
  };
}

ScalarField jacobian_penalty_field(const DifferentiableMap& map) {
  return [&map](std::span<const double> x) { return map.jacobian(Vector(x)).frobenius_sq(); };
}

ScalarField loss_field(LossKind kind, const DifferentiableMap& map, const Vector& target) {
  return kind == LossKind::squared_error ? squared_error_field(map, target)
                                         : jacobian_penalty_field(map);
}

namespace {

constexpr std::size_t kChunk = 8192;

/// Welford accumulator with Chan's pairwise merge.
struct RunningStats {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double v) {
    ++n;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }

  void merge(const RunningStats& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double total = static_cast<double>(n + o.n);
    const double delta = o.mean - mean;
    mean += delta * static_cast<double>(o.n) / total;
    m2 += o.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(o.n) / total;
    n += o.n;
  }

  Estimate estimate() const {
    Estimate e;
    e.mean = mean;
    e.samples = n;
    if (n > 1) e.stderr_mean = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
    return e;
  }
};

/// Unit-variance noise direction u (eps = sigma * u).
void draw_unit(RngStream& rng, NoiseKind kind, std::vector<double>& u) {
  const double half_width = std::sqrt(3.0);
  for (double& v : u) v = kind == NoiseKind::gaussian ? rng.gaussian() : half_width * rng.symmetric_uniform();
}

/// Sum over n draws of sample(u), split into fixed chunks with independent
/// substreams. `sample` must be thread-safe.
template <typename SampleFn>
std::vector<RunningStats> run_chunks(std::size_t n_samples, std::size_t dim, RngStream& rng,
                                     NoiseKind kind, std::size_t workers, std::size_t n_outputs,
                                     const SampleFn& sample) {
  if (n_samples == 0) throw ParameterError("Monte-Carlo: n_samples must be >= 1");
  const std::uint64_t base = rng.next_u64();
  const std::size_t n_chunks = (n_samples + kChunk - 1) / kChunk;
  std::vector<std::vector<RunningStats>> per_chunk(n_chunks, std::vector<RunningStats>(n_outputs));

  auto do_chunk = [&](std::size_t c) {
    RngStream stream = rng.substream(base + c);
    std::vector<double> u(dim);
    std::vector<double> values(n_outputs);
    const std::size_t count = std::min(kChunk, n_samples - c * kChunk);
    for (std::size_t s = 0; s < count; ++s) {
      draw_unit(stream, kind, u);
      sample(u, values);
      for (std::size_t o = 0; o < n_outputs; ++o) per_chunk[c][o].add(values[o]);
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(workers, n_chunks));
  if (threads == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) do_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < n_chunks; c += threads) do_chunk(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  std::vector<RunningStats> total(n_outputs);
  for (const auto& chunk : per_chunk)
    for (std::size_t o = 0; o < n_outputs; ++o) total[o].merge(chunk[o]);
  return total;
}

double quadratic_form(const Matrix& a, const std::vector<double>& u) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) row += a(i, j) * u[j];
    s += u[i] * row;
  }
  return s;
}

double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
  return t;
}

void check_sigma(double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("sigma must be finite and >= 0, got " + std::to_string(sigma));
  }
}

}  // namespace

Estimate mc_expectation(const ScalarField& f, const Vector& x, double sigma, std::size_t n_samples,
                        RngStream& rng, const McOptions& options) {
  check_sigma(sigma);
  const std::size_t d = x.size();
  Matrix cv;
  double cv_trace = 0.0;
  if (options.estimator == Estimator::control_variate) {
    cv = options.control_hessian ? *options.control_hessian : fd_hessian(f, x);
    if (cv.rows() != d || cv.cols() != d) throw DimensionError("control Hessian shape mismatch");
    cv_trace = trace(cv);
  }
  const auto stats = run_chunks(
      n_samples, d, rng, options.noise, options.workers, 1,
      [&](const std::vector<double>& u, std::vector<double>& out) {
        std::vector<double> p(d);
        for (std::size_t i = 0; i < d; ++i) p[i] = x[i] + sigma * u[i];
        const double fp = f(p);
        if (options.estimator == Estimator::plain) {
          out[0] = fp;
          return;
        }
        for (std::size_t i = 0; i < d; ++i) p[i] = x[i] - sigma * u[i];
        double v = 0.5 * (fp + f(p));
        if (options.estimator == Estimator::control_variate) {
          v -= 0.5 * sigma * sigma * (quadratic_form(cv, u) - cv_trace);
        }
        out[0] = v;
      });
  return stats[0].estimate();
}

Estimate mc_noisy_loss(LossKind kind, const DifferentiableMap& map, const Vector& x,
                       const Vector& y, double sigma, std::size_t n_samples, RngStream& rng,
                       const McOptions& options) {
  if (x.size() != map.input_dim()) throw DimensionError("mc_noisy_loss: input length mismatch");
  return mc_expectation(loss_field(kind, map, y), x, sigma, n_samples, rng, options);
}

Estimate mc_noisy_jacpenalty(const DifferentiableMap& map, const Vector& x, double sigma,
                             std::size_t n_samples, RngStream& rng, const McOptions& options) {
  if (x.size() != map.input_dim()) throw DimensionError("mc_noisy_jacpenalty: input length mismatch");
  return mc_expectation(jacobian_penalty_field(map), x, sigma, n_samples, rng, options);
}

double fd_trace_hessian(const ScalarField& f, const Vector& x, double step) {
  if (!(step > 0.0)) throw ParameterError("fd_trace_hessian: step must be positive");
  const double f0 = f(x.span());
  std::vector<double> p(x.values());
  double tr = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    p[j] = x[j] + step;
    const double fp = f(p);
    p[j] = x[j] - step;
    const double fm = f(p);
    p[j] = x[j];
    tr += (fp - 2.0 * f0 + fm) / (step * step);
  }
  return tr;
}

double fd_trace_hessian_loss(LossKind kind, const DifferentiableMap& map, const Vector& x,
                             const Vector& y, double step) {
  return fd_trace_hessian(loss_field(kind, map, y), x, step);
}

Matrix fd_hessian(const ScalarField& f, const Vector& x, double step) {
  if (!(step > 0.0)) throw ParameterError("fd_hessian: step must be positive");
  const std::size_t d = x.size();
  const double f0 = f(x.span());
  std::vector<double> p(x.values());
  Matrix h(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    p[i] = x[i] + step;
    const double fp = f(p);
    p[i] = x[i] - step;
    const double fm = f(p);
    p[i] = x[i];
    h(i, i) = (fp - 2.0 * f0 + fm) / (step * step);
    for (std::size_t j = i + 1; j < d; ++j) {
      double acc = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          p[i] = x[i] + si * step;
          p[j] = x[j] + sj * step;
          acc += si * sj * f(p);
        }
      }
      p[i] = x[i];
      p[j] = x[j];
      h(i, j) = h(j, i) = acc / (4.0 * step * step);
    }
  }
  return h;
}

Matrix fd_jacobian(const DifferentiableMap& map, const Vector& x, double step) {
  const std::size_t d = map.input_dim();
  const std::size_t m = map.output_dim();
  Matrix j(m, d);
  Vector p = x;
  for (std::size_t k = 0; k < d; ++k) {
    p[k] = x[k] + step;
    const Vector fp = map.value(p);
    p[k] = x[k] - step;
    const Vector fm = map.value(p);
    p[k] = x[k];
    for (std::size_t i = 0; i < m; ++i) j(i, k) = (fp[i] - fm[i]) / (2.0 * step);
  }
  return j;
}

MseTraceDecomposition analytic_trace_hessian_mse(const DifferentiableMap& map, const Vector& x,
                                                 const Vector& y) {
  if (y.size() != map.output_dim()) throw DimensionError("analytic_trace_hessian_mse: target length");
  const Vector f = map.value(x);
  const Matrix j = map.jacobian(x);
  const auto hs = map.output_hessians(x);
  MseTraceDecomposition out;
  for (std::size_t i = 0; i < f.size(); ++i) out.overshoot_term += 2.0 * (f[i] - y[i]) * trace(hs[i]);
  out.jac_term = 2.0 * j.frobenius_sq();
  out.total = out.overshoot_term + out.jac_term;
  return out;
}

PenaltyTraceDecomposition analytic_trace_hessian_jacpenalty(const DifferentiableMap& map,
                                                            const Vector& x, double step) {
  if (!(step > 0.0)) throw ParameterError("analytic_trace_hessian_jacpenalty: step must be positive");
  const std::size_t d = map.input_dim();
  const std::size_t m = map.output_dim();
  const Matrix j = map.jacobian(x);
  const auto hs = map.output_hessians(x);
  PenaltyTraceDecomposition out;
  for (const auto& h : hs) out.hess_sq_term += 2.0 * h.frobenius_sq();

  // d/dx_k tr(H_i) by central differences of the Hessians.
  Vector p = x;
  for (std::size_t k = 0; k < d; ++k) {
    p[k] = x[k] + step;
    const auto hp = map.output_hessians(p);
    p[k] = x[k] - step;
    const auto hm = map.output_hessians(p);
    p[k] = x[k];
    for (std::size_t i = 0; i < m; ++i) {
      const double dtrace = (trace(hp[i]) - trace(hm[i])) / (2.0 * step);
      out.third_order_term += 2.0 * j(i, k) * dtrace;
    }
  }
  out.total = out.third_order_term + out.hess_sq_term;
  return out;
}

namespace {

struct FourthSums {
  double diagonal = 0.0;
  double full = 0.0;
};

FourthSums fourth_sums(const ScalarField& f, const Vector& x, double h) {
  const std::size_t d = x.size();
  std::vector<double> p(x.values());
  auto at = [&](std::size_t i, double di, std::size_t j, double dj) {
    p[i] += di;
    p[j] += dj;
    const double v = f(p);
    p[i] = x[i];
    p[j] = x[j];
    return v;
  };
  const double f0 = f(x.span());
  const double h4 = h * h * h * h;
  FourthSums s;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = (at(i, 2 * h, i, 0) - 4.0 * at(i, h, i, 0) + 6.0 * f0 - 4.0 * at(i, -h, i, 0) +
                      at(i, -2 * h, i, 0)) /
                     h4;
    s.diagonal += t;
    s.full += t;
    for (std::size_t j = 0; j < d; ++j) {
      if (j == i) continue;
      static constexpr double w[3] = {1.0, -2.0, 1.0};
      double acc = 0.0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) acc += w[a + 1] * w[b + 1] * at(i, a * h, j, b * h);
      s.full += acc / h4;
    }
  }
  return s;
}

}  // namespace

FourthOrderTerms fourth_order_terms(const ScalarField& f, const Vector& x, double sigma,
                                    double step) {
  check_sigma(sigma);
  if (!(step > 0.0)) throw ParameterError("fourth_order_terms: step must be positive");
  const FourthSums coarse = fourth_sums(f, x, step);
  const FourthSums fine = fourth_sums(f, x, step / 2.0);
  FourthOrderTerms out;
  out.diagonal_sum = (4.0 * fine.diagonal - coarse.diagonal) / 3.0;
  out.full_sum = (4.0 * fine.full - coarse.full) / 3.0;
  const double s4 = sigma * sigma * sigma * sigma;
  out.paper_diagonal = s4 / 24.0 * out.diagonal_sum;
  out.isserlis_full = s4 / 8.0 * out.full_sum;
  out.paper_diagonal_error = s4 / 24.0 * std::abs(fine.diagonal - coarse.diagonal);
  out.isserlis_full_error = s4 / 8.0 * std::abs(fine.full - coarse.full);
  return out;
}

const ExpansionTerm& TaylorReport::term(const std::string& label, const std::string& method) const {
  for (const auto& t : terms)
    if (t.label == label && t.method == method) return t;
  throw ParameterError("report has no term " + label + "/" + method);
}

namespace {

// Absolute floor for reconciliations that are exact up to rounding.
double rounding_floor(double a, double b) { return 1e-10 * std::max({1.0, std::abs(a), std::abs(b)}); }

ExpansionTerm relative_check(int order, std::string label, double analytic, double oracle,
                             double rel_tol, std::string note) {
  ExpansionTerm t;
  t.order = order;
  t.label = std::move(label);
  t.method = "fd";
  t.analytic = analytic;
  t.oracle = oracle;
  t.tolerance = rel_tol * std::max(std::abs(analytic), std::abs(oracle)) + 1e-12;
  t.pass = std::abs(analytic - oracle) <= *t.tolerance;
  t.note = std::move(note);
  return t;
}

// The truncation slack only makes sense while the next term is smaller than
// the term being checked; beyond that the series is not asymptotic.
ExpansionTerm mc_check(int order, std::string label, double analytic, const Estimate& mc,
                       double slack, std::string note, double leading = 0.0,
                       double analytic_error = 0.0) {
  ExpansionTerm t;
  t.order = order;
  t.label = std::move(label);
  t.method = "mc";
  t.analytic = analytic;
  t.oracle = mc.mean;
  t.oracle_stderr = mc.stderr_mean;
  t.tolerance =
      std::max({4.0 * mc.stderr_mean, slack, rounding_floor(analytic, mc.mean)}) + analytic_error;
  t.pass = std::abs(analytic - mc.mean) <= *t.tolerance;
  t.note = std::move(note);
  if (slack > rounding_floor(analytic, mc.mean) + analytic_error && slack > 2.0 * std::abs(leading)) {
    t.pass = false;
    t.note += " [truncation slack exceeds the checked term: outside the asymptotic regime]";
  }
  return t;
}

// Control-variate antithetic estimates from the same draws at sigma and sigma/2.
struct TwoLevel {
  Estimate full;
  double half_mean = 0.0;
};

TwoLevel two_level_mc(const ScalarField& f, const Vector& x, double sigma, std::size_t n_samples,
                      RngStream& rng, std::size_t workers) {
  const std::size_t d = x.size();
  const Matrix cv = fd_hessian(f, x);
  const double cv_trace = trace(cv);
  const auto stats = run_chunks(
      n_samples, d, rng, NoiseKind::gaussian, workers, 2,
      [&](const std::vector<double>& u, std::vector<double>& out) {
        std::vector<double> p(d);
        const double q = quadratic_form(cv, u) - cv_trace;
        for (int level = 0; level < 2; ++level) {
          const double s = level == 0 ? sigma : sigma / 2.0;
          for (std::size_t i = 0; i < d; ++i) p[i] = x[i] + s * u[i];
          const double fp = f(p);
          for (std::size_t i = 0; i < d; ++i) p[i] = x[i] - s * u[i];
          const double fm = f(p);
          out[static_cast<std::size_t>(level)] = 0.5 * (fp + fm) - 0.5 * s * s * q;
        }
      });
  return {stats[0].estimate(), stats[1].estimate().mean};
}

// Residuals beyond the second-order term are c4 s^4 + c6 s^6 at sigma and
// c4 s^4/16 + c6 s^6/64 at sigma/2; returns the c6 s^6 part at sigma.
double sixth_order_part(const TwoLevel& mc, double clean, double second) {
  const double full = mc.full.mean - clean - second;
  const double half = mc.half_mean - clean - 0.25 * second;
  return full - (64.0 * half - full) / 3.0;
}

// Failed only by the asymptotic-regime guard: the difference itself is
// within tolerance.
bool vacuous(const ExpansionTerm& t) {
  return !t.pass && t.note.find("outside the asymptotic regime") != std::string::npos &&
         std::abs(*t.oracle - *t.analytic) <= *t.tolerance;
}

void mark_unresolved(ExpansionTerm& t) {
  t.informational = true;
  t.note += " [unresolved: dominated by the next order; the adjacent order reconciles]";
}

}  // namespace

TaylorReport build_taylor_report(const DifferentiableMap& map, std::uint64_t model_fingerprint,
                                 const Vector& x, const Vector& y, double sigma,
                                 std::size_t n_samples, RngStream& rng,
                                 const ReportOptions& options) {
  check_sigma(sigma);
  if (x.size() != map.input_dim()) throw DimensionError("build_taylor_report: input length mismatch");
  if (y.size() != map.output_dim()) throw DimensionError("build_taylor_report: target length mismatch");

  TaylorReport report;
  report.model_fingerprint = model_fingerprint;
  report.x = x;
  report.y = y;
  report.sigma = sigma;
  report.samples = n_samples;
  report.seed = rng.seed();
  report.stream = rng.stream_id();

  const double s2 = sigma * sigma;
  const ScalarField loss = squared_error_field(map, y);
  const ScalarField penalty = jacobian_penalty_field(map);

  // First order: analytic Jacobian norm against finite differences.
  const Matrix jac = map.jacobian(x);
  const Matrix jac_fd = fd_jacobian(map, x);
  report.terms.push_back(relative_check(2, "jac-sq", jac.frobenius_sq(), jac_fd.frobenius_sq(), 1e-6,
                                        "||J_F||^2: analytic vs central differences"));

  // Second order of the noisy loss: identity, then Monte-Carlo.
  const MseTraceDecomposition mse_trace = analytic_trace_hessian_mse(map, x, y);
  const double fd_trace = fd_trace_hessian(loss, x);
  report.terms.push_back(relative_check(2, "trace-hessian", mse_trace.total, fd_trace, 1e-4,
                                        "2(F-y)tr(H_F) + 2||J_F||^2 vs FD trace of H_L"));

  const double loss0 = loss(x.span());
  const FourthOrderTerms loss4 = fourth_order_terms(loss, x, sigma);
  const TwoLevel loss_mc = two_level_mc(loss, x, sigma, n_samples, rng, options.workers);
  const double second = 0.5 * s2 * mse_trace.total;
  const double sixth = sixth_order_part(loss_mc, loss0, second);
  ExpansionTerm loss_check = mc_check(
      2, "trace-hessian", loss0 + second, loss_mc.full,
      options.fourth_order_slack * (std::abs(loss4.isserlis_full) + std::abs(sixth)),
      "L(z) + (sigma^2/2) tr(H_L) vs Monte-Carlo E[L(z+eps)]", second);

  // Fourth order: residual beyond the second-order term.
  Estimate residual = loss_mc.full;
  residual.mean = loss_mc.full.mean - loss0 - second;
  ExpansionTerm fourth_check = mc_check(4, "fourth-isserlis", loss4.isserlis_full, residual,
                                        2.0 * std::abs(sixth),
                                        "(sigma^4/8) sum_ij T_iijj vs MC residual; slack = 2x the "
                                        "sixth-order part measured at sigma and sigma/2",
                                        loss4.isserlis_full, loss4.isserlis_full_error);
  // A term that nearly cancels sits below the next order even at small sigma.
  // It is left unresolved when the adjacent order reconciles on its own.
  const bool second_vacuous = vacuous(loss_check);
  const bool fourth_vacuous = vacuous(fourth_check);
  if (second_vacuous && fourth_check.pass) mark_unresolved(loss_check);
  if (fourth_vacuous && loss_check.pass) mark_unresolved(fourth_check);
  report.terms.push_back(loss_check);
  report.terms.push_back(fourth_check);
  {
    ExpansionTerm t = mc_check(4, "fourth-diagonal", loss4.paper_diagonal, residual,
                               2.0 * std::abs(sixth),
                               "(sigma^4/4!) sum_i T_iiii vs MC residual", loss4.paper_diagonal,
                               loss4.paper_diagonal_error);
    t.informational = true;
    report.terms.push_back(t);
  }
  report.fourth_order_match =
      std::abs(loss4.isserlis_full - residual.mean) <= std::abs(loss4.paper_diagonal - residual.mean)
          ? "isserlis-full"
          : "paper-diagonal";

  // Noise on the penalty input.
  const PenaltyTraceDecomposition pen_trace = analytic_trace_hessian_jacpenalty(map, x);
  const double fd_pen_trace = fd_trace_hessian(penalty, x);
  report.terms.push_back(relative_check(2, "cross-third-order", pen_trace.total, fd_pen_trace, 1e-3,
                                        "2tr(T3_F J_F) + 2||H_F||^2 vs FD trace of the penalty Hessian"));

  const double pen0 = penalty(x.span());
  const FourthOrderTerms pen4 = fourth_order_terms(penalty, x, sigma);
  const TwoLevel pen_mc = two_level_mc(penalty, x, sigma, n_samples, rng, options.workers);
  const double pen_second = 0.5 * s2 * pen_trace.total;
  const double pen_slack =
      options.fourth_order_slack *
      (std::abs(pen4.isserlis_full) + std::abs(sixth_order_part(pen_mc, pen0, pen_second)));
  report.terms.push_back(mc_check(2, "hess-F-sq", pen0 + pen_second, pen_mc.full, pen_slack,
                                  "||J(x)||^2 + sigma^2(||H_F||^2 + tr(T3 J)) vs MC E[||J(x+eps)||^2]",
                                  pen_second));

  report.hessian_sq_coefficient = s2;
  report.alternative_hessian_sq_coefficient = 2.0 * s2;
  {
    const double alt = pen0 + 0.5 * s2 * pen_trace.third_order_term + s2 * pen_trace.hess_sq_term;
    const ExpansionTerm alt_check =
        mc_check(2, "hess-F-sq", alt, pen_mc.full, pen_slack, "", alt - pen0);
    report.alternative_within_tolerance = alt_check.pass;
  }

  {
    ExpansionTerm r;
    r.order = 4;
    r.label = "residual-R";
    r.method = "none";
    r.informational = true;
    r.note = "2 T4_F (F-y) + 8 T3_F J_F: not estimated separately, absorbed in tolerances";
    report.terms.push_back(r);
  }

  report.pass = true;
  for (const auto& t : report.terms)
    if (!t.informational && !t.pass) report.pass = false;
  return report;
}

nlohmann::json to_json(const TaylorReport& report) {
  nlohmann::json j;
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(report.model_fingerprint));
  j["model_fingerprint"] = fp;
  j["x"] = report.x.values();
  j["y"] = report.y.values();
  j["sigma"] = report.sigma;
  j["samples"] = report.samples;
  j["seed"] = report.seed;
  j["stream"] = report.stream;
  j["terms"] = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  for (const auto& t : report.terms) {
    j["terms"].push_back({{"order", t.order},
                          {"label", t.label},
                          {"method", t.method},
                          {"analytic", opt(t.analytic)},
                          {"oracle", opt(t.oracle)},
                          {"stderr", t.oracle_stderr},
                          {"tolerance", opt(t.tolerance)},
                          {"informational", t.informational},
                          {"pass", t.pass},
                          {"note", t.note}});
  }
  j["fourth_order_match"] = report.fourth_order_match;
  j["hessian_sq_coefficient"] = report.hessian_sq_coefficient;
  j["alternative_hessian_sq_coefficient"] = report.alternative_hessian_sq_coefficient;
  j["alternative_within_tolerance"] = report.alternative_within_tolerance;
  j["pass"] = report.pass;
  return j;
}

double fitted_exponent(std::span<const double> sigmas, std::span<const double> residuals) {
  if (sigmas.size() != residuals.size() || sigmas.size() < 2) {
    throw ParameterError("fitted_exponent: need at least two (sigma, residual) pairs");
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const auto n = static_cast<double>(sigmas.size());
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const double lx = std::log(sigmas[i]);
    const double ly = std::log(std::abs(residuals[i]));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace jacreg
