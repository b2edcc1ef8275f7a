#include "jacreg/trainer.hpp"

#include "jacreg/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <optional>

namespace jacreg {

void TrainConfig::validate() const {
  objective.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("learning_rate must be positive");
  }
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  if (hidden.empty() || hidden.size() > 2) throw ParameterError("need 1 or 2 hidden layers");
  for (std::size_t h : hidden)
    if (h == 0) throw ParameterError("hidden layer sizes must be positive");
  if (hidden_activation != Activation::tanh && hidden_activation != Activation::rectifier) {
    throw ParameterError("hidden activation must be tanh or rectifier");
  }
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {

constexpr std::size_t kEvalChunk = 1000;

EigenRowMatrix hidden_forward(const MlpParams& params, const EigenRowMatrix& inputs,
                              std::size_t upto_layer) {
  EigenRowMatrix cur = inputs;
  for (std::size_t k = 0; k <= upto_layer; ++k) {
    const Layer& l = params.layer(k);
    EigenRowMatrix z = cur * l.weights.map().transpose();
    z.rowwise() += l.bias.map().transpose();
    const Activation act = l.activation;
    cur = z.unaryExpr([act](double v) { return activate(act, v); });
  }
  return cur;
}

Batch gather(const Split& split, std::span<const std::size_t> idx) {
  Batch b{Matrix(idx.size(), split.inputs.cols()), Matrix(idx.size(), split.targets.cols())};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(split.inputs.row(idx[i]).begin(), split.inputs.row(idx[i]).end(),
              b.inputs.row(i).begin());
    std::copy(split.targets.row(idx[i]).begin(), split.targets.row(idx[i]).end(),
              b.targets.row(i).begin());
  }
  return b;
}

}  // namespace

Matrix batch_outputs(const MlpParams& params, const Matrix& inputs) {
  if (inputs.cols() != params.input_dim()) {
    throw DimensionError("batch_outputs: inputs " + shape_string(inputs) + " but model expects " +
                         std::to_string(params.input_dim()) + " features");
  }
  Matrix out(inputs.rows(), params.output_dim());
  for (std::size_t begin = 0; begin < inputs.rows(); begin += kEvalChunk) {
    const std::size_t end = std::min(inputs.rows(), begin + kEvalChunk);
    const auto rows = static_cast<Eigen::Index>(end - begin);
    const EigenRowMatrix chunk = inputs.map().middleRows(static_cast<Eigen::Index>(begin), rows);
    out.map().middleRows(static_cast<Eigen::Index>(begin), rows) =
        hidden_forward(params, chunk, params.layer_count() - 1);
  }
  return out;
}

double classification_error(const MlpParams& params, const Split& split) {
  if (split.size() == 0) throw ParameterError("classification_error: empty split");
  const Matrix out = batch_outputs(params, split.inputs);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (argmax(out.row(i)) != argmax(split.targets.row(i))) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(split.size());
}

TrainResult train(const TrainConfig& config, const LabeledDataset& data,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.size() == 0 || data.valid.size() == 0) {
    throw ParameterError("train: dataset needs non-empty train and valid splits");
  }
  const auto start = std::chrono::steady_clock::now();
  RngStream init_rng(config.seed, 1);
  RngStream shuffle_rng(config.seed, 2);
  RngStream noise_rng(config.seed, 3);

  MlpParams params =
      MlpParams::initialize(data.input_dim(), config.hidden, data.output_dim(),
                            config.hidden_activation, config.output_activation, init_rng);
  TrainResult result{params, {}};
  result.trace.seed = config.seed;

  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;
  const bool track_test = config.track_test_error && data.test.size() > 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const Batch batch = gather(data.train, std::span(order).subspan(begin, end - begin));
      GradientResult g;
      try {
        g = objective_gradient(config.objective, params, batch, noise_rng);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what() + " at epoch " +
                                  std::to_string(epoch),
                              epoch);
      }
      result.trace.almost_everywhere_gradient |= g.almost_everywhere;
      const double w = static_cast<double>(end - begin) / static_cast<double>(n);
      rec.train.mse += w * g.loss.mse;
      rec.train.weight_decay += w * g.loss.weight_decay;
      rec.train.jacobian_penalty += w * g.loss.jacobian_penalty;
      rec.train.total += w * g.loss.total;
      apply_sgd_step(params, g.gradient, config.learning_rate);
    }
    if (!std::isfinite(rec.train.total) || !all_finite(params.layer(0).weights.span())) {
      throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch),
                            epoch);
    }
    rec.valid_error = classification_error(params, data.valid);
    if (track_test) rec.test_error = classification_error(params, data.test);
    result.trace.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (!result.trace.best_epoch || rec.valid_error < result.trace.best_valid_error) {
      result.trace.best_epoch = epoch;
      result.trace.best_valid_error = rec.valid_error;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.trace.stopped_early = true;
      break;
    }
  }
  result.trace.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<RobustnessPoint> robustness_curve(const MlpParams& params, const Split& split,
                                              const std::vector<double>& sigmas,
                                              std::size_t repeats, RngStream& rng) {
  if (repeats == 0) throw ParameterError("robustness_curve: repeats must be positive");
  for (double s : sigmas) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ParameterError("robustness_curve: sigma < 0");
  }
  const double clean = classification_error(params, split);
  const std::uint64_t base = rng.next_u64();

  // errors[s][r]
  std::vector<std::vector<double>> errors(sigmas.size(), std::vector<double>(repeats, clean));
  const std::size_t n = split.size();
  const std::size_t d = split.inputs.cols();
  for (std::size_t r = 0; r < repeats; ++r) {
    RngStream stream = rng.substream(base + r);
    Matrix unit(n, d);
    for (double& v : unit.span()) v = stream.gaussian();
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
      if (sigmas[s] == 0.0) continue;
      Split noisy{split.inputs, split.targets};
      noisy.inputs.map() += sigmas[s] * unit.map();
      errors[s][r] = classification_error(params, noisy);
    }
  }
  std::vector<RobustnessPoint> curve;
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    RobustnessPoint p;
    p.sigma = sigmas[s];
    if (sigmas[s] == 0.0) {
      p.mean_error = clean;
    } else {
      double mean = 0.0;
      for (double e : errors[s]) mean += e;
      mean /= static_cast<double>(repeats);
      double var = 0.0;
      for (double e : errors[s]) var += (e - mean) * (e - mean);
      p.mean_error = mean;
      if (repeats > 1) {
        p.stderr_error = std::sqrt(var / static_cast<double>(repeats - 1) /
                                   static_cast<double>(repeats));
      }
    }
    curve.push_back(p);
  }
  return curve;
}

std::vector<LayerHistogram> activation_histogram(const MlpParams& params, const Split& split,
                                                 std::size_t bins) {
  if (bins == 0) throw ParameterError("activation_histogram: bins must be positive");
  if (split.size() == 0) throw ParameterError("activation_histogram: empty split");
  std::vector<LayerHistogram> out;
  for (std::size_t k = 0; k + 1 < params.layer_count(); ++k) {
    LayerHistogram h;
    h.layer = k;
    std::vector<double> counts(bins, 0.0);
    const Activation act = params.layer(k).activation;
    // Activations are recomputed chunk by chunk to bound memory.
    std::vector<EigenRowMatrix> chunks;
    double max_act = 0.0;
    for (std::size_t begin = 0; begin < split.size(); begin += kEvalChunk) {
      const std::size_t end = std::min(split.size(), begin + kEvalChunk);
      const EigenRowMatrix rows = split.inputs.map().middleRows(
          static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
      chunks.push_back(hidden_forward(params, rows, k));
      max_act = std::max(max_act, chunks.back().maxCoeff());
    }
    if (act == Activation::rectifier) {
      h.lo = 0.0;
      h.hi = max_act > 0.0 ? max_act : 1.0;
    }
    const double width = (h.hi - h.lo) / static_cast<double>(bins);
    double total = 0.0;
    for (const auto& c : chunks) {
      for (Eigen::Index i = 0; i < c.size(); ++i) {
        const double v = c.data()[i];
        auto idx = static_cast<long long>(std::floor((v - h.lo) / width));
        idx = std::clamp<long long>(idx, 0, static_cast<long long>(bins) - 1);
        counts[static_cast<std::size_t>(idx)] += 1.0;
        total += 1.0;
      }
    }
    h.mass.resize(bins);
    for (std::size_t b = 0; b < bins; ++b) h.mass[b] = counts[b] / total;
    out.push_back(std::move(h));
  }
  return out;
}

double regime_mass(const LayerHistogram& hist, double saturation, double linear) {
  const std::size_t bins = hist.mass.size();
  const double width = (hist.hi - hist.lo) / static_cast<double>(bins);
  const double eps = 1e-9 * (hist.hi - hist.lo);
  double mass = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = hist.lo + width * static_cast<double>(b);
    const double hi = lo + width;
    const bool saturated = lo >= saturation - eps || hi <= -saturation + eps;
    const bool lin = lo >= -linear - eps && hi <= linear + eps;
    if (saturated || lin) mass += hist.mass[b];
  }
  return mass;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ParameterError("median of empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double AblationResult::median_test_error(Variant v) const {
  std::vector<double> errs;
  for (const auto& r : runs)
    if (r.variant == v) errs.push_back(r.test_error);
  return median(errs);
}

const AblationRun& AblationResult::run(Variant v, std::uint64_t seed) const {
  for (const auto& r : runs)
    if (r.variant == v && r.seed == seed) return r;
  throw ParameterError("ablation: no run for " + std::string(to_string(v)) + " seed " +
                       std::to_string(seed));
}

namespace {

AblationRun run_variant(const LabeledDataset& data, const AblationConfig& config, Variant v,
                        std::uint64_t seed, const VariantHyperparams& hp) {
  TrainConfig tc = config.base;
  tc.objective = objective_for(v, hp);
  tc.seed = seed;
  TrainResult r = train(tc, data);
  AblationRun run;
  run.variant = v;
  run.seed = seed;
  run.valid_error = r.trace.best_valid_error;
  run.best_epoch = r.trace.best_epoch.value_or(0);
  run.epochs_run = r.trace.epochs.size();
  run.test_error = data.test.size() > 0 ? classification_error(r.params, data.test) : 0.0;
  if (config.keep_models) run.model = std::move(r.params);
  return run;
}

}  // namespace

AblationResult ablation_grid(const LabeledDataset& data, const AblationConfig& config,
                             const RunCallback& on_run) {
  if (config.seeds.empty()) throw ParameterError("ablation: need at least one seed");
  if (config.variants.empty()) throw ParameterError("ablation: need at least one variant");
  AblationResult result;
  VariantHyperparams hp = config.hyper;

  // The winning search run doubles as the first-seed +Jacob run.
  std::optional<AblationRun> search_winner;
  if (!config.lambda_grid.empty()) {
    double best_err = 2.0;
    for (double lambda : config.lambda_grid) {
      VariantHyperparams trial = hp;
      trial.jacobian_lambda = lambda;
      AblationRun r = run_variant(data, config, Variant::jacobian, config.seeds.front(), trial);
      result.lambda_search.emplace_back(lambda, r.valid_error);
      if (r.valid_error < best_err) {
        best_err = r.valid_error;
        hp.jacobian_lambda = lambda;
        search_winner = std::move(r);
      }
    }
  }
  result.chosen_lambda = hp.jacobian_lambda;

  struct Job {
    Variant variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Variant v : config.variants)
    for (std::uint64_t s : config.seeds) jobs.push_back({v, s});
  result.runs.resize(jobs.size());

  const std::size_t workers = std::max<std::size_t>(1, config.workers);
  for (std::size_t begin = 0; begin < jobs.size(); begin += workers) {
    const std::size_t end = std::min(jobs.size(), begin + workers);
    std::vector<std::future<AblationRun>> pending;
    for (std::size_t j = begin; j < end; ++j) {
      if (search_winner && jobs[j].variant == Variant::jacobian &&
          jobs[j].seed == config.seeds.front()) {
        std::promise<AblationRun> done;
        done.set_value(*search_winner);
        pending.push_back(done.get_future());
        continue;
      }
      pending.push_back(std::async(workers == 1 ? std::launch::deferred : std::launch::async,
                                   [&, j] {
                                     return run_variant(data, config, jobs[j].variant,
                                                        jobs[j].seed, hp);
                                   }));
    }
    for (std::size_t j = begin; j < end; ++j) {
      result.runs[j] = pending[j - begin].get();
      if (on_run) on_run(result.runs[j]);
    }
  }
  return result;
}

}  // namespace jacreg
