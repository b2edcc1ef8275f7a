#include "jacreg/checkpoint.hpp"
#include "jacreg/dataset.hpp"
#include "jacreg/error.hpp"
#include "jacreg/mlp.hpp"
#include "jacreg/objectives.hpp"
#include "jacreg/taylor.hpp"
#include "jacreg/trainer.hpp"

#include "test_support.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace jacreg;
using jacreg::testing::max_rel_error;
using jacreg::testing::random_net;
using jacreg::testing::random_point;
using jacreg::testing::reference_fd_jacobian;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  json data = json::object();
};

struct Options {
  bool full = false;
  std::string mnist_dir;
  std::string out_dir;
  std::size_t epochs = 0;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool near_rectifier_kink(const MlpParams& p, const Vector& x) {
  const auto trace = forward(p, x).trace;
  for (std::size_t k = 0; k + 1 < trace.pre_activations.size(); ++k)
    for (double z : trace.pre_activations[k].span())
      if (std::abs(z) <= 1e-3) return true;
  return false;
}

// 1: analytic Jacobian against central differences of a loop-based forward pass.
Outcome jacobian_correctness() {
  double worst = 0;
  int tanh_pairs = 0, rect_pairs = 0;
  for (std::uint64_t s = 0; tanh_pairs + rect_pairs < 100; ++s) {
    const bool rect = s % 2 == 1;
    if ((rect ? rect_pairs : tanh_pairs) >= 50) continue;
    const std::size_t d = 2 + s % 7;
    const std::size_t m = 1 + s % 4;
    const std::vector<std::size_t> hidden =
        s % 3 == 0 ? std::vector<std::size_t>{3 + s % 9, 4} : std::vector<std::size_t>{4 + s % 13};
    const MlpParams p = random_net(1000 + s, d, hidden, m, rect ? Activation::rectifier : Activation::tanh,
                                   s % 4 < 2 ? Activation::sigmoid : Activation::identity);
    const Vector x = random_point(1000 + s, d);
    if (rect && near_rectifier_kink(p, x)) continue;
    worst = std::max(worst, max_rel_error(analytic_jacobian(p, x), reference_fd_jacobian(p, x, 1e-5)));
    ++(rect ? rect_pairs : tanh_pairs);
  }
  Outcome o;
  o.pass = worst < 1e-6;
  o.detail = "max relative error " + fmt(worst, 3) + " over 50 tanh + 50 rectifier pairs (bound 1e-6)";
  o.data = {{"max_relative_error", worst}};
  return o;
}

// 2: decomposed trace of the squared-error input Hessian against second differences.
Outcome mse_trace_identity() {
  double worst = 0;
  for (std::uint64_t s = 0; s < 25; ++s) {
    const std::size_t d = 1 + s % 6;
    const std::size_t m = 1 + s % 3;
    const std::vector<std::size_t> hidden =
        s % 4 == 3 ? std::vector<std::size_t>{5, 3} : std::vector<std::size_t>{2 + s % 7};
    const MlpParams p = random_net(2000 + s, d, hidden, m, Activation::tanh,
                                   s % 2 ? Activation::sigmoid : Activation::identity);
    const Vector x = random_point(2000 + s, d);
    Vector y(m);
    y[s % m] = 1.0;
    MlpMap map(p);
    const double analytic = analytic_trace_hessian_mse(map, x, y).total;
    const double fd = fd_trace_hessian_loss(LossKind::squared_error, map, x, y);
    worst = std::max(worst, std::abs(analytic - fd) / std::max(std::abs(fd), 1e-12));
  }
  Outcome o;
  o.pass = worst < 1e-4;
  o.detail = "max relative gap " + fmt(worst, 3) + " over 25 tanh nets with d <= 6 (bound 1e-4)";
  o.data = {{"max_relative_gap", worst}};
  return o;
}

MlpParams scalar_tanh_net(std::uint64_t seed) {
  return random_net(seed, 3, {5}, 1, Activation::tanh, Activation::identity);
}

McOptions control_variate() {
  McOptions o;
  o.estimator = Estimator::control_variate;
  return o;
}

// 3: noisy squared error against clean loss plus the trace-Hessian term.
Outcome noisy_loss_equivalence() {
  const std::vector<double> sigmas = {0.01, 0.03, 0.1};
  const std::size_t n = 1000000;
  bool pass = true;
  double worst_exponent_gap = 0;
  json nets = json::array();
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const MlpParams p = scalar_tanh_net(s);
    MlpMap map(p);
    const Vector x = random_point(3000 + s, 3, 0.6);
    const Vector y{0.5};
    const ScalarField loss = squared_error_field(map, y);
    const double clean = loss(x.span());
    const double trace = analytic_trace_hessian_mse(map, x, y).total;
    std::vector<double> residuals;
    json rows = json::array();
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      const double sigma = sigmas[i];
      RngStream rng(s, 100 + i);
      const Estimate e = mc_noisy_loss(LossKind::squared_error, map, x, y, sigma, n, rng, control_variate());
      const double residual = e.mean - clean - 0.5 * sigma * sigma * trace;
      const double isserlis = fourth_order_terms(loss, x, sigma).isserlis_full;
      const double bound = std::max(4 * e.stderr_mean, 2 * std::abs(isserlis));
      const bool ok = std::abs(residual) <= bound;
      pass = pass && ok;
      residuals.push_back(residual);
      rows.push_back({{"sigma", sigma}, {"residual", residual}, {"stderr", e.stderr_mean},
                      {"isserlis_full", isserlis}, {"bound", bound}, {"pass", ok}});
    }
    const double exponent = fitted_exponent(sigmas, residuals);
    worst_exponent_gap = std::max(worst_exponent_gap, std::abs(exponent - 4.0));
    pass = pass && std::abs(exponent - 4.0) <= 0.5;
    nets.push_back({{"seed", s}, {"fitted_exponent", exponent}, {"rows", rows}});
  }
  Outcome o;
  o.pass = pass;
  o.detail = "5 scalar tanh nets, sigma {0.01, 0.03, 0.1}, N = 1e6; worst |exponent - 4| = " +
             fmt(worst_exponent_gap, 3);
  o.data = {{"nets", nets}};
  return o;
}

// 4: noisy Jacobian penalty against the Hessian-norm and third-order terms.
Outcome noisy_penalty_equivalence() {
  const double sigma = 0.05;
  const std::size_t n = 1000000;
  bool pass = true;
  double worst_decomp = 0;
  json nets = json::array();
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const std::size_t m = s % 2 ? 1 : 2;
    const MlpParams p = random_net(s, 3, {5}, m, Activation::tanh, Activation::identity);
    MlpMap map(p);
    const Vector x = random_point(4000 + s, 3, 0.6);
    const ScalarField penalty = jacobian_penalty_field(map);
    const double clean = penalty(x.span());
    const PenaltyTraceDecomposition dec = analytic_trace_hessian_jacpenalty(map, x);
    const double fd = fd_trace_hessian(penalty, x);
    const double decomp_gap = std::abs(dec.total - fd) / std::max(std::abs(fd), 1e-12);
    worst_decomp = std::max(worst_decomp, decomp_gap);

    RngStream rng(s, 200);
    const Estimate e = mc_noisy_jacpenalty(map, x, sigma, n, rng, control_variate());
    // sigma^2 (||H||^2 + tr(T J)) = (sigma^2 / 2) * (hess_sq_term + third_order_term)
    const double predicted = clean + 0.5 * sigma * sigma * (dec.hess_sq_term + dec.third_order_term);
    const FourthOrderTerms fourth = fourth_order_terms(penalty, x, sigma);
    const double slack = 2 * std::abs(fourth.isserlis_full) + fourth.isserlis_full_error;
    const double bound = std::max(4 * e.stderr_mean, slack);
    const bool ok = std::abs(e.mean - predicted) <= bound && decomp_gap < 1e-3;
    pass = pass && ok;
    nets.push_back({{"seed", s}, {"outputs", m}, {"mc_mean", e.mean}, {"stderr", e.stderr_mean},
                    {"predicted", predicted}, {"bound", bound}, {"decomposition_gap", decomp_gap},
                    {"pass", ok}});
  }
  Outcome o;
  o.pass = pass;
  o.detail = "5 tanh nets, sigma 0.05, N = 1e6; worst decomposition gap " + fmt(worst_decomp, 3) +
             " (bound 1e-3)";
  o.data = {{"nets", nets}};
  return o;
}

// 5: L(x) = x^4 at x = 0, i.e. F(x) = x^2 against target 0.
Outcome quartic_adjudication() {
  const double sigma = 0.2;
  const double s4 = std::pow(sigma, 4);
  const QuadraticMap square(0.0, Vector{0.0}, Matrix{{2.0}});
  const Vector x{0.0}, y{0.0};
  const ScalarField loss = squared_error_field(square, y);
  RngStream rng(5, 0);
  const Estimate e = mc_expectation(loss, x, sigma, 1000000, rng);
  const FourthOrderTerms t = fourth_order_terms(loss, x, sigma);
  RngStream report_rng(5, 1);
  const TaylorReport report = build_taylor_report(square, 0, x, y, sigma, 1000000, report_rng);

  const bool mc_ok = std::abs(e.mean - 3 * s4) <= 4 * e.stderr_mean;
  const bool iss_ok = std::abs(t.isserlis_full - 3 * s4) <= 1e-9 * s4;
  const bool diag_ok = std::abs(t.paper_diagonal - s4) <= 1e-9 * s4;
  const bool report_ok = report.fourth_order_match == "isserlis-full" &&
                         report.term("fourth-isserlis", "mc").pass;
  Outcome o;
  o.pass = mc_ok && iss_ok && diag_ok && report_ok;
  o.detail = "MC " + fmt(e.mean / s4, 6) + " sigma^4 (+- " + fmt(e.stderr_mean / s4, 2) +
             "), isserlis-full " + fmt(t.isserlis_full / s4, 12) + " sigma^4, diagonal " +
             fmt(t.paper_diagonal / s4, 12) + " sigma^4, report match " + report.fourth_order_match;
  o.data = {{"mc_mean", e.mean}, {"stderr", e.stderr_mean}, {"isserlis_full", t.isserlis_full},
            {"paper_diagonal", t.paper_diagonal}, {"report", to_json(report)}};
  return o;
}

double fd_parameter(const ObjectiveSpec& spec, MlpParams p, const Batch& b, const CorruptedBatch& c,
                    std::size_t index, double h) {
  const double base = p.parameter(index);
  auto d = [&](double step) {
    p.set_parameter(index, base + step);
    const double fp = objective_value_on(spec, p, b, c).total;
    p.set_parameter(index, base - step);
    const double fm = objective_value_on(spec, p, b, c).total;
    p.set_parameter(index, base);
    return (fp - fm) / (2 * step);
  };
  return (4 * d(h / 2) - d(h)) / 3;
}

// 6: full +N+J gradient against frozen-noise central differences.
Outcome gradient_check() {
  double worst = 0;
  std::size_t entries = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    VariantHyperparams hp;
    hp.jacobian_lambda = 0.05 + 0.1 * static_cast<double>(s % 5);
    hp.input_noise = 0.05 + 0.05 * static_cast<double>(s % 3);
    hp.penalty_noise = 0.2 - 0.05 * static_cast<double>(s % 3);
    const ObjectiveSpec spec = objective_for(Variant::noise_jacobian, hp);
    const std::size_t d = 2 + s % 5;
    const std::size_t m = 1 + s % 3;
    const std::vector<std::size_t> hidden =
        s % 3 == 2 ? std::vector<std::size_t>{5, 4} : std::vector<std::size_t>{3 + s % 6};
    const MlpParams p = random_net(6000 + s, d, hidden, m, Activation::tanh,
                                   s % 2 ? Activation::sigmoid : Activation::identity);
    RngStream data_rng(6000 + s, 5);
    Batch b{Matrix(3, d), Matrix(3, m)};
    for (double& v : b.inputs.span()) v = data_rng.uniform();
    for (std::size_t i = 0; i < 3; ++i) b.targets(i, data_rng.uniform_index(m)) = 1.0;
    RngStream noise_rng(6000 + s, 9);
    const CorruptedBatch c = draw_corruption(spec, b, noise_rng);
    const GradientResult g = objective_gradient_on(spec, p, b, c);
    for (std::size_t k = 0; k < p.parameter_count(); ++k) {
      const double a = g.gradient.parameter(k);
      const double f = fd_parameter(spec, p, b, c, k, 1e-3);
      if (std::max(std::abs(a), std::abs(f)) <= 1e-8) continue;
      worst = std::max(worst, std::abs(a - f) / std::max(std::abs(a), std::abs(f)));
      ++entries;
    }
  }
  Outcome o;
  o.pass = worst < 1e-5;
  o.detail = "max relative error " + fmt(worst, 3) + " over " + std::to_string(entries) +
             " gradient entries in 50 +N+J configurations (bound 1e-5)";
  o.data = {{"max_relative_error", worst}, {"entries", entries}};
  return o;
}

struct MnistStudy {
  std::optional<AblationResult> ablation;
  std::string error;
  double seconds = 0;
  std::size_t train_size = 0;
  std::size_t epochs = 0;
  LabeledDataset data;
};

AblationConfig mnist_ablation_config(const Options& opt) {
  AblationConfig c;
  c.base.hidden = {400};
  c.base.hidden_activation = Activation::tanh;
  c.base.output_activation = Activation::sigmoid;
  c.base.learning_rate = 0.1;
  c.base.batch_size = 20;
  c.base.max_epochs = opt.epochs > 0 ? opt.epochs : (opt.full ? 40 : 16);
  c.base.patience = 20;
  c.base.track_test_error = false;
  c.seeds = {1, 2, 3};
  if (opt.full) {
    c.variants = {Variant::mlp, Variant::l2, Variant::noise, Variant::jacobian, Variant::noise_jacobian};
    c.lambda_grid = {0.001, 0.01, 0.1};
  } else {
    // CI scale: the compared variants only, lambda fixed at the grid value the search picks.
    c.variants = {Variant::mlp, Variant::noise, Variant::jacobian, Variant::noise_jacobian};
    c.hyper.jacobian_lambda = 0.1;
  }
  c.keep_models = true;
  return c;
}

MnistStudy& mnist_study(const Options& opt) {
  static std::optional<MnistStudy> study;
  if (study) return *study;
  study.emplace();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    LabeledDataset data = load_mnist(opt.mnist_dir);
    if (!opt.full) data = subset_train(data, 10000);
    study->train_size = data.train.size();
    const AblationConfig config = mnist_ablation_config(opt);
    study->epochs = config.base.max_epochs;
    study->ablation = ablation_grid(data, config, [&](const AblationRun& r) {
      std::cerr << "  " << to_string(r.variant) << " seed " << r.seed << ": valid " << r.valid_error
                << " test " << r.test_error << " (best epoch " << r.best_epoch << ", "
                << fmt(seconds_since(t0), 4) << " s)\n";
    });
    study->data = std::move(data);
  } catch (const std::exception& e) {
    study->error = e.what();
  }
  study->seconds = seconds_since(t0);
  return *study;
}

double pct(double v) { return 100.0 * v; }

// 7: ablation ordering on MNIST.
Outcome ablation_ordering(const Options& opt) {
  MnistStudy& st = mnist_study(opt);
  Outcome o;
  if (!st.ablation) {
    o.detail = "MNIST study failed: " + st.error;
    return o;
  }
  const AblationResult& r = *st.ablation;
  const double mlp = r.median_test_error(Variant::mlp);
  const double nj = r.median_test_error(Variant::noise_jacobian);
  const double margin_required = opt.full ? 0.002 : 0.003;
  const double time_limit = opt.full ? 6 * 3600.0 : 1200.0;
  bool each_ok = true;
  json medians = json::object();
  std::string table;
  for (Variant v : {Variant::mlp, Variant::l2, Variant::noise, Variant::jacobian, Variant::noise_jacobian}) {
    if (std::none_of(r.runs.begin(), r.runs.end(), [&](const AblationRun& x) { return x.variant == v; }))
      continue;
    const double m = r.median_test_error(v);
    medians[std::string(to_string(v))] = m;
    table += std::string(table.empty() ? "" : ", ") + std::string(to_string(v)) + " " + fmt(pct(m), 4) + "%";
    if (v == Variant::noise || v == Variant::jacobian || v == Variant::noise_jacobian) each_ok = each_ok && m <= mlp;
  }
  const bool margin_ok = mlp - nj >= margin_required;
  const bool time_ok = st.seconds < time_limit;
  o.pass = margin_ok && each_ok && time_ok;
  o.detail = std::string(opt.full ? "full" : "CI-scale") + " (" + std::to_string(st.train_size) +
             " train, " + std::to_string(st.epochs) + " epochs, lambda " + fmt(r.chosen_lambda) +
             "): medians " + table + "; margin " + fmt(pct(mlp - nj), 3) + " points (need " +
             fmt(pct(margin_required), 2) + "); " + fmt(st.seconds, 4) + " s (limit " +
             fmt(time_limit, 5) + ")";
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"variant", to_string(run.variant)}, {"seed", run.seed}, {"valid_error", run.valid_error},
                    {"test_error", run.test_error}, {"best_epoch", run.best_epoch},
                    {"epochs_run", run.epochs_run}});
  }
  json search = json::array();
  for (const auto& [lambda, err] : r.lambda_search) search.push_back({{"lambda", lambda}, {"valid_error", err}});
  o.data = {{"medians", medians}, {"runs", runs}, {"lambda_search", search},
            {"chosen_lambda", r.chosen_lambda}, {"seconds", st.seconds}, {"train_size", st.train_size},
            {"epochs", st.epochs}};
  return o;
}

// 8: error increase under test corruption sigma = 0.3.
Outcome robustness_property(const Options& opt) {
  MnistStudy& st = mnist_study(opt);
  Outcome o;
  if (!st.ablation) {
    o.detail = "MNIST study failed: " + st.error;
    return o;
  }
  auto increases = [&](Variant v) {
    std::vector<double> out;
    for (std::uint64_t seed : {1, 2, 3}) {
      RngStream rng(seed, 800);
      const auto curve = robustness_curve(*st.ablation->run(v, seed).model, st.data.test, {0.0, 0.3}, 10, rng);
      out.push_back(curve[1].mean_error - curve[0].mean_error);
    }
    return out;
  };
  const auto mlp = increases(Variant::mlp);
  const auto nj = increases(Variant::noise_jacobian);
  const double mlp_med = median(mlp), nj_med = median(nj);
  o.pass = nj_med < mlp_med;
  o.detail = "median error increase at sigma 0.3: MLP+N+J " + fmt(pct(nj_med), 4) + " points vs MLP " +
             fmt(pct(mlp_med), 4) + " points (3 seeds, 10 repeats)";
  o.data = {{"mlp_increase", mlp}, {"noise_jacobian_increase", nj}};
  return o;
}

// 9: hidden-activation histograms.
Outcome histogram_property(const Options& opt) {
  MnistStudy& st = mnist_study(opt);
  Outcome o;
  if (!st.ablation) {
    o.detail = "MNIST study failed: " + st.error;
    return o;
  }
  double worst_norm = 0;
  auto regime = [&](Variant v) {
    std::vector<double> out;
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto h = activation_histogram(*st.ablation->run(v, seed).model, st.data.test, 20);
      const double total = std::accumulate(h[0].mass.begin(), h[0].mass.end(), 0.0);
      worst_norm = std::max(worst_norm, std::abs(total - 1.0));
      out.push_back(regime_mass(h[0]));
    }
    return median(out);
  };
  const double mlp = regime(Variant::mlp);
  const double jac = regime(Variant::jacobian);
  const double nj = regime(Variant::noise_jacobian);
  const bool norm_ok = worst_norm <= 1e-12;
  o.pass = norm_ok && (jac > mlp || nj > mlp);
  o.detail = "median saturation+linear mass: MLP " + fmt(mlp, 4) + ", MLP+Jacob " + fmt(jac, 4) +
             ", MLP+N+J " + fmt(nj, 4) + "; normalization error " + fmt(worst_norm, 2);
  o.data = {{"mlp", mlp}, {"jacobian", jac}, {"noise_jacobian", nj}, {"normalization_error", worst_norm}};
  return o;
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(JACREG_TOOL) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string without_timing(const fs::path& p) {
  const std::string text = slurp(p);
  if (p.filename() != "trace.json") return text;
  json doc = json::parse(text);
  doc.erase("timing");
  return doc.dump();
}

// 10: every command run twice in separate processes gives identical artifacts.
Outcome determinism() {
  jacreg::testing::TempDir dir;
  const json moons = {{"kind", "two-moons"}, {"n", 300}, {"noise", 0.1}, {"seed", 4}};
  save_checkpoint(random_net(10, 2, {8}, 2), dir / "model.json");
  const std::vector<std::pair<std::string, json>> commands = {
      {"train", {{"dataset", moons}, {"model", {{"hidden", {12}}}}, {"objective", {{"variant", "MLP+N+J"}}},
                 {"training", {{"learning_rate", 0.1}, {"max_epochs", 4}}}, {"seed", 7}}},
      {"verify-taylor", {{"model", {{"kind", "random"}}}, {"x", {0.2, -0.1, 0.4}}, {"y", {0.5}},
                         {"samples", 100000}, {"seed", 3}}},
      {"ablation", {{"dataset", moons}, {"model", {{"hidden", {6}}}},
                    {"training", {{"learning_rate", 0.1}, {"max_epochs", 2}}}, {"seeds", {1, 2}},
                    {"lambda_grid", {0.01, 0.1}}, {"save_models", true}}},
      {"robustness", {{"dataset", moons}, {"checkpoint", (dir / "model.json").string()},
                      {"sigmas", {0.0, 0.1, 0.3}}, {"repeats", 5}, {"seed", 2}}},
      {"histogram", {{"dataset", moons}, {"checkpoint", (dir / "model.json").string()}, {"bins", 15}}}};
  bool pass = true;
  std::size_t compared = 0;
  std::string failures;
  for (const auto& [name, cfg] : commands) {
    const fs::path cfg_path = dir / (name + ".json");
    std::ofstream(cfg_path) << cfg.dump(1);
    std::vector<std::vector<std::pair<std::string, std::string>>> outputs;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = dir / (name + "_" + std::to_string(rep));
      const int code = run_tool(name + " --config " + cfg_path.string() + " --out " + out.string() + " --workers 1");
      if (code != 0) {
        pass = false;
        failures += " " + name + "(exit " + std::to_string(code) + ")";
      }
      std::vector<std::pair<std::string, std::string>> files;
      if (fs::exists(out)) {
        for (const auto& e : fs::recursive_directory_iterator(out)) {
          if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), out).string(), without_timing(e.path()));
        }
      }
      std::sort(files.begin(), files.end());
      outputs.push_back(std::move(files));
    }
    if (outputs[0].empty() || outputs[0] != outputs[1]) {
      pass = false;
      failures += " " + name;
    }
    compared += outputs[0].size();
  }
  Outcome o;
  o.pass = pass;
  o.detail = "5 commands run twice in fresh processes; " + std::to_string(compared) +
             " artifacts compared" + (failures.empty() ? ", all bit-identical" : "; mismatches:" + failures);
  o.data = {{"artifacts", compared}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks 1-10; prints one PASS/FAIL line per criterion", "acceptance"};
  Options opt;
#ifdef JACREG_MNIST_DIR
  opt.mnist_dir = JACREG_MNIST_DIR;
#endif
  if (const char* env = std::getenv("JACREG_DATA_ROOT"); env && *env) opt.mnist_dir = env;
  std::vector<int> only;
  app.add_flag("--full", opt.full, "Run criterion 7 on the full 50k/10k/10k protocol");
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--mnist", opt.mnist_dir, "Directory with the MNIST IDX files");
  app.add_option("--epochs", opt.epochs, "Epoch budget for the MNIST study");
  app.add_option("--out", opt.out_dir, "Write acceptance_results.json here");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"jacobian-correctness", jacobian_correctness},
      {"mse-trace-identity", mse_trace_identity},
      {"noisy-loss-equivalence", noisy_loss_equivalence},
      {"noisy-penalty-equivalence", noisy_penalty_equivalence},
      {"fourth-order-adjudication", quartic_adjudication},
      {"objective-gradients", gradient_check},
      {"ablation-ordering", [&] { return ablation_ordering(opt); }},
      {"robustness-curve", [&] { return robustness_property(opt); }},
      {"activation-histograms", [&] { return histogram_property(opt); }},
      {"determinism", determinism}};
  const std::vector<double> limits = {10, 30, 300, 300, 60, 60, 0, 0, 0, 0};
  const std::set<int> selected(only.begin(), only.end());

  bool all = true;
  json results = json::array();
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = seconds_since(t0);
    if (limits[i] > 0 && secs >= limits[i]) {
      o.pass = false;
      o.detail += "; runtime " + fmt(secs, 3) + " s exceeds " + fmt(limits[i]) + " s";
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail
              << " [" << fmt(secs, 3) << " s]" << std::endl;
    results.push_back({{"criterion", id}, {"name", criteria[i].first}, {"pass", o.pass},
                       {"detail", o.detail}, {"seconds", secs}, {"data", o.data}});
  }
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    std::ofstream(fs::path(opt.out_dir) / "acceptance_results.json") << json{{"results", results}}.dump(1) << "\n";
  }
  return all ? 0 : 1;
}
