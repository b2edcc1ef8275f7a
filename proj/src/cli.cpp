#include "jacreg/cli.hpp"

#include "jacreg/checkpoint.hpp"
#include "jacreg/config.hpp"
#include "jacreg/error.hpp"
#include "jacreg/taylor.hpp"
#include "jacreg/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <unistd.h>

namespace jacreg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> workers;
  std::optional<std::string> checkpoint;
  bool verbose = false;
};

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string variant_slug(Variant v) {
  std::string s(to_string(v));
  for (char& c : s) c = c == '+' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Files of one command, committed together.
class Artifacts {
 public:
  void add(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }

  std::vector<fs::path> commit(const fs::path& dir) const {
    std::vector<std::pair<fs::path, fs::path>> staged;
    const std::string suffix = ".tmp." + std::to_string(::getpid());
    try {
      for (const auto& [name, content] : files_) {
        const fs::path target = dir / name;
        fs::create_directories(target.parent_path());
        fs::path tmp = target;
        tmp += suffix;
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write artifact", tmp.string());
        staged.emplace_back(tmp, target);
        f << content;
        f.close();
        if (!f) throw IoError("failed writing artifact", tmp.string());
      }
    } catch (...) {
      std::error_code ec;
      for (const auto& [tmp, target] : staged) fs::remove(tmp, ec);
      throw;
    }
    std::vector<fs::path> written;
    for (const auto& [tmp, target] : staged) {
      fs::rename(tmp, target);
      written.push_back(target);
    }
    return written;
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

struct Context {
  Context(std::string name, const json& doc) : command(std::move(name)), config(doc), reader(doc, "") {}

  std::string command;
  const json& config;
  ConfigReader reader;
  std::uint64_t seed = 0;
  bool seed_from_flag = false;
  std::size_t workers = 1;
  fs::path out_dir;
  bool verbose = false;
  std::ostream* log = nullptr;
  std::uint64_t hash = 0;

  json meta() const {
    return {{"tool", "jacreg"},
            {"version", kVersion},
            {"command", command},
            {"config_hash", hex64(hash)},
            {"seed", seed},
            {"workers", workers}};
  }

  std::string csv_header() const {
    std::ostringstream s;
    s << "# jacreg " << kVersion << " " << command << "\n";
    s << "# config_hash=" << hex64(hash) << " seed=" << seed << " workers=" << workers
      << "\n";
    return s.str();
  }

  void note(const std::string& line) const {
    if (verbose && log) *log << line << std::endl;
  }
};

json read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file", path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

/// Applies the flag overrides to the config document itself, so that the
/// recorded config hash covers the effective settings.
json effective_config(const Overrides& o) {
  json doc = read_config_file(o.config_path);
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  if (o.seed) doc["seed"] = *o.seed;
  if (o.workers) doc["workers"] = *o.workers;
  if (o.out_dir) doc["output_dir"] = *o.out_dir;
  if (o.checkpoint) doc["checkpoint"] = *o.checkpoint;
  return doc;
}

void init_context(Context& ctx, const Overrides& o, std::ostream& log) {
  ctx.seed_from_flag = o.seed.has_value();
  ctx.seed = ctx.reader.integer("seed", 0);
  ctx.workers = ctx.reader.integer("workers", 1);
  if (ctx.workers == 0) throw ConfigError("workers: must be >= 1");
  if (!ctx.reader.has("output_dir")) throw ConfigError("output_dir: not given (use --out)");
  ctx.out_dir = ctx.reader.text("output_dir");
  // The output location is not part of the run's identity.
  json hashed = ctx.config;
  hashed.erase("output_dir");
  ctx.hash = config_hash(hashed);
  ctx.verbose = o.verbose;
  ctx.log = &log;
}

json loss_json(const LossBreakdown& l) {
  return {{"mse", l.mse}, {"weight_decay", l.weight_decay}, {"jacobian_penalty", l.jacobian_penalty}, {"total", l.total}};
}

std::string trace_csv(const Context& ctx, const TrainingTrace& trace) {
  std::ostringstream s;
  s << ctx.csv_header();
  s << "epoch,train_total,train_mse,train_weight_decay,train_jacobian_penalty,valid_error,test_error\n";
  for (const auto& e : trace.epochs) {
    s << e.epoch << "," << num(e.train.total) << "," << num(e.train.mse) << ","
      << num(e.train.weight_decay) << "," << num(e.train.jacobian_penalty) << ","
      << num(e.valid_error) << "," << (e.test_error ? num(*e.test_error) : "") << "\n";
  }
  return s.str();
}

json trace_json(const Context& ctx, const TrainingTrace& trace) {
  json epochs = json::array();
  for (const auto& e : trace.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train", loss_json(e.train)},
                      {"valid_error", e.valid_error},
                      {"test_error", e.test_error ? json(*e.test_error) : json()}});
  }
  return {{"meta", ctx.meta()},
          {"epochs", epochs},
          {"best_epoch", trace.best_epoch ? json(*trace.best_epoch) : json()},
          {"best_valid_error", trace.best_valid_error},
          {"stopped_early", trace.stopped_early},
          {"almost_everywhere_gradient", trace.almost_everywhere_gradient},
          {"timing", {{"wall_seconds", trace.wall_time_seconds}}}};
}

TrainConfig read_train_config(ConfigReader& r, std::uint64_t seed, bool with_objective) {
  TrainConfig tc;
  tc.seed = seed;
  const ModelShape shape = r.has("model") ? read_model_shape(r.object("model")) : ModelShape{};
  tc.hidden = shape.hidden;
  tc.hidden_activation = shape.hidden_activation;
  tc.output_activation = shape.output_activation;
  if (with_objective && r.has("objective")) tc.objective = read_objective(r.object("objective"));
  if (r.has("training")) read_training(r.object("training"), tc);
  try {
    tc.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  return tc;
}

int cmd_train(Context& ctx, std::ostream& out) {
  ConfigReader& r = ctx.reader;
  const LabeledDataset data = load_dataset(r.object("dataset"));
  const TrainConfig tc = read_train_config(r, ctx.seed, true);
  r.finish();

  const TrainResult result = train(tc, data, [&](const EpochRecord& e) {
    ctx.note("epoch " + std::to_string(e.epoch) + " loss " + num(e.train.total) + " valid " +
             num(e.valid_error));
  });

  Artifacts art;
  json ckpt = checkpoint_to_json(result.params);
  ckpt["meta"] = ctx.meta();
  art.add("model.json", ckpt.dump(1) + "\n");
  art.add("trace.csv", trace_csv(ctx, result.trace));
  art.add("trace.json", trace_json(ctx, result.trace).dump(1) + "\n");
  for (const auto& p : art.commit(ctx.out_dir)) out << p.string() << "\n";
  return kExitOk;
}

int cmd_verify_taylor(Context& ctx, std::ostream& out, std::ostream& err) {
  ConfigReader& r = ctx.reader;
  const MlpParams params = read_verification_model(r.object("model"));
  const Vector x(r.numbers("x"));
  const Vector y(r.numbers("y"));
  const double sigma = r.number("sigma", 0.05);
  const auto samples = r.integer("samples", 1000000);
  const std::uint64_t stream = r.integer("stream", 0);
  r.finish();
  if (x.size() != params.input_dim()) throw ConfigError("x: length must equal the model input dimension");
  if (y.size() != params.output_dim()) throw ConfigError("y: length must equal the model output dimension");

  MlpMap map(params);
  RngStream rng(ctx.seed, stream);
  ReportOptions opts;
  opts.workers = ctx.workers;
  const TaylorReport report = build_taylor_report(map, fingerprint(params), x, y, sigma, samples, rng, opts);

  json doc = to_json(report);
  doc["meta"] = ctx.meta();
  Artifacts art;
  art.add("taylor_report.json", doc.dump(1) + "\n");
  const auto written = art.commit(ctx.out_dir);
  for (const auto& p : written) out << p.string() << "\n";

  for (const auto& t : report.terms) {
    if (!t.analytic) continue;
    out << (t.pass ? "pass " : (t.informational ? "info " : "FAIL ")) << t.label << "/" << t.method
        << " analytic=" << num(*t.analytic) << " oracle=" << num(*t.oracle)
        << " tolerance=" << num(*t.tolerance) << "\n";
  }
  if (report.pass) return kExitOk;

  std::string failed;
  for (const auto& t : report.terms) {
    if (t.informational || t.pass) continue;
    failed += (failed.empty() ? "" : ", ") + t.label + "/" + t.method;
  }
  json e = {{"error",
             {{"kind", "verification_failed"},
              {"message", "reconciliation failed: " + failed},
              {"path", written.front().string()}}}};
  err << e.dump() << std::endl;
  return kExitVerificationFailed;
}

int cmd_ablation(Context& ctx, std::ostream& out) {
  ConfigReader& r = ctx.reader;
  const LabeledDataset data = load_dataset(r.object("dataset"));
  AblationConfig ac;
  ac.base = read_train_config(r, 0, false);
  if (r.has("hyper")) ac.hyper = read_hyperparams(r.object("hyper"));
  ac.seeds = r.integers("seeds", ac.seeds);
  if (ctx.seed_from_flag) ac.seeds = {ctx.seed};
  std::vector<std::string> names;
  for (Variant v : ac.variants) names.emplace_back(to_string(v));
  names = r.texts("variants", names);
  ac.variants.clear();
  for (const auto& n : names) {
    try {
      ac.variants.push_back(parse_variant(n));
    } catch (const Error&) {
      throw ConfigError("variants: unknown variant '" + n + "'");
    }
  }
  ac.lambda_grid = r.numbers("lambda_grid", {});
  const bool save_models = r.boolean("save_models", false);
  r.finish();
  ac.workers = ctx.workers;
  ac.keep_models = save_models;

  const AblationResult res = ablation_grid(data, ac, [&](const AblationRun& run) {
    ctx.note(std::string(to_string(run.variant)) + " seed " + std::to_string(run.seed) + " test " +
             num(run.test_error));
  });

  std::ostringstream csv;
  csv << ctx.csv_header() << "# chosen_lambda=" << num(res.chosen_lambda) << "\n";
  csv << "variant,seed,valid_error,test_error,best_epoch,epochs_run\n";
  json runs = json::array();
  Artifacts art;
  for (const auto& run : res.runs) {
    csv << to_string(run.variant) << "," << run.seed << "," << num(run.valid_error) << ","
        << num(run.test_error) << "," << run.best_epoch << "," << run.epochs_run << "\n";
    runs.push_back({{"variant", std::string(to_string(run.variant))},
                    {"seed", run.seed},
                    {"valid_error", run.valid_error},
                    {"test_error", run.test_error},
                    {"best_epoch", run.best_epoch},
                    {"epochs_run", run.epochs_run}});
    if (save_models && run.model) {
      json ckpt = checkpoint_to_json(*run.model);
      ckpt["meta"] = ctx.meta();
      ckpt["meta"]["variant"] = std::string(to_string(run.variant));
      ckpt["meta"]["run_seed"] = run.seed;
      art.add("models/" + variant_slug(run.variant) + "_seed" + std::to_string(run.seed) + ".json",
              ckpt.dump(1) + "\n");
    }
  }
  json medians = json::object();
  for (Variant v : ac.variants) medians[std::string(to_string(v))] = res.median_test_error(v);
  json search = json::array();
  for (const auto& [lambda, verr] : res.lambda_search) search.push_back({{"lambda", lambda}, {"valid_error", verr}});
  json doc = {{"meta", ctx.meta()},
              {"runs", runs},
              {"median_test_error", medians},
              {"chosen_lambda", res.chosen_lambda},
              {"lambda_search", search}};
  art.add("ablation.csv", csv.str());
  art.add("ablation.json", doc.dump(1) + "\n");
  for (const auto& p : art.commit(ctx.out_dir)) out << p.string() << "\n";
  return kExitOk;
}

const Split& pick_split(const LabeledDataset& data, ConfigReader& r) {
  const std::string name = r.text("split", "test");
  try {
    return data.split(parse_split(name));
  } catch (const Error&) {
    throw ConfigError("split: unknown split '" + name + "'");
  }
}

int cmd_robustness(Context& ctx, std::ostream& out) {
  ConfigReader& r = ctx.reader;
  const MlpParams params = load_checkpoint(r.text("checkpoint"));
  const LabeledDataset data = load_dataset(r.object("dataset"));
  const Split& split = pick_split(data, r);
  const std::vector<double> sigmas = r.numbers("sigmas");
  const auto repeats = r.integer("repeats", 10);
  r.finish();
  if (sigmas.empty()) throw ConfigError("sigmas: must not be empty");
  for (double s : sigmas)
    if (s < 0.0) throw ConfigError("sigmas: values must be >= 0");
  if (repeats == 0) throw ConfigError("repeats: must be >= 1");

  RngStream rng(ctx.seed, 0);
  const auto curve = robustness_curve(params, split, sigmas, repeats, rng);

  std::ostringstream csv;
  csv << ctx.csv_header() << "sigma,mean_error,stderr_error\n";
  json points = json::array();
  for (const auto& p : curve) {
    csv << num(p.sigma) << "," << num(p.mean_error) << "," << num(p.stderr_error) << "\n";
    points.push_back({{"sigma", p.sigma}, {"mean_error", p.mean_error}, {"stderr_error", p.stderr_error}});
  }
  json doc = {{"meta", ctx.meta()},
              {"model_fingerprint", hex64(fingerprint(params))},
              {"repeats", repeats},
              {"points", points}};
  Artifacts art;
  art.add("robustness.csv", csv.str());
  art.add("robustness.json", doc.dump(1) + "\n");
  for (const auto& p : art.commit(ctx.out_dir)) out << p.string() << "\n";
  return kExitOk;
}

int cmd_histogram(Context& ctx, std::ostream& out) {
  ConfigReader& r = ctx.reader;
  const MlpParams params = load_checkpoint(r.text("checkpoint"));
  const LabeledDataset data = load_dataset(r.object("dataset"));
  const Split& split = pick_split(data, r);
  const auto bins = r.integer("bins", 20);
  const double saturation = r.number("saturation", 0.9);
  const double linear = r.number("linear", 0.1);
  r.finish();
  if (bins == 0) throw ConfigError("bins: must be >= 1");

  const auto hists = activation_histogram(params, split, bins);
  std::ostringstream csv;
  csv << ctx.csv_header() << "layer,bin,lo,hi,mass\n";
  json layers = json::array();
  for (const auto& h : hists) {
    const double width = (h.hi - h.lo) / static_cast<double>(h.mass.size());
    for (std::size_t b = 0; b < h.mass.size(); ++b) {
      csv << h.layer << "," << b << "," << num(h.lo + width * static_cast<double>(b)) << ","
          << num(h.lo + width * static_cast<double>(b + 1)) << "," << num(h.mass[b]) << "\n";
    }
    layers.push_back({{"layer", h.layer},
                      {"lo", h.lo},
                      {"hi", h.hi},
                      {"mass", h.mass},
                      {"regime_mass", regime_mass(h, saturation, linear)}});
  }
  json doc = {{"meta", ctx.meta()},
              {"model_fingerprint", hex64(fingerprint(params))},
              {"saturation", saturation},
              {"linear", linear},
              {"layers", layers}};
  Artifacts art;
  art.add("histogram.csv", csv.str());
  art.add("histogram.json", doc.dump(1) + "\n");
  for (const auto& p : art.commit(ctx.out_dir)) out << p.string() << "\n";
  return kExitOk;
}

void emit_error(std::ostream& err, const std::string& kind, const std::string& message,
                const std::string& path) {
  json e = {{"kind", kind}, {"message", message}};
  if (!path.empty()) e["path"] = path;
  err << json{{"error", e}}.dump() << std::endl;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Jacobian-regularized MLP training and Taylor-expansion verification", "jacreg"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Overrides o;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "Train one model"},
      {"verify-taylor", "Reconcile noise-injection expansions on a small model"},
      {"ablation", "Train the five objective variants over several seeds"},
      {"robustness", "Error of a checkpoint under Gaussian input corruption"},
      {"histogram", "Hidden-activation histograms of a checkpoint"}};
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t workers = 1;
  std::string checkpoint;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--workers", workers, "Worker threads (1 = bit-reproducible)")->check(CLI::PositiveNumber);
    if (name == "robustness" || name == "histogram") {
      sub->add_option("--checkpoint", checkpoint, "Model checkpoint (overrides the config)");
    }
    sub->add_flag("-v,--verbose", o.verbose, "Progress lines on stderr");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage", e.what(), "");
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) o.seed = seed;
  if (sub->count("--out")) o.out_dir = out_dir;
  if (sub->count("--workers")) o.workers = workers;
  if (sub->get_option_no_throw("--checkpoint") && sub->count("--checkpoint")) o.checkpoint = checkpoint;
  const std::string command = sub->get_name();

  try {
    const json doc = effective_config(o);
    Context ctx(command, doc);
    init_context(ctx, o, err);
    const auto t0 = std::chrono::steady_clock::now();
    int code = kExitError;
    if (command == "train") code = cmd_train(ctx, out);
    else if (command == "verify-taylor") code = cmd_verify_taylor(ctx, out, err);
    else if (command == "ablation") code = cmd_ablation(ctx, out);
    else if (command == "robustness") code = cmd_robustness(ctx, out);
    else if (command == "histogram") code = cmd_histogram(ctx, out);
    ctx.note(command + " finished in " +
             num(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
    return code;
  } catch (const IoError& e) {
    emit_error(err, e.kind(), e.what(), e.path());
  } catch (const ConfigError& e) {
    emit_error(err, e.kind(), e.what(), o.config_path);
  } catch (const DivergenceError& e) {
    emit_error(err, e.kind(), std::string(e.what()) + " (epoch " + std::to_string(e.epoch()) + ")", "");
  } catch (const Error& e) {
    emit_error(err, e.kind(), e.what(), "");
  } catch (const fs::filesystem_error& e) {
    emit_error(err, "io", e.what(), e.path1().string());
  } catch (const std::exception& e) {
    emit_error(err, "internal", e.what(), "");
  }
  return kExitError;
}

}  // namespace jacreg
