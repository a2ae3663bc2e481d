#include "acpgn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "acpgn/ggn.hpp"
#include "acpgn/mlp.hpp"

namespace acpgn::cli {

namespace fs = std::filesystem;

namespace {

/// Bad invocation: reported with exit code 2.
struct UsageError : Error {
  using Error::Error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

GgnMode parse_ggn_mode(const std::string& s) {
  if (s == "full") return GgnMode::full;
  if (s == "last_layer") return GgnMode::last_layer;
  throw Error("unknown ggn mode '" + s + "' (expected full or last_layer)");
}

SetPipeline parse_pipeline(const std::string& s) {
  if (s == "automatic") return SetPipeline::automatic;
  if (s == "absolute") return SetPipeline::absolute;
  if (s == "signed") return SetPipeline::signed_residual;
  throw Error("unknown set pipeline '" + s + "' (expected automatic, absolute or signed)");
}

}  // namespace

std::vector<double> parse_number_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw Error("cannot parse number '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw Error("empty number list");
  return out;
}

std::vector<Index> parse_arch(const std::string& s) {
  std::vector<Index> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 1) throw Error("invalid layer width '" + item + "'");
    out.push_back(static_cast<Index>(v));
  }
  return out;
}

std::optional<SynthSpec> parse_synth_spec(const std::string& s) {
  if (s.rfind("synth:", 0) != 0) return std::nullopt;
  const std::string rest = s.substr(6);
  const auto colon = rest.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
    throw Error("synthetic dataset spec must look like synth:NTRAIN:NTEST");
  auto count = [&](const std::string& field) {
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != field.size() || v < 0) throw Error("synthetic dataset spec must look like synth:NTRAIN:NTEST");
    return static_cast<Index>(v);
  };
  const SynthSpec spec{count(rest.substr(0, colon)), count(rest.substr(colon + 1))};
  if (spec.n_train < 1 || spec.n_test < 1) throw Error("synthetic dataset needs NTRAIN, NTEST >= 1");
  return spec;
}

void RunConfig::validate() const {
  if (alphas.empty()) throw Error("at least one alpha is required");
  for (double a : alphas)
    if (!(a > 0.0 && a < 1.0)) throw Error("alpha must lie in (0, 1)");
  if (methods.empty()) throw Error("at least one method is required");
  (void)method_specs();
  if (scheme != "holdout" && scheme != "kfold") throw Error("unknown split scheme '" + scheme + "'");
  if (!(calib_frac >= 0.0 && calib_frac < 1.0)) throw Error("calib_frac must lie in [0, 1)");
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw Error("test_frac must lie in (0, 1)");
  if (repeats < 1) throw Error("repeats must be >= 1");
  if (delta_grid.empty()) throw Error("delta grid must not be empty");
  for (double d : delta_grid)
    if (!(d > 0.0)) throw Error("delta values must be positive");
  if (grid_points < 2) throw Error("grid_points must be >= 2");
  if (epochs < 1 || batch_size < 1) throw Error("epochs and batch_size must be >= 1");
  if (target_cols < 1) throw Error("target_cols must be >= 1");
  (void)parse_ggn_mode(ggn_mode);
  (void)parse_pipeline(pipeline);
}

std::vector<MethodSpec> RunConfig::method_specs() const {
  std::vector<MethodSpec> out;
  for (const auto& m : methods) out.push_back(parse_method(m, score));
  return out;
}

ExperimentConfig RunConfig::experiment() const {
  ExperimentConfig e;
  e.hidden = arch;
  e.train.epochs = epochs;
  e.train.batch_size = batch_size;
  e.train.lr_initial = lr_initial;
  e.train.lr_final = lr_final;
  e.train.seed = seed;
  e.delta_grid = delta_grid;
  e.pipeline = parse_pipeline(pipeline);
  e.ggn_mode = parse_ggn_mode(ggn_mode);
  e.grid_points = grid_points;
  return e;
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  static const std::vector<std::string> known{
      "dataset", "target_cols", "arch", "methods", "alphas", "scheme", "test_frac", "folds", "repeats",
      "calib_frac", "seed", "delta_grid", "score", "grid_points", "epochs", "batch_size", "lr_initial",
      "lr_final", "ggn_mode", "pipeline", "out", "model", "test"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw Error("unknown config field '" + key + "'");
  RunConfig c;
  try {
    c.dataset = j.value("dataset", c.dataset);
    c.target_cols = j.value("target_cols", c.target_cols);
    c.arch = j.value("arch", c.arch);
    c.methods = j.value("methods", c.methods);
    c.alphas = j.value("alphas", c.alphas);
    c.scheme = j.value("scheme", c.scheme);
    c.test_frac = j.value("test_frac", c.test_frac);
    c.folds = j.value("folds", c.folds);
    c.repeats = j.value("repeats", c.repeats);
    c.calib_frac = j.value("calib_frac", c.calib_frac);
    c.seed = j.value("seed", c.seed);
    c.delta_grid = j.value("delta_grid", c.delta_grid);
    if (j.contains("score")) c.score = parse_score_variant(j.at("score").get<std::string>());
    c.grid_points = j.value("grid_points", c.grid_points);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_initial = j.value("lr_initial", c.lr_initial);
    c.lr_final = j.value("lr_final", c.lr_final);
    c.ggn_mode = j.value("ggn_mode", c.ggn_mode);
    c.pipeline = j.value("pipeline", c.pipeline);
    c.out = j.value("out", c.out);
    c.model = j.value("model", c.model);
    c.test = j.value("test", c.test);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid config: ") + e.what());
  }
  return c;
}

nlohmann::json config_to_json(const RunConfig& c) {
  return {{"dataset", c.dataset},       {"target_cols", c.target_cols}, {"arch", c.arch},
          {"methods", c.methods},       {"alphas", c.alphas},           {"scheme", c.scheme},
          {"test_frac", c.test_frac},   {"folds", c.folds},             {"repeats", c.repeats},
          {"calib_frac", c.calib_frac}, {"seed", c.seed},               {"delta_grid", c.delta_grid},
          {"score", to_string(c.score)}, {"grid_points", c.grid_points}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"lr_initial", c.lr_initial},   {"lr_final", c.lr_final},
          {"ggn_mode", c.ggn_mode},     {"pipeline", c.pipeline},       {"out", c.out},
          {"model", c.model},           {"test", c.test}};
}

namespace {

void write_atomic_with(const fs::path& path, const std::function<void(const fs::path&)>& writer) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    writer(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

}  // namespace

void write_atomic(const fs::path& path, const std::string& contents) {
  write_atomic_with(path, [&](const fs::path& tmp) {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw Error("cannot write " + tmp.string());
    f << contents;
    f.close();
    if (!f) throw Error("write failed for " + tmp.string());
  });
}

namespace {

struct LoadedData {
  Dataset raw;
  std::vector<SplitPlan> splits;
  std::optional<SynthSpec> synth;
};

LoadedData load_data(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw UsageError("a dataset is required (--dataset PATH or synth:NTRAIN:NTEST)");
  LoadedData d;
  d.synth = parse_synth_spec(cfg.dataset);
  if (d.synth) {
    auto s = synth_gp_outliers(d.synth->n_train, d.synth->n_test, cfg.seed);
    d.raw = std::move(s.data);
    d.splits.push_back(carve_calibration(s.split, cfg.calib_frac));
    return d;
  }
  if (!fs::exists(cfg.dataset)) throw UsageError("dataset file not found: " + cfg.dataset);
  d.raw = load_csv(cfg.dataset, cfg.target_cols);
  if (cfg.scheme == "kfold") {
    d.splits = make_splits(d.raw.size(), KFoldScheme{cfg.folds, cfg.repeats}, cfg.calib_frac, cfg.seed);
  } else {
    for (int r = 0; r < cfg.repeats; ++r) {
      auto plans = make_splits(d.raw.size(), HoldoutScheme{cfg.test_frac}, cfg.calib_frac,
                               cfg.seed + static_cast<std::uint64_t>(r));
      d.splits.push_back(std::move(plans.front()));
    }
  }
  return d;
}

nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

/// Flag values as typed on the command line; empty means "not given".
struct Flags {
  std::string config, dataset, method, alpha, out, delta_grid, arch, score, model, test, scheme, ggn_mode,
      pipeline;
  std::string seed, calib_frac, grid_points, target_cols, repeats, folds, test_frac, epochs;
};

void add_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file; flags override its fields");
  app->add_option("--dataset", f.dataset, "CSV file (targets in the last columns) or synth:NTRAIN:NTEST");
  app->add_option("--target-cols", f.target_cols, "number of target columns in the CSV (default 1)");
  app->add_option("--method", f.method,
                  "comma-separated methods: LA, SCP, SCP-GN, ACP-GN[(score)], ACP-GN-split-refine, FULL-CP-grid");
  app->add_option("--alpha", f.alpha, "comma-separated miscoverage levels, e.g. 0.1,0.05,0.01");
  app->add_option("--seed", f.seed, "seed for data splits, synthetic data and training");
  app->add_option("--out", f.out, "output file (train, intervals, synth) or directory (evaluate)");
  app->add_option("--calib-frac", f.calib_frac, "fraction of the training portion held out for calibration");
  app->add_option("--delta-grid", f.delta_grid, "comma-separated prior precisions to search over");
  app->add_option("--arch", f.arch, "comma-separated hidden layer widths, e.g. 50 or 50,50");
  app->add_option("--score", f.score, "ACP-GN score: standard, deleted or studentized");
  app->add_option("--grid-points", f.grid_points, "label grid size for the full-CP oracle");
  app->add_option("--scheme", f.scheme, "split scheme for CSV data: holdout or kfold");
  app->add_option("--test-frac", f.test_frac, "holdout test fraction");
  app->add_option("--folds", f.folds, "number of folds for kfold");
  app->add_option("--repeats", f.repeats, "repeated splits (or synthetic seeds)");
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--ggn", f.ggn_mode, "GGN mode: full or last_layer");
  app->add_option("--pipeline", f.pipeline, "set construction: automatic, absolute or signed");
}

template <class T>
T parse_scalar(const std::string& s, const char* name) {
  std::istringstream is(s);
  T v{};
  is >> v;
  if (!is || !is.eof()) throw UsageError(std::string("invalid value for ") + name + ": '" + s + "'");
  return v;
}

void apply_flags(RunConfig& c, const Flags& f) {
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (!f.target_cols.empty()) c.target_cols = parse_scalar<Index>(f.target_cols, "--target-cols");
  if (!f.method.empty()) c.methods = split_list(f.method);
  if (!f.alpha.empty()) c.alphas = parse_number_list(f.alpha);
  if (!f.seed.empty()) c.seed = parse_scalar<std::uint64_t>(f.seed, "--seed");
  if (!f.out.empty()) c.out = f.out;
  if (!f.calib_frac.empty()) c.calib_frac = parse_scalar<double>(f.calib_frac, "--calib-frac");
  if (!f.delta_grid.empty()) c.delta_grid = parse_number_list(f.delta_grid);
  if (!f.arch.empty()) c.arch = parse_arch(f.arch);
  if (!f.score.empty()) c.score = parse_score_variant(f.score);
  if (!f.grid_points.empty()) c.grid_points = parse_scalar<Index>(f.grid_points, "--grid-points");
  if (!f.scheme.empty()) c.scheme = f.scheme;
  if (!f.test_frac.empty()) c.test_frac = parse_scalar<double>(f.test_frac, "--test-frac");
  if (!f.folds.empty()) c.folds = parse_scalar<int>(f.folds, "--folds");
  if (!f.repeats.empty()) c.repeats = parse_scalar<int>(f.repeats, "--repeats");
  if (!f.epochs.empty()) c.epochs = parse_scalar<int>(f.epochs, "--epochs");
  if (!f.ggn_mode.empty()) c.ggn_mode = f.ggn_mode;
  if (!f.pipeline.empty()) c.pipeline = f.pipeline;
  if (!f.model.empty()) c.model = f.model;
  if (!f.test.empty()) c.test = f.test;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

RunConfig resolve(const Flags& f, nlohmann::json base = nlohmann::json::object()) {
  if (!f.config.empty()) base.update(read_json(f.config));
  RunConfig c = config_from_json(base);
  apply_flags(c, f);
  c.validate();
  return c;
}

// --- train ---

int cmd_train(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  if (cfg.out.empty()) throw UsageError("train needs --out FILE");
  const LoadedData data = load_data(cfg);
  const Dataset ds = standardize(data.raw);
  const SplitPlan& split = data.splits.front();
  const ExperimentConfig ecfg = cfg.experiment();
  SplitCache cache(ds, split, ecfg);
  const FittedModel& fm = split.calib_idx.empty() ? cache.full() : cache.train_only();

  const Matrix x_train = cache.rows(split.train_idx);
  const GgnState ggn = build_ggn(fm.model, x_train, fm.delta, ecfg.ggn_mode);
  Vector h(x_train.rows());
  const Index o = ds.output_dim();
  for (Index i = 0; i < x_train.rows(); ++i) {
    const Matrix jac = jacobian(fm.model, x_train.row(i).transpose());
    double s = 0.0;
    for (Index k = 0; k < o; ++k) s += ggn.leverage(jac.row(k).transpose());
    h(i) = s;
  }

  nlohmann::json j;
  j["format"] = "acpgn-run";
  j["version"] = 1;
  j["config"] = config_to_json(cfg);
  j["config"].erase("out");
  j["model"] = model_to_json(fm.model);
  j["delta"] = fm.delta;
  j["final_loss"] = fm.final_loss;
  j["ggn"] = {{"mode", cfg.ggn_mode}, {"effective_dim", ggn.effective_dim()}, {"jitter", ggn.jitter()}};
  j["leverage"] = {{"min", h.minCoeff()}, {"mean", h.mean()}, {"max", h.maxCoeff()}};
  j["standardization"] = {{"feature_means", vector_json(ds.feature_means)},
                          {"feature_stds", vector_json(ds.feature_stds)},
                          {"target_means", vector_json(ds.target_means)},
                          {"target_stds", vector_json(ds.target_stds)}};
  j["split"] = {{"train", split.train_idx}, {"calib", split.calib_idx}, {"test", split.test_idx},
                {"seed", split.seed}};
  write_atomic(cfg.out, j.dump(2) + "\n");

  out << "trained " << fm.model.num_params() << " parameters on " << split.train_idx.size() << " rows\n"
      << "delta " << fm.delta << ", final loss " << fm.final_loss << "\n"
      << "leverage min " << h.minCoeff() << ", mean " << h.mean() << ", max " << h.maxCoeff() << "\n"
      << "wrote " << cfg.out << "\n";
  return 0;
}

// --- intervals ---

Matrix read_test_rows(const std::string& path, Index in_dim, Index out_dim, Matrix* targets) {
  const Matrix all = load_csv_matrix(path);
  if (all.cols() == in_dim) return all;
  if (all.cols() == in_dim + out_dim) {
    *targets = all.rightCols(out_dim);
    return all.leftCols(in_dim);
  }
  throw Error("test file has " + std::to_string(all.cols()) + " columns; the model expects " +
              std::to_string(in_dim) + " features (optionally followed by " + std::to_string(out_dim) +
              " targets)");
}

int cmd_intervals(const Flags& f, std::ostream& out) {
  if (f.model.empty()) throw UsageError("intervals needs --model FILE");
  const nlohmann::json mj = read_json(f.model);
  if (mj.value("format", "") != "acpgn-run") throw Error(f.model + " is not a model file written by train");
  nlohmann::json base = mj.at("config");
  base.erase("methods");
  const RunConfig cfg = resolve(f, base);
  if (cfg.methods.size() != 1) throw UsageError("intervals takes a single --method");
  const MethodSpec method = cfg.method_specs().front();

  // Rebuild the training data exactly as train saw it.
  RunConfig data_cfg = config_from_json(mj.at("config"));
  if (!f.dataset.empty()) data_cfg.dataset = f.dataset;
  Dataset raw;
  if (const auto synth = parse_synth_spec(data_cfg.dataset))
    raw = synth_gp_outliers(synth->n_train, synth->n_test, data_cfg.seed).data;
  else
    raw = load_csv(data_cfg.dataset, data_cfg.target_cols);
  const Dataset ds = standardize(raw);
  const auto& st = mj.at("standardization");
  const Vector fm_ = vector_from_json(st.at("feature_means")), fs_ = vector_from_json(st.at("feature_stds"));
  const Vector tm = vector_from_json(st.at("target_means")), ts = vector_from_json(st.at("target_stds"));
  auto close = [](const Vector& a, const Vector& b) {
    return a.size() == b.size() && (a - b).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + b.cwiseAbs().maxCoeff());
  };
  if (!close(ds.feature_means, fm_) || !close(ds.feature_stds, fs_) || !close(ds.target_means, tm) ||
      !close(ds.target_stds, ts))
    throw Error("dataset does not match the one the model was trained on");

  const auto& sj = mj.at("split");
  SplitPlan split;
  split.train_idx = sj.at("train").get<std::vector<Index>>();
  split.calib_idx = sj.at("calib").get<std::vector<Index>>();
  split.test_idx = sj.at("test").get<std::vector<Index>>();
  split.seed = sj.at("seed").get<std::uint64_t>();
  for (const auto* v : {&split.train_idx, &split.calib_idx, &split.test_idx})
    for (Index i : *v)
      if (i < 0 || i >= ds.size()) throw Error("split index out of range for the dataset");

  FittedModel fm{model_from_json(mj.at("model")), mj.at("delta").get<double>(), mj.at("final_loss").get<double>()};
  ExperimentConfig ecfg = cfg.experiment();
  ecfg.ggn_mode = parse_ggn_mode(mj.at("ggn").at("mode").get<std::string>());
  const PreparedMethod pm(ds, split.train_idx, split.calib_idx, method, ecfg, fm);

  Matrix x_test, y_test;
  if (!cfg.test.empty()) {
    const Matrix raw_x = read_test_rows(cfg.test, ds.input_dim(), ds.output_dim(), &y_test);
    x_test = standardize_features(ds, raw_x);
  } else {
    x_test.resize(static_cast<Index>(split.test_idx.size()), ds.input_dim());
    y_test.resize(x_test.rows(), ds.output_dim());
    for (std::size_t t = 0; t < split.test_idx.size(); ++t) {
      x_test.row(static_cast<Index>(t)) = ds.features.row(split.test_idx[t]);
      y_test.row(static_cast<Index>(t)) = raw.targets.row(split.test_idx[t]);
    }
  }

  std::ostringstream buffer;
  std::ostream& sink = cfg.out.empty() ? out : buffer;
  for (Index r = 0; r < x_test.rows(); ++r) {
    for (double alpha : cfg.alphas) {
      const PredictionSet ps = to_original_units(ds, pm.predict(x_test.row(r).transpose(), alpha));
      nlohmann::json rec = to_json(ps);
      rec["row"] = r;
      rec["method"] = method.name();
      if (y_test.rows() == x_test.rows()) {
        const Vector y = y_test.row(r).transpose();
        rec["y"] = std::vector<double>(y.data(), y.data() + y.size());
        rec["covered"] = ps.contains(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
      }
      sink << rec.dump() << '\n';
      if (cfg.out.empty()) sink.flush();
    }
  }
  if (!cfg.out.empty()) write_atomic(cfg.out, buffer.str());
  return 0;
}

// --- evaluate ---

int cmd_evaluate(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  const auto specs = cfg.method_specs();
  const ExperimentConfig ecfg = cfg.experiment();
  std::vector<EvalReport> reports;
  if (const auto synth = parse_synth_spec(cfg.dataset)) {
    std::vector<std::uint64_t> seeds;
    for (int r = 0; r < cfg.repeats; ++r) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(r));
    reports = run_synthetic_experiment(specs, synth->n_train, synth->n_test, seeds, cfg.alphas, cfg.calib_frac, ecfg);
  } else {
    const LoadedData data = load_data(cfg);
    reports = run_experiment(data.raw, specs, data.splits, cfg.alphas, ecfg);
  }
  const std::string table = summary_table(reports);
  out << table;
  if (!cfg.out.empty()) {
    const fs::path dir(cfg.out);
    nlohmann::json j = {{"config", config_to_json(cfg)}, {"reports", to_json(reports)}};
    write_atomic(dir / "report.json", j.dump(2) + "\n");
    write_atomic(dir / "report.csv", reports_csv(reports));
    write_atomic(dir / "summary.txt", table);
    out << "wrote " << (dir / "report.json").string() << ", report.csv, summary.txt\n";
  }
  return 0;
}

// --- synth ---

int cmd_synth(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  const auto spec = parse_synth_spec(cfg.dataset.empty() ? "synth:500:100" : cfg.dataset);
  if (!spec) throw UsageError("synth needs --dataset synth:NTRAIN:NTEST");
  if (cfg.out.empty()) throw UsageError("synth needs --out FILE");
  const auto s = synth_gp_outliers(spec->n_train, spec->n_test, cfg.seed);
  write_atomic_with(cfg.out, [&](const fs::path& tmp) { save_csv(tmp, s.data, {"x", "y"}); });
  out << "wrote " << s.data.size() << " rows (" << spec->n_train << " train, " << spec->n_test << " test) to "
      << cfg.out << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conformal prediction intervals for neural-network regression"};
  app.require_subcommand(1);
  Flags train_f, intervals_f, evaluate_f, synth_f;
  auto* train = app.add_subcommand("train", "train a network and save it with its metadata");
  add_flags(train, train_f);
  auto* intervals = app.add_subcommand("intervals", "prediction sets for test rows, one JSON record per line");
  add_flags(intervals, intervals_f);
  intervals->add_option("--model", intervals_f.model, "model file written by train")->required();
  intervals->add_option("--test", intervals_f.test, "CSV of test rows (features, optionally targets)");
  auto* evaluate = app.add_subcommand("evaluate", "coverage and width over repeated splits");
  add_flags(evaluate, evaluate_f);
  auto* synth = app.add_subcommand("synth", "write the synthetic GP-with-outliers data as CSV");
  add_flags(synth, synth_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) return cmd_train(train_f, out);
    if (*intervals) return cmd_intervals(intervals_f, out);
    if (*evaluate) return cmd_evaluate(evaluate_f, out);
    if (*synth) return cmd_synth(synth_f, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace acpgn::cli
