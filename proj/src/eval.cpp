#include "acpgn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "acpgn/oracles.hpp"
#include "acpgn/split_cp.hpp"
#include "acpgn/stats.hpp"

namespace acpgn {

CoverageWidth coverage_and_width(const std::vector<PredictionSet>& sets, const Matrix& y_true) {
  if (static_cast<Index>(sets.size()) != y_true.rows()) throw Error("one prediction set per test point required");
  CoverageWidth cw;
  cw.n = y_true.rows();
  if (cw.n == 0) return cw;
  Index covered = 0;
  double finite_sum = 0.0;
  for (Index t = 0; t < cw.n; ++t) {
    const Vector y = y_true.row(t).transpose();
    if (sets[static_cast<std::size_t>(t)].contains(std::span<const double>(y.data(), static_cast<std::size_t>(y.size()))))
      ++covered;
    const double w = sets[static_cast<std::size_t>(t)].volume();
    if (std::isfinite(w)) finite_sum += w;
    else ++cw.infinite_count;
  }
  cw.coverage = static_cast<double>(covered) / static_cast<double>(cw.n);
  const Index finite = cw.n - cw.infinite_count;
  cw.finite_mean_width = finite > 0 ? finite_sum / static_cast<double>(finite) : kInf;
  cw.mean_width = cw.infinite_count > 0 ? kInf : cw.finite_mean_width;
  return cw;
}

ValidityResult validity_check(double coverage, Index n_eff, double alpha) {
  ValidityResult r;
  if (n_eff < 1) throw Error("validity_check needs n_eff >= 1");
  r.k = conformal_rank_threshold(alpha, n_eff);
  if (r.k > n_eff || r.k < 1) {
    r.lo = 0.0;
    r.hi = 1.0;
    r.warnings.push_back("rank threshold outside 1..n_eff; validity band is [0, 1]");
  } else {
    const double a = static_cast<double>(r.k);
    const double b = static_cast<double>(n_eff + 1 - r.k);
    r.lo = stats::beta_quantile(0.01, a, b);
    r.hi = stats::beta_quantile(0.99, a, b);
  }
  r.pass = coverage >= r.lo && coverage <= r.hi;
  return r;
}

// --- methods ---

std::string MethodSpec::name() const {
  switch (kind) {
    case MethodKind::la: return "LA";
    case MethodKind::scp: return "SCP";
    case MethodKind::scp_gn: return "SCP-GN";
    case MethodKind::acp_gn: return "ACP-GN(" + to_string(score) + ")";
    case MethodKind::acp_gn_split_refine: return "ACP-GN-split-refine(" + to_string(score) + ")";
    case MethodKind::full_cp_grid: return "FULL-CP-grid";
  }
  return "?";
}

bool MethodSpec::needs_calibration() const {
  return kind == MethodKind::scp || kind == MethodKind::scp_gn || kind == MethodKind::acp_gn_split_refine;
}

const std::vector<std::string>& valid_method_names() {
  static const std::vector<std::string> names{"LA",
                                              "SCP",
                                              "SCP-GN",
                                              "ACP-GN",
                                              "ACP-GN(standard)",
                                              "ACP-GN(deleted)",
                                              "ACP-GN(studentized)",
                                              "ACP-GN-split-refine",
                                              "FULL-CP-grid"};
  return names;
}

MethodSpec parse_method(const std::string& raw, ScoreVariant default_score) {
  std::string name = raw;
  std::string score;
  if (const auto open = name.find('('); open != std::string::npos && name.back() == ')') {
    score = name.substr(open + 1, name.size() - open - 2);
    name = name.substr(0, open);
  }
  MethodSpec m;
  m.score = score.empty() ? default_score : parse_score_variant(score);
  if (name == "LA") m.kind = MethodKind::la;
  else if (name == "SCP") m.kind = MethodKind::scp;
  else if (name == "SCP-GN") m.kind = MethodKind::scp_gn;
  else if (name == "ACP-GN") m.kind = MethodKind::acp_gn;
  else if (name == "ACP-GN-split-refine") m.kind = MethodKind::acp_gn_split_refine;
  else if (name == "FULL-CP-grid") m.kind = MethodKind::full_cp_grid;
  else {
    std::string list;
    for (const auto& n : valid_method_names()) list += (list.empty() ? "" : ", ") + n;
    throw Error("unknown method '" + raw + "'; valid names: " + list);
  }
  if (!score.empty() && m.kind != MethodKind::acp_gn && m.kind != MethodKind::acp_gn_split_refine)
    throw Error("method '" + name + "' does not take a score variant");
  return m;
}

SplitCache::SplitCache(const Dataset& ds, const SplitPlan& split, const ExperimentConfig& cfg)
    : ds_(&ds), split_(&split), cfg_(&cfg) {}

Matrix SplitCache::rows(const std::vector<Index>& idx) const {
  Matrix out(static_cast<Index>(idx.size()), ds_->input_dim());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = ds_->features.row(idx[r]);
  return out;
}

Matrix SplitCache::targets(const std::vector<Index>& idx) const {
  Matrix out(static_cast<Index>(idx.size()), ds_->output_dim());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = ds_->targets.row(idx[r]);
  return out;
}

FittedModel SplitCache::fit(const std::vector<Index>& idx, std::uint64_t salt) {
  const Matrix x = rows(idx);
  const Matrix y = targets(idx);
  std::vector<Index> arch{ds_->input_dim()};
  arch.insert(arch.end(), cfg_->hidden.begin(), cfg_->hidden.end());
  arch.push_back(ds_->output_dim());
  TrainConfig tc = cfg_->train;
  tc.seed = cfg_->train.seed + split_->seed * 1000003ULL + salt;
  const auto search = grid_search_delta(x, y, arch, tc, cfg_->delta_grid, cfg_->val_frac, tc.seed + 17);
  tc.delta = search.best_delta;
  const auto res = train(x, y, arch, tc);
  return {res.model, tc.delta, res.loss_history.back()};
}

const FittedModel& SplitCache::full() {
  if (!full_) full_ = fit(split_->fit_idx(), 1);
  return *full_;
}

const FittedModel& SplitCache::train_only() {
  if (split_->calib_idx.empty()) throw Error("method requires a calibration split");
  if (!train_) train_ = fit(split_->train_idx, 2);
  return *train_;
}

PredictionSet to_original_units(const Dataset& ds, const PredictionSet& ps) {
  if (!ds.standardized) return ps;
  std::vector<double> scale(static_cast<std::size_t>(ds.output_dim())), shift(scale.size());
  for (Index o = 0; o < ds.output_dim(); ++o) {
    scale[static_cast<std::size_t>(o)] = ds.target_stds(o);
    shift[static_cast<std::size_t>(o)] = ds.target_means(o);
  }
  return ps.affine(scale, shift);
}

namespace {

Matrix gather(const Matrix& m, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = m.row(idx[r]);
  return out;
}

}  // namespace

PreparedMethod::PreparedMethod(const Dataset& ds, const std::vector<Index>& fit_rows,
                               const std::vector<Index>& calib_rows, const MethodSpec& method,
                               const ExperimentConfig& cfg, const FittedModel& fm)
    : method_(method), cfg_(cfg), model_(fm.model), delta_(fm.delta) {
  if (method.needs_calibration() && calib_rows.empty())
    throw Error(method.name().substr(0, method.name().find('(')) + " requires calibration split");
  const Index o = ds.output_dim();
  if (o != 1 && method.kind != MethodKind::acp_gn)
    throw Error(method.name() + " supports scalar targets only");
  if (model_.layer_sizes.front() != ds.input_dim() || model_.layer_sizes.back() != o)
    throw Error("model dimensions do not match the dataset");

  const Matrix x_fit = gather(ds.features, fit_rows);
  const Matrix y_fit = gather(ds.targets, fit_rows);
  switch (method.kind) {
    case MethodKind::la:
      ggn_ = std::make_unique<GgnState>(build_ggn(model_, x_fit, delta_, cfg.ggn_mode));
      sigma2_ = la_fit_sigma2(model_, x_fit, y_fit);
      n_eff_ = x_fit.rows();
      break;
    case MethodKind::scp:
    case MethodKind::scp_gn: {
      const bool gn = method.kind == MethodKind::scp_gn;
      if (gn) ggn_ = std::make_unique<GgnState>(build_ggn(model_, x_fit, delta_, cfg.ggn_mode));
      scores_ = scp_calibrate(model_, gather(ds.features, calib_rows), gather(ds.targets, calib_rows).col(0),
                              gn ? ScpVariant::gn_normalized : ScpVariant::absolute, ggn_.get());
      n_eff_ = static_cast<Index>(calib_rows.size());
      break;
    }
    case MethodKind::acp_gn:
    case MethodKind::acp_gn_split_refine: {
      const bool split_refine = method.kind == MethodKind::acp_gn_split_refine;
      const Matrix x = split_refine ? gather(ds.features, calib_rows) : x_fit;
      const Matrix y = split_refine ? gather(ds.targets, calib_rows) : y_fit;
      ggn_ = std::make_unique<GgnState>(build_ggn(model_, x, delta_, cfg.ggn_mode));
      if (o == 1)
        ctx_ = std::make_unique<AcpGnContext>(make_acp_gn_context(model_, *ggn_, x, y.col(0), split_refine));
      else
        multi_ctx_ = std::make_unique<AcpGnMultiContext>(make_acp_gn_multi_context(model_, *ggn_, x, y));
      n_eff_ = x.rows();
      break;
    }
    case MethodKind::full_cp_grid:
      fit_x_ = x_fit;
      fit_y_ = y_fit.col(0);
      retrainer_ = std::make_unique<WarmStartMlpRetrainer>(model_, delta_, cfg.fullcp_epochs, cfg.fullcp_lr,
                                                           cfg.train.seed);
      grid_ = label_grid(fit_y_, cfg.grid_points);
      n_eff_ = x_fit.rows();
      break;
  }
}

PredictionSet PreparedMethod::predict(const Eigen::Ref<const Vector>& x, double alpha) const {
  if (x.size() != model_.layer_sizes.front()) throw Error("test input has the wrong dimension");
  switch (method_.kind) {
    case MethodKind::la:
      return la_interval(forward(model_, x)(0), ggn_->leverage(jacobian(model_, x).row(0).transpose()), sigma2_,
                         alpha);
    case MethodKind::scp:
    case MethodKind::scp_gn: {
      const bool gn = method_.kind == MethodKind::scp_gn;
      const double h = gn ? ggn_->leverage(jacobian(model_, x).row(0).transpose()) : 0.0;
      PredictionSet ps = scp_interval(forward(model_, x)(0), scp_quantile(scores_, alpha), h, scores_.variant, alpha);
      ps.rank_threshold = conformal_rank_threshold(alpha, scores_.scores.size());
      return ps;
    }
    case MethodKind::acp_gn:
    case MethodKind::acp_gn_split_refine: {
      if (multi_ctx_) return multioutput_coeffs_and_set(*multi_ctx_, model_, x, alpha, true, method_.score);
      const Matrix jac = jacobian(model_, x);
      const double f = context_prediction(*ctx_, model_, x, jac);
      const Vector phi = jac.row(0).transpose();
      CrrCoefficients c = acp_gn_coeffs(*ctx_, phi, f);
      if (method_.score != ScoreVariant::standard) c = transform_scores(c, method_.score, augmented_leverages(*ctx_, phi));
      return conformal_set(c, alpha, cfg_.pipeline);
    }
    case MethodKind::full_cp_grid:
      return full_cp_grid(*retrainer_, fit_x_, fit_y_, x, grid_, alpha).as_set(alpha);
  }
  throw Error("unhandled method");
}

MethodOutput run_method(const Dataset& ds, const SplitPlan& split, const MethodSpec& method,
                        const std::vector<double>& alphas, const ExperimentConfig& cfg, SplitCache& cache) {
  const auto t0 = std::chrono::steady_clock::now();
  if (method.needs_calibration() && split.calib_idx.empty())
    throw Error(method.name().substr(0, method.name().find('(')) + " requires calibration split");
  const bool split_method = method.needs_calibration();
  const FittedModel& fm = split_method ? cache.train_only() : cache.full();
  ExperimentConfig local = cfg;
  local.train.seed = cfg.train.seed + split.seed;
  const PreparedMethod pm(ds, split_method ? split.train_idx : split.fit_idx(),
                          split_method ? split.calib_idx : std::vector<Index>{}, method, local, fm);

  MethodOutput out;
  out.sets.assign(alphas.size(), {});
  const Matrix x_test = cache.rows(split.test_idx);
  for (Index t = 0; t < x_test.rows(); ++t) {
    const Vector xt = x_test.row(t).transpose();
    for (std::size_t a = 0; a < alphas.size(); ++a) out.sets[a].push_back(to_original_units(ds, pm.predict(xt, alphas[a])));
  }
  out.n_eff = pm.n_eff();
  out.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

void EvalReport::aggregate() {
  std::vector<double> cov, width, runtime, finite;
  valid_splits = 0;
  infinite_count = 0;
  double n_eff = 0.0;
  for (const auto& s : splits) {
    cov.push_back(s.coverage);
    width.push_back(s.mean_width);
    if (std::isfinite(s.finite_mean_width)) finite.push_back(s.finite_mean_width);
    runtime.push_back(s.runtime_s);
    infinite_count += s.infinite_count;
    valid_splits += s.valid ? 1 : 0;
    n_eff += static_cast<double>(s.n_eff);
  }
  mean_coverage = mean(cov);
  se_coverage = standard_error(cov);
  mean_width = mean(width);
  se_width = std::isfinite(mean_width) ? standard_error(width) : kInf;
  finite_mean_width = finite.empty() ? kInf : mean(finite);
  mean_runtime_s = mean(runtime);
  if (!splits.empty()) {
    const auto n = static_cast<Index>(std::llround(n_eff / static_cast<double>(splits.size())));
    valid = validity_check(mean_coverage, n, alpha).pass;
  }
}

std::vector<EvalReport> run_experiment(const Dataset& input, const std::vector<MethodSpec>& methods,
                                       const std::vector<SplitPlan>& splits, const std::vector<double>& alphas,
                                       const ExperimentConfig& cfg) {
  if (methods.empty() || alphas.empty() || splits.empty()) throw Error("need at least one method, alpha and split");
  const Dataset ds = input.standardized ? input : standardize(input);
  std::vector<EvalReport> reports;
  for (const auto& m : methods)
    for (double a : alphas) {
      EvalReport r;
      r.method = m.name();
      r.alpha = a;
      reports.push_back(std::move(r));
    }
  const Dataset orig = destandardize(ds);
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const SplitPlan& split = splits[s];
    SplitCache cache(ds, split, cfg);
    Matrix y_true(static_cast<Index>(split.test_idx.size()), ds.output_dim());
    for (std::size_t t = 0; t < split.test_idx.size(); ++t)
      y_true.row(static_cast<Index>(t)) = orig.targets.row(split.test_idx[t]);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      MethodOutput mo;
      try {
        mo = run_method(ds, split, methods[mi], alphas, cfg, cache);
      } catch (const std::exception& e) {
        throw Error("split " + std::to_string(s) + ": " + e.what());
      }
      for (std::size_t a = 0; a < alphas.size(); ++a) {
        const auto cw = coverage_and_width(mo.sets[a], y_true);
        const auto vr = validity_check(cw.coverage, mo.n_eff, alphas[a]);
        SplitMetrics sm;
        sm.split = static_cast<Index>(s);
        sm.coverage = cw.coverage;
        sm.mean_width = cw.mean_width;
        sm.finite_mean_width = cw.finite_mean_width;
        sm.infinite_count = cw.infinite_count;
        sm.n_eff = mo.n_eff;
        sm.valid = vr.pass;
        sm.band_lo = vr.lo;
        sm.band_hi = vr.hi;
        sm.runtime_s = mo.runtime_s;
        reports[mi * alphas.size() + a].splits.push_back(sm);
      }
    }
  }
  for (auto& r : reports) r.aggregate();
  return reports;
}

std::vector<EvalReport> run_synthetic_experiment(const std::vector<MethodSpec>& methods, Index n_train,
                                                 Index n_test, const std::vector<std::uint64_t>& seeds,
                                                 const std::vector<double>& alphas, double calib_frac,
                                                 const ExperimentConfig& cfg) {
  if (seeds.empty()) throw Error("need at least one seed");
  std::vector<EvalReport> merged;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const auto synth = synth_gp_outliers(n_train, n_test, seeds[s]);
    SplitPlan split = carve_calibration(synth.split, calib_frac);
    split.seed = seeds[s];
    auto reports = run_experiment(synth.data, methods, {split}, alphas, cfg);
    if (merged.empty()) {
      merged = reports;
      for (auto& r : merged) r.splits.clear();
    }
    for (std::size_t r = 0; r < reports.size(); ++r) {
      SplitMetrics sm = reports[r].splits.front();
      sm.split = static_cast<Index>(s);
      merged[r].splits.push_back(sm);
    }
  }
  for (auto& r : merged) r.aggregate();
  return merged;
}

nlohmann::json to_json(const EvalReport& r) {
  auto num = [](double v) { return endpoint_to_json(v); };
  nlohmann::json splits = nlohmann::json::array();
  for (const auto& s : r.splits)
    splits.push_back({{"split", s.split},
                      {"coverage", s.coverage},
                      {"mean_width", num(s.mean_width)},
                      {"finite_mean_width", num(s.finite_mean_width)},
                      {"infinite_count", s.infinite_count},
                      {"n_eff", s.n_eff},
                      {"valid", s.valid},
                      {"band", {s.band_lo, s.band_hi}},
                      {"runtime_s", s.runtime_s}});
  return {{"method", r.method},
          {"alpha", r.alpha},
          {"mean_coverage", r.mean_coverage},
          {"se_coverage", r.se_coverage},
          {"mean_width", num(r.mean_width)},
          {"se_width", num(r.se_width)},
          {"finite_mean_width", num(r.finite_mean_width)},
          {"infinite_count", r.infinite_count},
          {"valid_splits", r.valid_splits},
          {"valid", r.valid},
          {"mean_runtime_s", r.mean_runtime_s},
          {"splits", std::move(splits)}};
}

nlohmann::json to_json(const std::vector<EvalReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr;
}

std::string reports_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "method,alpha,split,coverage,mean_width,finite_mean_width,infinite_count,n_eff,valid,runtime_s\n";
  for (const auto& r : reports)
    for (const auto& s : r.splits)
      os << r.method << ',' << r.alpha << ',' << s.split << ',' << s.coverage << ',' << s.mean_width << ','
         << s.finite_mean_width << ',' << s.infinite_count << ',' << s.n_eff << ',' << (s.valid ? 1 : 0) << ','
         << s.runtime_s << '\n';
  return os.str();
}

std::string summary_table(const std::vector<EvalReport>& reports) {
  std::vector<std::string> methods;
  std::vector<double> alphas;
  for (const auto& r : reports) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(alphas.begin(), alphas.end(), r.alpha) == alphas.end()) alphas.push_back(r.alpha);
  }
  auto find = [&](const std::string& m, double a) -> const EvalReport* {
    for (const auto& r : reports)
      if (r.method == m && r.alpha == a) return &r;
    return nullptr;
  };
  std::ostringstream os;
  os << std::left << std::setw(30) << "method";
  for (double a : alphas) {
    std::ostringstream h;
    h << "width@" << std::setprecision(4) << 100.0 * (1.0 - a) << "%";
    os << std::setw(22) << h.str();
  }
  for (double a : alphas) {
    std::ostringstream h;
    h << "cov@" << std::setprecision(4) << 100.0 * (1.0 - a) << "%";
    os << std::setw(22) << h.str();
  }
  os << '\n';
  for (const auto& m : methods) {
    os << std::setw(30) << m;
    for (double a : alphas) {
      const auto* r = find(m, a);
      std::ostringstream c;
      c << std::fixed << std::setprecision(3) << r->mean_width << " +- " << r->se_width;
      os << std::setw(22) << c.str();
    }
    for (double a : alphas) {
      const auto* r = find(m, a);
      std::ostringstream c;
      c << std::fixed << std::setprecision(2) << 100.0 * r->mean_coverage << " +- " << 100.0 * r->se_coverage
        << (r->valid ? " ✓" : " ✗");
      os << std::setw(24) << c.str();
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace acpgn
