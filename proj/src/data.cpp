#include "acpgn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace acpgn {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

void column_stats(const Matrix& m, Vector& mean, Vector& stdev) {
  const auto n = static_cast<double>(m.rows());
  mean = m.colwise().mean().transpose();
  stdev.resize(m.cols());
  for (Index c = 0; c < m.cols(); ++c) {
    const double var = (m.col(c).array() - mean(c)).square().sum() / n;
    const double s = std::sqrt(var);
    // constant columns: leave values untouched apart from centering
    stdev(c) = (s > 1e-12 * std::max(1.0, std::abs(mean(c)))) ? s : 1.0;
  }
}

}  // namespace

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out;
  out.features.resize(static_cast<Index>(rows.size()), input_dim());
  out.targets.resize(static_cast<Index>(rows.size()), output_dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Index>(r)) = features.row(rows[r]);
    out.targets.row(static_cast<Index>(r)) = targets.row(rows[r]);
  }
  out.feature_means = feature_means;
  out.feature_stds = feature_stds;
  out.target_means = target_means;
  out.target_stds = target_stds;
  out.standardized = standardized;
  return out;
}

Vector Dataset::scalar_targets() const {
  if (output_dim() != 1) throw Error("expected scalar targets, got " + std::to_string(output_dim()) + " outputs");
  return targets.col(0);
}

void Dataset::validate() const {
  if (features.rows() != targets.rows()) throw Error("feature/target row count mismatch");
  if (size() < 2) throw Error("dataset needs at least 2 rows");
  if (!features.allFinite() || !targets.allFinite()) throw Error("dataset contains NaN or Inf");
}

std::vector<Index> SplitPlan::fit_idx() const {
  std::vector<Index> out(train_idx);
  out.insert(out.end(), calib_idx.begin(), calib_idx.end());
  return out;
}

Matrix load_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t arity = 0;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    std::vector<double> values(fields.size());
    bool numeric = true;
    std::size_t bad = 0;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_double(fields[i], values[i])) {
        numeric = false;
        bad = i;
        break;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        arity = fields.size();
        continue;  // header
      }
      throw Error("row " + std::to_string(line_no) + ": non-numeric cell '" +
                  std::string(fields[bad]) + "' in column " + std::to_string(bad + 1));
    }
    if (arity == 0) arity = fields.size();
    if (fields.size() != arity)
      throw Error("row " + std::to_string(line_no) + ": expected " + std::to_string(arity) +
                  " fields, got " + std::to_string(fields.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i]))
        throw Error("row " + std::to_string(line_no) + ": non-finite value in column " +
                    std::to_string(i + 1));
    }
    first = false;
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw Error("no data rows in " + path.string());
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(arity));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

Dataset load_csv(const std::filesystem::path& path, Index target_cols) {
  if (target_cols < 1) throw Error("target column count must be >= 1");
  const Matrix m = load_csv_matrix(path);
  if (m.cols() <= target_cols)
    throw Error("need more than " + std::to_string(target_cols) + " columns, got " + std::to_string(m.cols()));
  Dataset ds;
  ds.features = m.leftCols(m.cols() - target_cols);
  ds.targets = m.rightCols(target_cols);
  return ds;
}

void save_csv(const std::filesystem::path& path, const Dataset& ds,
              const std::vector<std::string>& header) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  if (!header.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
  }
  for (Index r = 0; r < ds.size(); ++r) {
    for (Index c = 0; c < ds.input_dim(); ++c) out << (c ? "," : "") << ds.features(r, c);
    for (Index c = 0; c < ds.output_dim(); ++c) out << ',' << ds.targets(r, c);
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

Dataset standardize(const Dataset& ds) {
  if (ds.standardized) throw Error("dataset is already standardized");
  Dataset out = ds;
  column_stats(ds.features, out.feature_means, out.feature_stds);
  column_stats(ds.targets, out.target_means, out.target_stds);
  out.features = (ds.features.rowwise() - out.feature_means.transpose()).array().rowwise() /
                 out.feature_stds.transpose().array();
  out.targets = (ds.targets.rowwise() - out.target_means.transpose()).array().rowwise() /
                out.target_stds.transpose().array();
  out.standardized = true;
  return out;
}

Dataset destandardize(const Dataset& ds) {
  if (!ds.standardized) return ds;
  Dataset out = ds;
  out.features = (ds.features.array().rowwise() * ds.feature_stds.transpose().array()).matrix().rowwise() +
                 ds.feature_means.transpose();
  out.targets = (ds.targets.array().rowwise() * ds.target_stds.transpose().array()).matrix().rowwise() +
                ds.target_means.transpose();
  out.standardized = false;
  return out;
}

Matrix standardize_features(const Dataset& reference, const Matrix& raw) {
  if (raw.cols() != reference.input_dim())
    throw Error("feature dimension mismatch: expected " + std::to_string(reference.input_dim()) +
                ", got " + std::to_string(raw.cols()));
  if (!reference.standardized) return raw;
  return (raw.rowwise() - reference.feature_means.transpose()).array().rowwise() /
         reference.feature_stds.transpose().array();
}

double destandardize_target(const Dataset& reference, Index o, double value) {
  if (!reference.standardized) return value;
  return value * reference.target_stds(o) + reference.target_means(o);
}

double target_scale(const Dataset& reference, Index o) {
  return reference.standardized ? reference.target_stds(o) : 1.0;
}

SplitPlan carve_calibration(const SplitPlan& plan, double calib_frac) {
  if (!(calib_frac >= 0.0 && calib_frac < 1.0)) throw Error("calib_frac must lie in [0, 1)");
  SplitPlan out = plan;
  const auto n_calib = static_cast<std::size_t>(std::llround(calib_frac * static_cast<double>(plan.train_idx.size())));
  if (calib_frac > 0.0 && n_calib == 0) throw Error("too few points to populate the calibration split");
  if (n_calib >= plan.train_idx.size()) throw Error("too few points to populate the training split");
  out.calib_idx.insert(out.calib_idx.end(), plan.train_idx.end() - static_cast<std::ptrdiff_t>(n_calib),
                       plan.train_idx.end());
  out.train_idx.resize(plan.train_idx.size() - n_calib);
  return out;
}

std::vector<SplitPlan> make_splits(Index n, const SplitScheme& scheme, double calib_frac,
                                   std::uint64_t seed) {
  if (!(calib_frac >= 0.0 && calib_frac < 1.0)) throw Error("calib_frac must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<Index> perm(static_cast<std::size_t>(n));

  auto finish = [&](std::vector<Index> fit, std::vector<Index> test) {
    SplitPlan plan;
    plan.seed = seed;
    const auto n_calib = static_cast<std::size_t>(std::llround(calib_frac * static_cast<double>(fit.size())));
    if (calib_frac > 0.0 && n_calib == 0) throw Error("too few points to populate the calibration split");
    if (n_calib >= fit.size()) throw Error("too few points to populate the training split");
    plan.calib_idx.assign(fit.end() - static_cast<std::ptrdiff_t>(n_calib), fit.end());
    fit.resize(fit.size() - n_calib);
    plan.train_idx = std::move(fit);
    plan.test_idx = std::move(test);
    return plan;
  };

  std::vector<SplitPlan> plans;
  if (const auto* h = std::get_if<HoldoutScheme>(&scheme)) {
    if (!(h->test_frac > 0.0 && h->test_frac < 1.0)) throw Error("test_frac must lie in (0, 1)");
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(h->test_frac * static_cast<double>(n)));
    if (n_test == 0 || n_test >= perm.size()) throw Error("too few points for a holdout split");
    std::vector<Index> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<Index> fit(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
    plans.push_back(finish(std::move(fit), std::move(test)));
    return plans;
  }

  const auto& kf = std::get<KFoldScheme>(scheme);
  if (kf.k < 2) throw Error("k-fold needs k >= 2");
  if (kf.repeats < 1) throw Error("k-fold needs repeats >= 1");
  if (n < kf.k) throw Error("fewer points than folds");
  for (int rep = 0; rep < kf.repeats; ++rep) {
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int fold = 0; fold < kf.k; ++fold) {
      const auto lo = static_cast<std::size_t>(n * fold / kf.k);
      const auto hi = static_cast<std::size_t>(n * (fold + 1) / kf.k);
      std::vector<Index> test(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                              perm.begin() + static_cast<std::ptrdiff_t>(hi));
      std::vector<Index> fit(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(lo));
      fit.insert(fit.end(), perm.begin() + static_cast<std::ptrdiff_t>(hi), perm.end());
      plans.push_back(finish(std::move(fit), std::move(test)));
    }
  }
  return plans;
}

SyntheticData synth_gp_outliers(Index n_train, Index n_test, std::uint64_t seed) {
  if (n_train < 1 || n_test < 1) throw Error("synth_gp_outliers needs n_train, n_test >= 1");
  const Index n = n_train + n_test;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(kSynthInputLo, kSynthInputHi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(kSynthOutlierProb);

  Vector x(n);
  for (Index i = 0; i < n; ++i) x(i) = unif(rng);

  Matrix k(n, n);
  const double inv2l2 = 1.0 / (2.0 * kSynthLengthscale * kSynthLengthscale);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) k(i, j) = k(j, i) = std::exp(-(x(i) - x(j)) * (x(i) - x(j)) * inv2l2);
  // RBF Gram matrices are numerically singular; jitter keeps Cholesky stable.
  k.diagonal().array() += 1e-6;
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) throw Error("GP covariance factorization failed");

  Vector z(n);
  for (Index i = 0; i < n; ++i) z(i) = gauss(rng);
  const Vector f = llt.matrixL() * z;

  SyntheticData out;
  out.outlier.resize(static_cast<std::size_t>(n));
  out.data.features = x;
  out.data.targets.resize(n, 1);
  for (Index i = 0; i < n; ++i) {
    const bool outlier = coin(rng);
    out.outlier[static_cast<std::size_t>(i)] = outlier;
    const double sd = kSynthNoiseStd * (outlier ? kSynthOutlierScale : 1.0);
    out.data.targets(i, 0) = f(i) + sd * gauss(rng);
  }
  out.split.seed = seed;
  out.split.train_idx.resize(static_cast<std::size_t>(n_train));
  std::iota(out.split.train_idx.begin(), out.split.train_idx.end(), Index{0});
  out.split.test_idx.resize(static_cast<std::size_t>(n_test));
  std::iota(out.split.test_idx.begin(), out.split.test_idx.end(), n_train);
  return out;
}

}  // namespace acpgn
