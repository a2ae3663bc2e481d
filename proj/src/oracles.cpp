#include "acpgn/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "acpgn/stats.hpp"

namespace acpgn {

RidgeRetrainer::RidgeRetrainer(double delta) : delta_(delta) {
  if (!(delta > 0.0)) throw Error("ridge regularizer must be positive");
}

Vector RidgeRetrainer::fit(const Matrix& inputs, const Vector& targets) const {
  Matrix h = inputs.transpose() * inputs;
  h.diagonal().array() += delta_;
  return h.llt().solve(Vector(inputs.transpose() * targets));
}

Vector RidgeRetrainer::predict(const Vector& params, const Matrix& inputs) const { return inputs * params; }

WarmStartMlpRetrainer::WarmStartMlpRetrainer(MlpModel start, double delta, int epochs, double lr,
                                             std::uint64_t seed)
    : start_(std::move(start)) {
  cfg_.delta = delta;
  cfg_.epochs = epochs;
  cfg_.lr_initial = lr;
  cfg_.lr_final = lr;
  cfg_.cosine = false;
  cfg_.batch_size = std::numeric_limits<Index>::max();
  cfg_.seed = seed;
}

Vector WarmStartMlpRetrainer::fit(const Matrix& inputs, const Vector& targets) const {
  return train_from(start_, inputs, targets, cfg_).model.theta;
}

Vector WarmStartMlpRetrainer::predict(const Vector& params, const Matrix& inputs) const {
  MlpModel m{start_.layer_sizes, params};
  return forward_batch(m, inputs).col(0);
}

std::vector<double> FullCpResult::accepted_labels() const {
  std::vector<double> out;
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (accepted[k]) out.push_back(grid[k]);
  return out;
}

PredictionSet FullCpResult::as_set(double alpha) const {
  PredictionSet ps;
  ps.alpha = alpha;
  const double step = grid.size() > 1 ? (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1) : 0.0;
  std::vector<Interval> pieces;
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (accepted[k]) pieces.push_back({grid[k] - 0.5 * step, grid[k] + 0.5 * step});
  ps.per_output.push_back(normalize_intervals(std::move(pieces)));
  return ps;
}

std::vector<double> label_grid(const Vector& targets, Index points) {
  if (points < 1 || targets.size() == 0) throw Error("label grid needs at least one point and one target");
  const double lo = targets.minCoeff(), hi = targets.maxCoeff();
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (Index k = 0; k < points; ++k)
    grid[static_cast<std::size_t>(k)] =
        points == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
  return grid;
}

FullCpResult full_cp_grid(const Retrainer& retrainer, const Matrix& inputs, const Vector& targets,
                          const Eigen::Ref<const Vector>& x_new, const std::vector<double>& y_grid, double alpha) {
  if (!std::is_sorted(y_grid.begin(), y_grid.end())) throw Error("label grid must be sorted");
  const Index n = inputs.rows();
  Matrix x_aug(n + 1, inputs.cols());
  x_aug.topRows(n) = inputs;
  x_aug.row(n) = x_new.transpose();
  Vector y_aug(n + 1);
  y_aug.head(n) = targets;
  const Index threshold = conformal_rank_threshold(alpha, n);

  FullCpResult res;
  res.grid = y_grid;
  for (const double y : y_grid) {
    if (!std::isfinite(y)) throw Error("label grid must be finite");
    y_aug(n) = y;
    Vector pred;
    try {
      pred = retrainer.predict(retrainer.fit(x_aug, y_aug), x_aug);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "retrainer failed at y=" << y << ": " << e.what();
      throw Error(msg.str());
    }
    const Vector resid = (y_aug - pred).cwiseAbs();
    const Index rank = (resid.array() <= resid(n)).count();
    res.rank.push_back(rank);
    res.accepted.push_back(rank <= threshold);
  }
  return res;
}

double la_fit_sigma2(const Vector& residuals) {
  if (residuals.size() == 0) throw Error("no residuals");
  return std::max(1e-12, residuals.squaredNorm() / static_cast<double>(residuals.size()));
}

double la_fit_sigma2(const MlpModel& model, const Matrix& inputs, const Matrix& targets) {
  const Matrix r = targets - forward_batch(model, inputs);
  return std::max(1e-12, r.squaredNorm() / static_cast<double>(r.size()));
}

LaplacePredictive la_predictive(const MlpModel& model, const GgnState& ggn, const Eigen::Ref<const Vector>& x,
                                double sigma2) {
  const Matrix jac = ggn.restrict_cols(jacobian(model, x));
  const Matrix w = ggn.whiten_rows(jac);
  LaplacePredictive lp;
  lp.mean = forward(model, x);
  lp.sigma2 = sigma2;
  lp.covariance = sigma2 * (Matrix::Identity(jac.rows(), jac.rows()) + w.transpose() * w);
  return lp;
}

PredictionSet la_interval(double prediction, double leverage, double sigma2, double alpha) {
  const double z = stats::normal_quantile(1.0 - alpha / 2.0);
  const double half = z * std::sqrt(sigma2 * (1.0 + std::max(0.0, leverage)));
  return PredictionSet::single({prediction - half, prediction + half}, alpha);
}

PredictionSet la_interval(const MlpModel& model, const GgnState& ggn, const Eigen::Ref<const Vector>& x,
                          double sigma2, double alpha) {
  if (model.output_dim() != 1) throw Error("la_interval is scalar; use la_predictive for O > 1");
  const double h = ggn.leverage(jacobian(model, x).row(0).transpose());
  return la_interval(forward(model, x)(0), h, sigma2, alpha);
}

double unit_ball_volume(Index dim) {
  const double o = static_cast<double>(dim);
  return std::pow(std::numbers::pi, o / 2.0) / std::tgamma(o / 2.0 + 1.0);
}

double ellipsoid_volume(const LaplacePredictive& lp, double alpha) {
  const Index o = lp.outputs();
  const double chi2 = stats::chi2_quantile(1.0 - alpha, static_cast<double>(o));
  const double det = lp.covariance.determinant();
  if (!(det > 0.0)) throw Error("predictive covariance is not positive-definite");
  return std::pow(chi2, static_cast<double>(o) / 2.0) * std::sqrt(det) * unit_ball_volume(o);
}

bool ellipsoid_contains(const LaplacePredictive& lp, double alpha, const Eigen::Ref<const Vector>& y) {
  const Vector d = y - lp.mean;
  const double m = d.dot(lp.covariance.llt().solve(d));
  return m <= stats::chi2_quantile(1.0 - alpha, static_cast<double>(lp.outputs()));
}

}  // namespace acpgn
