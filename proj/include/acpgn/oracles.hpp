#pragma once

#include <memory>
#include <vector>

#include "acpgn/ggn.hpp"
#include "acpgn/mlp.hpp"
#include "acpgn/prediction_set.hpp"

namespace acpgn {

/// Refits a scalar regressor on an augmented dataset.
class Retrainer {
 public:
  virtual ~Retrainer() = default;
  /// Fitted parameters for (inputs, targets).
  virtual Vector fit(const Matrix& inputs, const Vector& targets) const = 0;
  virtual Vector predict(const Vector& params, const Matrix& inputs) const = 0;
};

/// Closed-form ridge on the raw features (no intercept).
class RidgeRetrainer final : public Retrainer {
 public:
  explicit RidgeRetrainer(double delta);
  Vector fit(const Matrix& inputs, const Vector& targets) const override;
  Vector predict(const Vector& params, const Matrix& inputs) const override;

 private:
  double delta_;
};

/// Warm-started network: Adam from theta* for a few epochs at a small
/// constant learning rate. An approximation of retraining from scratch.
class WarmStartMlpRetrainer final : public Retrainer {
 public:
  WarmStartMlpRetrainer(MlpModel start, double delta, int epochs = 50, double lr = 1e-3, std::uint64_t seed = 0);
  Vector fit(const Matrix& inputs, const Vector& targets) const override;
  Vector predict(const Vector& params, const Matrix& inputs) const override;

 private:
  MlpModel start_;
  TrainConfig cfg_;
};

struct FullCpResult {
  std::vector<double> grid;
  std::vector<bool> accepted;
  std::vector<Index> rank;

  std::vector<double> accepted_labels() const;
  /// Runs of consecutive accepted grid points, each padded by half a grid step.
  PredictionSet as_set(double alpha) const;
};

/// Uniform grid spanning [min(y), max(y)].
std::vector<double> label_grid(const Vector& targets, Index points = 50);

/// Grid full conformal prediction: retrain on D_N + (x_new, y) for every grid
/// label and accept y when its rank is within ceil((1 - alpha)(N + 1)).
FullCpResult full_cp_grid(const Retrainer& retrainer, const Matrix& inputs, const Vector& targets,
                          const Eigen::Ref<const Vector>& x_new, const std::vector<double>& y_grid, double alpha);

/// Maximum-likelihood observation noise: mean squared residual, floored at 1e-12.
double la_fit_sigma2(const Vector& residuals);
double la_fit_sigma2(const MlpModel& model, const Matrix& inputs, const Matrix& targets);

struct LaplacePredictive {
  Vector mean;
  Matrix covariance;
  double sigma2 = 1.0;

  Index outputs() const { return mean.size(); }
};

/// Predictive N(f, sigma2 (I + J H^{-1} J^T)) of the linearized Laplace-GGN posterior.
LaplacePredictive la_predictive(const MlpModel& model, const GgnState& ggn, const Eigen::Ref<const Vector>& x,
                                double sigma2);
/// Scalar Gaussian interval f +- z_{1 - alpha/2} sqrt(sigma2 (1 + h)).
PredictionSet la_interval(double prediction, double leverage, double sigma2, double alpha);
PredictionSet la_interval(const MlpModel& model, const GgnState& ggn, const Eigen::Ref<const Vector>& x,
                          double sigma2, double alpha);

double unit_ball_volume(Index dim);
/// Volume of {y : (y - m)^T S^{-1} (y - m) <= chi2_{O, 1 - alpha}}.
double ellipsoid_volume(const LaplacePredictive& lp, double alpha);
bool ellipsoid_contains(const LaplacePredictive& lp, double alpha, const Eigen::Ref<const Vector>& y);

}  // namespace acpgn
