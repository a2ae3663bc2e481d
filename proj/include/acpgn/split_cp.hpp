#pragma once

#include "acpgn/ggn.hpp"
#include "acpgn/mlp.hpp"
#include "acpgn/prediction_set.hpp"

namespace acpgn {

enum class ScpVariant { absolute, gn_normalized };

struct CalibratedScores {
  Vector scores;
  ScpVariant variant = ScpVariant::absolute;
  Vector normalizers;  // sqrt(1 + h_i); all ones for the absolute variant
};

/// Scores from residuals and (optional) leverages.
CalibratedScores scp_scores(const Vector& residuals, ScpVariant variant, const Vector& leverages = {});

/// |y - f| or |y - f| / sqrt(1 + h) on the calibration rows. The GGN must be
/// built on the training split only.
CalibratedScores scp_calibrate(const MlpModel& model, const Matrix& calib_inputs, const Vector& calib_targets,
                               ScpVariant variant, const GgnState* ggn = nullptr);

/// k-th smallest score with k = ceil((1 - alpha)(M + 1)); +inf when k > M.
double scp_quantile(const CalibratedScores& cs, double alpha);

PredictionSet scp_interval(double prediction, double q, double leverage, ScpVariant variant, double alpha);
PredictionSet scp_interval(const MlpModel& model, const Eigen::Ref<const Vector>& x, double q, ScpVariant variant,
                           const GgnState* ggn, double alpha);

}  // namespace acpgn
