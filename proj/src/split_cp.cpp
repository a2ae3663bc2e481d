#include "acpgn/split_cp.hpp"

#include <algorithm>
#include <cmath>

namespace acpgn {

CalibratedScores scp_scores(const Vector& residuals, ScpVariant variant, const Vector& leverages) {
  if (residuals.size() == 0) throw Error("empty calibration set");
  CalibratedScores cs;
  cs.variant = variant;
  cs.normalizers = Vector::Ones(residuals.size());
  if (variant == ScpVariant::gn_normalized) {
    if (leverages.size() != residuals.size()) throw Error("one leverage per calibration residual required");
    cs.normalizers = (1.0 + leverages.array().max(0.0)).sqrt();
  }
  cs.scores = residuals.cwiseAbs().cwiseQuotient(cs.normalizers);
  return cs;
}

CalibratedScores scp_calibrate(const MlpModel& model, const Matrix& calib_inputs, const Vector& calib_targets,
                               ScpVariant variant, const GgnState* ggn) {
  if (calib_inputs.rows() == 0) throw Error("empty calibration set");
  if (model.output_dim() != 1) throw Error("split CP supports scalar outputs only");
  const Vector residuals = calib_targets - forward_batch(model, calib_inputs).col(0);
  Vector lev;
  if (variant == ScpVariant::gn_normalized) {
    if (!ggn) throw Error("GN-normalized split CP needs a GGN built on the training split");
    lev = ggn->whiten_rows(stacked_jacobians(model, calib_inputs)).colwise().squaredNorm().transpose();
  }
  return scp_scores(residuals, variant, lev);
}

double scp_quantile(const CalibratedScores& cs, double alpha) {
  const Index m = cs.scores.size();
  if (m < 1) throw Error("empty calibration set");
  const Index k = conformal_rank_threshold(alpha, m);
  if (k > m) return kInf;
  if (k < 1) return -kInf;
  std::vector<double> s(cs.scores.data(), cs.scores.data() + m);
  std::nth_element(s.begin(), s.begin() + (k - 1), s.end());
  return s[static_cast<std::size_t>(k - 1)];
}

PredictionSet scp_interval(double prediction, double q, double leverage, ScpVariant variant, double alpha) {
  const double half = variant == ScpVariant::gn_normalized ? q * std::sqrt(1.0 + std::max(0.0, leverage)) : q;
  PredictionSet ps = PredictionSet::single({prediction - half, prediction + half}, alpha);
  return ps;
}

PredictionSet scp_interval(const MlpModel& model, const Eigen::Ref<const Vector>& x, double q, ScpVariant variant,
                           const GgnState* ggn, double alpha) {
  const double f = forward(model, x)(0);
  double h = 0.0;
  if (variant == ScpVariant::gn_normalized) {
    if (!ggn) throw Error("GN-normalized split CP needs a GGN");
    h = ggn->leverage(jacobian(model, x).row(0).transpose());
  }
  return scp_interval(f, q, h, variant, alpha);
}

}  // namespace acpgn
