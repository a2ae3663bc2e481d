#pragma once

#include "acpgn/ggn.hpp"
#include "acpgn/types.hpp"

namespace acpgn {

/// Per-test-point add-one-in state: the label enters only through a scalar.
struct AoiUpdate {
  Vector direction;            // H^{-1} phi_new (effective parameter block)
  double leverage = 0.0;       // phi_new^T H^{-1} phi_new
  double base_prediction = 0.0;  // f_new at the expansion point
  Index param_offset = 0;      // where `direction` sits inside theta
};

AoiUpdate make_aoi_update(const GgnState& ggn, const Eigen::Ref<const Vector>& phi_new,
                          double base_prediction);

/// theta + (y - f_new) / (1 + h_new) * H^{-1} phi_new
Vector gn_influence(const Vector& theta_star, const AoiUpdate& upd, double y);

/// Same update around the refined parameters; `upd.base_prediction` must be
/// the linearized prediction at theta_refined.
Vector refined_aoi(const Vector& theta_refined, const AoiUpdate& upd, double y);

/// Covariance (H + phi phi^T)^{-1} of the perturbed Laplace posterior,
/// answered through Sherman-Morrison on the existing factorization.
class AoiPosterior {
 public:
  AoiPosterior(const GgnState& ggn, const Eigen::Ref<const Vector>& phi_new);

  Vector solve(const Eigen::Ref<const Vector>& v) const;
  /// u^T Sigma+ u
  double quadratic(const Eigen::Ref<const Vector>& u) const;
  Matrix dense() const;

 private:
  const GgnState* ggn_;
  Vector direction_;
  double leverage_;
};

/// Multi-output update: `direction` is H^{-1} J_new^T (D x O) and
/// `gain` is (I + V_new)^{-1} with V_new = J_new H^{-1} J_new^T.
struct AoiUpdateMulti {
  Matrix direction;
  Matrix v_new;
  Matrix gain;
  Vector base_prediction;
  Index param_offset = 0;
};

AoiUpdateMulti make_aoi_update(const GgnState& ggn, const Matrix& jac_new, const Vector& base_prediction);
Vector gn_influence(const Vector& theta_star, const AoiUpdateMulti& upd, const Vector& y);

}  // namespace acpgn
