#include "acpgn/influence.hpp"

namespace acpgn {

AoiUpdate make_aoi_update(const GgnState& ggn, const Eigen::Ref<const Vector>& phi_new,
                          double base_prediction) {
  AoiUpdate u;
  u.direction = ggn.solve(phi_new);
  const Vector phi = phi_new.size() == ggn.effective_dim() ? Vector(phi_new) : ggn.restrict(phi_new);
  u.leverage = std::max(0.0, phi.dot(u.direction));
  u.base_prediction = base_prediction;
  u.param_offset = ggn.param_offset();
  return u;
}

Vector gn_influence(const Vector& theta_star, const AoiUpdate& upd, double y) {
  if (upd.param_offset + upd.direction.size() > theta_star.size())
    throw Error("gn_influence: parameter dimension mismatch");
  Vector out = theta_star;
  out.segment(upd.param_offset, upd.direction.size()) +=
      ((y - upd.base_prediction) / (1.0 + upd.leverage)) * upd.direction;
  return out;
}

Vector refined_aoi(const Vector& theta_refined, const AoiUpdate& upd, double y) {
  return gn_influence(theta_refined, upd, y);
}

AoiPosterior::AoiPosterior(const GgnState& ggn, const Eigen::Ref<const Vector>& phi_new)
    : ggn_(&ggn), direction_(ggn.solve(phi_new)), leverage_(ggn.leverage(phi_new)) {}

Vector AoiPosterior::solve(const Eigen::Ref<const Vector>& v) const {
  const Vector base = ggn_->solve(v);
  return base - direction_ * (direction_.dot(v.size() == direction_.size() ? Vector(v) : ggn_->restrict(v)) /
                              (1.0 + leverage_));
}

double AoiPosterior::quadratic(const Eigen::Ref<const Vector>& u) const {
  const Vector ue = u.size() == direction_.size() ? Vector(u) : ggn_->restrict(u);
  const double proj = direction_.dot(ue);
  return ggn_->leverage(ue) - proj * proj / (1.0 + leverage_);
}

Matrix AoiPosterior::dense() const {
  const Index d = direction_.size();
  Matrix out(d, d);
  for (Index c = 0; c < d; ++c) out.col(c) = solve(Vector::Unit(d, c));
  return out;
}

AoiUpdateMulti make_aoi_update(const GgnState& ggn, const Matrix& jac_new, const Vector& base_prediction) {
  if (jac_new.rows() != base_prediction.size()) throw Error("one base prediction per Jacobian row required");
  const Matrix phi = ggn.restrict_cols(jac_new);
  AoiUpdateMulti u;
  u.direction = ggn.solve_many(Matrix(phi.transpose()));
  u.v_new = phi * u.direction;
  u.v_new = 0.5 * (u.v_new + u.v_new.transpose()).eval();
  const Index o = phi.rows();
  u.gain = (Matrix::Identity(o, o) + u.v_new).llt().solve(Matrix::Identity(o, o));
  u.base_prediction = base_prediction;
  u.param_offset = ggn.param_offset();
  return u;
}

Vector gn_influence(const Vector& theta_star, const AoiUpdateMulti& upd, const Vector& y) {
  if (y.size() != upd.base_prediction.size()) throw Error("label dimension mismatch");
  Vector out = theta_star;
  out.segment(upd.param_offset, upd.direction.rows()) += upd.direction * (upd.gain * (y - upd.base_prediction));
  return out;
}

}  // namespace acpgn
