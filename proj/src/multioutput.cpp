#include "acpgn/multioutput.hpp"

#include <cmath>

namespace acpgn {
namespace {

Matrix sym(const Matrix& m) { return 0.5 * (m + m.transpose()); }

bool positive_definite(const Matrix& m) {
  const Eigen::SelfAdjointEigenSolver<Matrix> es(sym(m), Eigen::EigenvaluesOnly);
  return es.info() == Eigen::Success && es.eigenvalues().minCoeff() > kSlopeTol;
}

}  // namespace

AcpGnMultiContext make_acp_gn_multi_context(const GgnState& ggn, const Matrix& jac_rows, const Matrix& targets,
                                            const Matrix& predictions) {
  if (targets.rows() != predictions.rows() || targets.cols() != predictions.cols())
    throw Error("targets and predictions must have the same shape");
  const Index o = targets.cols();
  if (jac_rows.rows() != targets.rows() * o) throw Error("expected N*O Jacobian rows");
  AcpGnMultiContext ctx;
  ctx.ggn = &ggn;
  ctx.outputs = o;
  ctx.phi = ggn.restrict_cols(jac_rows);
  ctx.targets = targets;
  ctx.predictions = predictions;
  const Matrix w = ggn.whiten_rows(ctx.phi);  // D x (N*O)
  ctx.self_v.resize(static_cast<std::size_t>(targets.rows()));
  for (Index i = 0; i < targets.rows(); ++i) {
    const auto wi = w.middleCols(i * o, o);
    ctx.self_v[static_cast<std::size_t>(i)] = wi.transpose() * wi;
  }
  return ctx;
}

AcpGnMultiContext make_acp_gn_multi_context(const MlpModel& model, const GgnState& ggn, const Matrix& inputs,
                                            const Matrix& targets) {
  return make_acp_gn_multi_context(ggn, stacked_jacobians(model, inputs), targets, forward_batch(model, inputs));
}

MultiCrrCoefficients multioutput_coeffs(const AcpGnMultiContext& ctx, const Matrix& jac_new, const Vector& f_new) {
  const GgnState& g = *ctx.ggn;
  const Index o = ctx.outputs;
  const Matrix phi_new = g.restrict_cols(jac_new);
  if (phi_new.rows() != o || f_new.size() != o) throw Error("test Jacobian/prediction has the wrong output count");
  const Matrix dir = g.solve_many(Matrix(phi_new.transpose()));  // D x O
  const Matrix v_new = sym(phi_new * dir);
  const Matrix eye = Matrix::Identity(o, o);
  const Matrix gain = (eye + v_new).llt().solve(eye);
  const Vector gain_f = gain * f_new;
  const Index n = ctx.size();

  MultiCrrCoefficients c;
  c.a.resize(static_cast<std::size_t>(n + 1));
  c.B.resize(static_cast<std::size_t>(n + 1));
  const Matrix cross_all = ctx.phi * dir;  // (N*O) x O, block i is V_{i,N+1}
  for (Index i = 0; i < n; ++i) {
    const Matrix vin = cross_all.middleRows(i * o, o);
    c.a[static_cast<std::size_t>(i)] = (ctx.targets.row(i) - ctx.predictions.row(i)).transpose() + vin * gain_f;
    c.B[static_cast<std::size_t>(i)] = -vin * gain;
  }
  c.a.back() = -gain_f;
  c.B.back() = gain;
  return c;
}

std::vector<Matrix> augmented_leverage_blocks(const AcpGnMultiContext& ctx, const Matrix& jac_new) {
  const GgnState& g = *ctx.ggn;
  const Index o = ctx.outputs;
  const Matrix phi_new = g.restrict_cols(jac_new);
  const Matrix dir = g.solve_many(Matrix(phi_new.transpose()));
  const Matrix v_new = sym(phi_new * dir);
  const Matrix eye = Matrix::Identity(o, o);
  const Matrix gain = (eye + v_new).llt().solve(eye);
  const Matrix cross_all = ctx.phi * dir;
  const Index n = ctx.size();
  std::vector<Matrix> out(static_cast<std::size_t>(n + 1));
  for (Index i = 0; i < n; ++i) {
    const Matrix vin = cross_all.middleRows(i * o, o);
    out[static_cast<std::size_t>(i)] = sym(ctx.self_v[static_cast<std::size_t>(i)] - vin * gain * vin.transpose());
  }
  out.back() = sym(v_new * gain);
  return out;
}

MultiCrrCoefficients transform_scores(const MultiCrrCoefficients& c, ScoreVariant variant,
                                      const std::vector<Matrix>& v_bar) {
  if (c.variant != ScoreVariant::standard) throw Error("coefficients are already normalized");
  if (variant == ScoreVariant::standard) return c;
  if (v_bar.size() != c.a.size()) throw Error("one augmented leverage block per coefficient required");
  MultiCrrCoefficients out = c;
  out.variant = variant;
  const Index o = c.outputs();
  const Matrix eye = Matrix::Identity(o, o);
  Index clamped = 0;
  for (std::size_t i = 0; i < c.a.size(); ++i) {
    const Eigen::SelfAdjointEigenSolver<Matrix> es(sym(eye - v_bar[i]));
    Vector ev = es.eigenvalues();
    if (ev.minCoeff() < 1e-12) {
      ev = ev.cwiseMax(1e-12);
      ++clamped;
    }
    const Vector scale = variant == ScoreVariant::deleted ? Vector(ev.cwiseInverse())
                                                          : Vector(ev.cwiseSqrt().cwiseInverse());
    const Matrix t = es.eigenvectors() * scale.asDiagonal() * es.eigenvectors().transpose();
    out.a[i] = t * c.a[i];
    out.B[i] = t * c.B[i];
  }
  if (clamped > 0)
    out.warnings.push_back(std::to_string(clamped) + " high-leverage point(s): eigenvalues of I - V_bar clamped");
  return out;
}

SignedChangepoints multioutput_changepoints(const MultiCrrCoefficients& c, Index component,
                                            std::vector<std::string>* warnings) {
  const Index n = c.n_train();
  SignedChangepoints cp{Vector(n), Vector(n)};
  Index singular = 0;
  for (Index i = 0; i < n; ++i) {
    const Matrix diff = c.B.back() - c.B[static_cast<std::size_t>(i)];
    bool ok = positive_definite(diff);
    if (ok) {
      const Eigen::FullPivLU<Matrix> lu(diff);
      const Vector sol = lu.solve(Vector(c.a[static_cast<std::size_t>(i)] - c.a.back()));
      if (!lu.isInvertible() || !sol.allFinite()) {
        ok = false;
        ++singular;
      } else {
        cp.lower(i) = cp.upper(i) = sol(component);
      }
    }
    if (!ok) {
      cp.lower(i) = -kInf;
      cp.upper(i) = kInf;
    }
  }
  if (singular > 0 && warnings)
    warnings->push_back(std::to_string(singular) + " numerically singular changepoint system(s) treated as unbounded");
  return cp;
}

PredictionSet multioutput_set(const MultiCrrCoefficients& c, double alpha, bool bonferroni) {
  const Index o = c.outputs();
  const Index n = c.n_train();
  const double level = bonferroni ? alpha / static_cast<double>(o) : alpha;
  PredictionSet ps;
  ps.alpha = alpha;
  ps.rank_threshold = conformal_rank_threshold(level, n);
  ps.warnings = c.warnings;
  std::vector<std::string> warnings;
  for (Index k = 0; k < o; ++k) {
    const PredictionSet one = interval_signed(multioutput_changepoints(c, k, k == 0 ? &warnings : nullptr), level, n);
    ps.per_output.push_back(one.per_output.front());
  }
  ps.warnings.insert(ps.warnings.end(), warnings.begin(), warnings.end());
  return ps;
}

PredictionSet multioutput_coeffs_and_set(const AcpGnMultiContext& ctx, const MlpModel& model,
                                         const Eigen::Ref<const Vector>& x_new, double alpha, bool bonferroni,
                                         ScoreVariant variant) {
  if (ctx.outputs < 2) throw Error("multi-output pipeline needs O >= 2");
  const Matrix jac = jacobian(model, x_new);
  MultiCrrCoefficients c = multioutput_coeffs(ctx, jac, forward(model, x_new));
  if (variant != ScoreVariant::standard) c = transform_scores(c, variant, augmented_leverage_blocks(ctx, jac));
  return multioutput_set(c, alpha, bonferroni);
}

}  // namespace acpgn
