#include "acpgn/crr.hpp"

#include <algorithm>
#include <cmath>

namespace acpgn {

std::string to_string(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::standard: return "standard";
    case ScoreVariant::deleted: return "deleted";
    case ScoreVariant::studentized: return "studentized";
  }
  return "?";
}

ScoreVariant parse_score_variant(const std::string& s) {
  if (s == "standard") return ScoreVariant::standard;
  if (s == "deleted") return ScoreVariant::deleted;
  if (s == "studentized") return ScoreVariant::studentized;
  throw Error("unknown score variant '" + s + "' (expected standard, deleted or studentized)");
}

std::string to_string(SetShape s) {
  switch (s) {
    case SetShape::interval: return "interval";
    case SetShape::union_of_rays: return "union_of_rays";
    case SetShape::ray: return "ray";
    case SetShape::full_line: return "full_line";
    case SetShape::point: return "point";
    case SetShape::empty: return "empty";
  }
  return "?";
}

CrrCoefficients exact_ridge_coeffs(const Matrix& features, const Vector& targets,
                                   const Eigen::Ref<const Vector>& x_new, double delta) {
  if (!(delta > 0.0)) throw Error("ridge regularizer must be positive");
  if (features.rows() != targets.size() || features.cols() != x_new.size())
    throw Error("exact_ridge_coeffs: dimension mismatch");
  const Index n = features.rows();
  Matrix h = features.transpose() * features;
  h.diagonal().array() += delta;
  const Eigen::LLT<Matrix> llt(h);
  const Vector theta = llt.solve(Vector(features.transpose() * targets));
  const Vector dir = llt.solve(Vector(x_new));
  const double h_new = x_new.dot(dir);
  const double f_new = x_new.dot(theta);
  const Vector cross = features * dir;

  CrrCoefficients c;
  c.source = CoeffSource::exact_ridge;
  c.a.resize(n + 1);
  c.b.resize(n + 1);
  const double scale = 1.0 / (1.0 + h_new);
  c.a.head(n) = targets - features * theta + cross * (scale * f_new);
  c.b.head(n) = -cross * scale;
  c.a(n) = -f_new * scale;
  c.b(n) = scale;
  return c;
}

AcpGnContext make_acp_gn_context(const GgnState& ggn, const Matrix& jac_rows, const Vector& targets,
                                 const Vector& predictions, const Vector& theta_star, bool refined) {
  if (jac_rows.rows() != targets.size() || predictions.size() != targets.size())
    throw Error("make_acp_gn_context: one Jacobian row, target and prediction per example");
  AcpGnContext ctx;
  ctx.ggn = &ggn;
  ctx.phi = ggn.restrict_cols(jac_rows);
  ctx.targets = targets;
  ctx.theta_star = theta_star;
  ctx.theta_expansion = theta_star;
  ctx.predictions = predictions;
  if (refined) {
    const Vector residuals = targets - predictions;
    ctx.theta_expansion = refine(ggn, jac_rows, theta_star, residuals);
    const Vector shift = ggn.restrict(ctx.theta_expansion) - ggn.restrict(theta_star);
    ctx.predictions = predictions + ctx.phi * shift;
    ctx.source = CoeffSource::refined;
  }
  ctx.self_leverage.resize(ctx.size());
  const Matrix whitened = ggn.whiten_rows(ctx.phi);
  ctx.self_leverage = whitened.colwise().squaredNorm().transpose();
  return ctx;
}

AcpGnContext make_acp_gn_context(const MlpModel& model, const GgnState& ggn, const Matrix& inputs,
                                 const Vector& targets, bool refined) {
  if (model.output_dim() != 1) throw Error("scalar ACP-GN needs a single-output model");
  const Matrix jac = stacked_jacobians(model, inputs);
  const Vector pred = forward_batch(model, inputs).col(0);
  return make_acp_gn_context(ggn, jac, targets, pred, model.theta, refined);
}

double context_prediction(const AcpGnContext& ctx, const MlpModel& model, const Eigen::Ref<const Vector>& x,
                          const Matrix& jac_x) {
  const double f = forward(model, x)(0);
  if (ctx.source != CoeffSource::refined) return f;
  const GgnState& g = *ctx.ggn;
  return f + g.restrict_cols(jac_x).row(0).dot(g.restrict(ctx.theta_expansion) - g.restrict(ctx.theta_star));
}

CrrCoefficients acp_gn_coeffs(const AcpGnContext& ctx, const Eigen::Ref<const Vector>& phi_new, double f_new) {
  const GgnState& g = *ctx.ggn;
  const Vector dir = g.solve(phi_new);
  const Vector phi = phi_new.size() == g.effective_dim() ? Vector(phi_new) : g.restrict(phi_new);
  const double h_new = std::max(0.0, phi.dot(dir));
  const Vector cross = ctx.phi * dir;
  const Index n = ctx.size();
  const double scale = 1.0 / (1.0 + h_new);

  CrrCoefficients c;
  c.source = ctx.source;
  c.a.resize(n + 1);
  c.b.resize(n + 1);
  c.a.head(n) = ctx.targets - ctx.predictions + cross * (scale * f_new);
  c.b.head(n) = -cross * scale;
  c.a(n) = -f_new * scale;
  c.b(n) = scale;
  return c;
}

Vector augmented_leverages(const AcpGnContext& ctx, const Eigen::Ref<const Vector>& phi_new) {
  const GgnState& g = *ctx.ggn;
  const Vector dir = g.solve(phi_new);
  const Vector phi = phi_new.size() == g.effective_dim() ? Vector(phi_new) : g.restrict(phi_new);
  const double h_new = std::max(0.0, phi.dot(dir));
  const Vector cross = ctx.phi * dir;
  const Index n = ctx.size();
  Vector out(n + 1);
  out.head(n) = (ctx.self_leverage.array() - cross.array().square() / (1.0 + h_new)).max(0.0);
  out(n) = h_new / (1.0 + h_new);
  return out;
}

Vector augmented_leverages_ridge(const Matrix& features, const Eigen::Ref<const Vector>& x_new, double delta) {
  Matrix h = features.transpose() * features;
  h.diagonal().array() += delta;
  const Eigen::LLT<Matrix> llt(h);
  const Matrix w = llt.matrixL().solve(Matrix(features.transpose()));
  const Vector dir = llt.solve(Vector(x_new));
  const double h_new = x_new.dot(dir);
  const Vector cross = features * dir;
  const Index n = features.rows();
  Vector out(n + 1);
  out.head(n) = (w.colwise().squaredNorm().transpose().array() - cross.array().square() / (1.0 + h_new)).max(0.0);
  out(n) = h_new / (1.0 + h_new);
  return out;
}

CrrCoefficients transform_scores(const CrrCoefficients& c, ScoreVariant variant, const Vector& h_bar) {
  if (c.variant != ScoreVariant::standard) throw Error("coefficients are already normalized");
  if (variant == ScoreVariant::standard) return c;
  if (h_bar.size() != c.a.size()) throw Error("transform_scores: one augmented leverage per coefficient");
  CrrCoefficients out = c;
  out.variant = variant;
  Index clamped = 0;
  for (Index i = 0; i < c.a.size(); ++i) {
    double denom = 1.0 - h_bar(i);
    if (denom < 1e-12) {
      denom = 1e-12;
      ++clamped;
    }
    const double s = variant == ScoreVariant::deleted ? 1.0 / denom : 1.0 / std::sqrt(denom);
    out.a(i) *= s;
    out.b(i) *= s;
  }
  if (clamped > 0)
    out.warnings.push_back(std::to_string(clamped) + " high-leverage point(s): 1 - h_bar clamped to 1e-12");
  return out;
}

SignedChangepoints changepoints_signed(const CrrCoefficients& c) {
  const Index n = c.n_train();
  SignedChangepoints cp{Vector(n), Vector(n)};
  const double a_new = c.a(n), b_new = c.b(n);
  for (Index i = 0; i < n; ++i) {
    const double slope = b_new - c.b(i);
    if (slope > kSlopeTol) {
      cp.lower(i) = cp.upper(i) = (c.a(i) - a_new) / slope;
    } else {
      cp.lower(i) = -kInf;
      cp.upper(i) = kInf;
    }
  }
  return cp;
}

PredictionSet interval_signed(const SignedChangepoints& cp, double alpha, Index n) {
  if (cp.lower.size() != n || cp.upper.size() != n) throw Error("interval_signed: expected n changepoints");
  std::vector<double> lo(cp.lower.data(), cp.lower.data() + n);
  std::vector<double> hi(cp.upper.data(), cp.upper.data() + n);
  std::sort(lo.begin(), lo.end());
  std::sort(hi.begin(), hi.end());
  const double np1 = static_cast<double>(n + 1);
  const Index li = floor_guarded(np1 * (alpha / 2.0));
  const Index ui = ceil_guarded(np1 * (1.0 - alpha / 2.0));
  auto order_stat = [&](const std::vector<double>& v, Index k) {
    if (k < 1) return -kInf;
    if (k > n) return kInf;
    return v[static_cast<std::size_t>(k - 1)];
  };
  PredictionSet ps = PredictionSet::single({order_stat(lo, li), order_stat(hi, ui)}, alpha);
  ps.rank_threshold = conformal_rank_threshold(alpha, n);
  for (double v : lo)
    if (std::isfinite(v)) ps.changepoints.push_back(v);
  return ps;
}

bool AbsoluteSet::contains(double y) const {
  return std::any_of(pieces.begin(), pieces.end(), [&](const Interval& iv) { return iv.contains(y); });
}

std::vector<AbsoluteSet> changepoints_absolute(const CrrCoefficients& c) {
  const Index n = c.n_train();
  double a_new = c.a(n), b_new = c.b(n);
  if (b_new < 0.0) {
    a_new = -a_new;
    b_new = -b_new;
  }
  std::vector<AbsoluteSet> sets(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    double a = c.a(i), b = c.b(i);
    if (b < 0.0) {
      a = -a;
      b = -b;
    }
    // S_i = {y : g1(y) * g2(y) <= 0} with g1 = (a - a_new) + (b - b_new) y,
    // g2 = (a + a_new) + (b + b_new) y.
    const double d1 = b - b_new;
    const double s = b + b_new;
    AbsoluteSet& out = sets[static_cast<std::size_t>(i)];
    if (s <= kSlopeTol) {
      out.shape = std::abs(a) <= std::abs(a_new) ? SetShape::full_line : SetShape::empty;
    } else if (std::abs(d1) <= kSlopeTol) {
      const double gap = a - a_new;
      if (std::abs(gap) <= kSlopeTol) {
        out.shape = SetShape::full_line;
      } else {
        const double r = -(a + a_new) / s;
        out.shape = SetShape::ray;
        out.changepoints = {r};
        out.pieces = {gap > 0.0 ? Interval{-kInf, r} : Interval{r, kInf}};
        continue;
      }
    } else {
      const double r1 = -(a - a_new) / d1;
      const double r2 = -(a + a_new) / s;
      const double lo = std::min(r1, r2), hi = std::max(r1, r2);
      out.changepoints = {lo, hi};
      if (d1 > 0.0) {
        out.shape = lo == hi ? SetShape::point : SetShape::interval;
        out.pieces = {{lo, hi}};
      } else if (lo == hi) {
        out.shape = SetShape::full_line;
      } else {
        out.shape = SetShape::union_of_rays;
        out.pieces = {{-kInf, lo}, {hi, kInf}};
      }
      if (out.shape != SetShape::full_line) continue;
    }
    if (out.shape == SetShape::full_line) out.pieces = {{-kInf, kInf}};
  }
  return sets;
}

RankSweep::RankSweep(const std::vector<AbsoluteSet>& sets) {
  for (const auto& s : sets)
    for (const auto& iv : s.pieces) {
      if (std::isfinite(iv.lo)) points_.push_back(iv.lo);
      if (std::isfinite(iv.hi)) points_.push_back(iv.hi);
    }
  std::sort(points_.begin(), points_.end());
  points_.erase(std::unique(points_.begin(), points_.end()), points_.end());

  const std::size_t m = points_.size();
  std::vector<Index> starts(m, 0), ends(m, 0);
  Index open = 1;  // the test point always ranks itself
  auto idx = [&](double v) {
    return static_cast<std::size_t>(std::lower_bound(points_.begin(), points_.end(), v) - points_.begin());
  };
  for (const auto& s : sets)
    for (const auto& iv : s.pieces) {
      if (std::isfinite(iv.lo)) ++starts[idx(iv.lo)];
      else ++open;
      if (std::isfinite(iv.hi)) ++ends[idx(iv.hi)];
    }

  gap_rank_.resize(m + 1);
  point_rank_.resize(m);
  gap_rank_[0] = open;
  for (std::size_t k = 0; k < m; ++k) {
    point_rank_[k] = open + starts[k];
    open = point_rank_[k] - ends[k];
    gap_rank_[k + 1] = open;
  }
}

Index RankSweep::rank_at(double y) const {
  const auto it = std::lower_bound(points_.begin(), points_.end(), y);
  const auto k = static_cast<std::size_t>(it - points_.begin());
  if (it != points_.end() && *it == y) return point_rank_[k];
  return gap_rank_[k];
}

PredictionSet predset_absolute(const std::vector<AbsoluteSet>& sets, double alpha, Index n) {
  if (static_cast<Index>(sets.size()) != n) throw Error("predset_absolute: expected n sets");
  const RankSweep sweep(sets);
  const Index threshold = conformal_rank_threshold(alpha, n);
  const auto& pts = sweep.points();
  const std::size_t m = pts.size();

  std::vector<Interval> pieces;
  // Elements in order: gap 0, point 0, gap 1, ..., point m-1, gap m.
  bool in_run = false;
  double run_start = 0.0;
  auto open_run = [&](double at) {
    if (!in_run) {
      in_run = true;
      run_start = at;
    }
  };
  auto close_run = [&](double at) {
    if (in_run) {
      pieces.push_back({run_start, at});
      in_run = false;
    }
  };
  for (std::size_t k = 0; k <= m; ++k) {
    const double left = k == 0 ? -kInf : pts[k - 1];
    const double right = k == m ? kInf : pts[k];
    if (sweep.gap_rank(k) <= threshold) open_run(left);
    else close_run(left);
    if (k == m) break;
    if (sweep.point_rank(k) <= threshold) open_run(right);
    else close_run(right);
  }
  close_run(kInf);

  PredictionSet ps;
  ps.alpha = alpha;
  ps.rank_threshold = threshold;
  ps.per_output.push_back(normalize_intervals(std::move(pieces)));
  ps.changepoints = pts;
  return ps;
}

PredictionSet conformal_set(const CrrCoefficients& c, double alpha, SetPipeline pipeline) {
  const Index n = c.n_train();
  if (pipeline == SetPipeline::automatic)
    pipeline = n > kSignedPipelineMinN ? SetPipeline::signed_residual : SetPipeline::absolute;
  PredictionSet ps = pipeline == SetPipeline::absolute ? predset_absolute(changepoints_absolute(c), alpha, n)
                                                       : interval_signed(changepoints_signed(c), alpha, n);
  ps.warnings.insert(ps.warnings.end(), c.warnings.begin(), c.warnings.end());
  return ps;
}

}  // namespace acpgn
