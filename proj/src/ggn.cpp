#include "acpgn/ggn.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace acpgn {

Vector GgnState::restrict(const Eigen::Ref<const Vector>& v) const {
  if (v.size() != full_dim_) throw Error("expected a full parameter-space vector");
  return v.segment(offset_, dim_);
}

Matrix GgnState::restrict_cols(const Matrix& rows) const {
  if (rows.cols() == dim_) return rows;
  if (rows.cols() != full_dim_) throw Error("Jacobian rows have the wrong width");
  return rows.middleCols(offset_, dim_);
}

Vector GgnState::effective(const Eigen::Ref<const Vector>& v) const {
  if (v.size() == dim_) return v;
  if (v.size() == full_dim_) return v.segment(offset_, dim_);
  throw Error("vector of size " + std::to_string(v.size()) + " does not match GGN dimension " +
              std::to_string(dim_));
}

Vector GgnState::solve(const Eigen::Ref<const Vector>& v) const { return llt_.solve(effective(v)); }

Matrix GgnState::solve_many(const Matrix& m) const {
  if (m.rows() != dim_) throw Error("GgnState::solve: row count mismatch");
  return llt_.solve(m);
}

Vector GgnState::whiten(const Eigen::Ref<const Vector>& v) const {
  return llt_.matrixL().solve(effective(v));
}

Matrix GgnState::whiten_rows(const Matrix& rows) const {
  return llt_.matrixL().solve(Matrix(restrict_cols(rows).transpose()));
}

double GgnState::leverage(const Eigen::Ref<const Vector>& phi) const {
  return whiten(phi).squaredNorm();
}

double GgnState::cross_leverage(const Eigen::Ref<const Vector>& phi_i,
                                const Eigen::Ref<const Vector>& phi_j) const {
  return whiten(phi_i).dot(whiten(phi_j));
}

double GgnState::augmented_leverage(const Eigen::Ref<const Vector>& phi_i,
                                    const Eigen::Ref<const Vector>& phi_new) const {
  const Vector wi = whiten(phi_i);
  const Vector wn = whiten(phi_new);
  const double hi = wi.squaredNorm();
  const double hn = wn.squaredNorm();
  const double hin = wi.dot(wn);
  return std::max(0.0, hi - hin * hin / (1.0 + hn));
}

Matrix GgnState::hessian() const {
  const Matrix l = llt_.matrixL();
  return l * l.transpose();
}

GgnState build_ggn(const Matrix& jac_rows, double delta, GgnMode mode, Index ll_offset) {
  if (!(delta > 0.0)) throw Error("GGN regularizer delta must be positive");
  if (!jac_rows.allFinite()) throw Error("non-finite Jacobian entries");
  GgnState g;
  g.delta_ = delta;
  g.mode_ = mode;
  g.full_dim_ = jac_rows.cols();
  g.offset_ = mode == GgnMode::last_layer ? ll_offset : 0;
  if (g.offset_ < 0 || g.offset_ >= g.full_dim_) throw Error("last-layer offset out of range");
  g.dim_ = g.full_dim_ - g.offset_;

  const auto phi = jac_rows.middleCols(g.offset_, g.dim_);
  Matrix h = Matrix::Zero(g.dim_, g.dim_);
  h.selfadjointView<Eigen::Lower>().rankUpdate(phi.transpose());
  h = h.selfadjointView<Eigen::Lower>();
  h.diagonal().array() += delta;

  g.llt_.compute(h);
  double jitter = 1e-8;
  while (g.llt_.info() != Eigen::Success) {
    if (jitter > 1e2) throw Error("GGN factorization failed even with jitter");
    Matrix hj = h;
    hj.diagonal().array() += jitter;
    g.llt_.compute(hj);
    g.jitter_ = jitter;
    jitter *= 10.0;
  }
  if (g.jitter_ > 0.0)
    g.warnings_.push_back("GGN Cholesky failed; added diagonal jitter " + std::to_string(g.jitter_));
  return g;
}

GgnState build_ggn(const MlpModel& model, const Matrix& inputs, double delta, GgnMode mode) {
  return build_ggn(stacked_jacobians(model, inputs), delta, mode, model.last_layer_offset());
}

DeltaSearchResult grid_search_delta(const Matrix& inputs, const Matrix& targets,
                                    const std::vector<Index>& layer_sizes, const TrainConfig& base,
                                    const std::vector<double>& delta_grid, double val_frac,
                                    std::uint64_t seed) {
  if (delta_grid.empty()) throw Error("delta grid is empty");
  DeltaSearchResult res;
  res.deltas = delta_grid;
  if (delta_grid.size() == 1) {
    res.best_delta = delta_grid.front();
    return res;
  }
  if (!(val_frac > 0.0 && val_frac < 1.0)) throw Error("val_frac must lie in (0, 1)");
  const Index n = inputs.rows();
  const auto n_val = std::max<Index>(1, static_cast<Index>(std::llround(val_frac * static_cast<double>(n))));
  if (n_val >= n) throw Error("too few rows for a validation split");

  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix xt(n - n_val, inputs.cols()), yt(n - n_val, targets.cols());
  Matrix xv(n_val, inputs.cols()), yv(n_val, targets.cols());
  for (Index r = 0; r < n; ++r) {
    const Index src = perm[static_cast<std::size_t>(r)];
    if (r < n_val) {
      xv.row(r) = inputs.row(src);
      yv.row(r) = targets.row(src);
    } else {
      xt.row(r - n_val) = inputs.row(src);
      yt.row(r - n_val) = targets.row(src);
    }
  }

  double best = kInf;
  for (const double d : delta_grid) {
    TrainConfig cfg = base;
    cfg.delta = d;
    const auto fit = train(xt, yt, layer_sizes, cfg);
    const double rmse = std::sqrt((yv - forward_batch(fit.model, xv)).squaredNorm() /
                                  static_cast<double>(yv.size()));
    res.val_rmse.push_back(rmse);
    if (rmse < best) {
      best = rmse;
      res.best_delta = d;
    }
  }
  return res;
}

}  // namespace acpgn
