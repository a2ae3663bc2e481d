#pragma once

#include <string>
#include <vector>

#include "acpgn/mlp.hpp"
#include "acpgn/types.hpp"

namespace acpgn {

enum class GgnMode { full, last_layer };

/// Cholesky factorization of H = sum_i J_i^T J_i + delta I.
///
/// In last-layer mode only the columns [offset, D) of the supplied Jacobian
/// rows enter H and every query vector lives in that subspace. Query methods
/// accept either effective-size vectors or full-size Jacobian rows.
class GgnState {
 public:
  Index effective_dim() const { return dim_; }
  Index full_dim() const { return full_dim_; }
  Index param_offset() const { return offset_; }
  GgnMode mode() const { return mode_; }
  double delta() const { return delta_; }
  /// Extra diagonal added when the first factorization failed (0 otherwise).
  double jitter() const { return jitter_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Restricts a full-size parameter-space vector to the effective block.
  Vector restrict(const Eigen::Ref<const Vector>& v) const;
  Matrix restrict_cols(const Matrix& rows) const;

  Vector solve(const Eigen::Ref<const Vector>& v) const;
  Matrix solve_many(const Matrix& m) const;
  /// L^{-1} v, so that v^T H^{-1} v = ||whiten(v)||^2.
  Vector whiten(const Eigen::Ref<const Vector>& v) const;
  /// L^{-1} rows^T for a block of Jacobian rows (D_eff x N).
  Matrix whiten_rows(const Matrix& rows) const;

  double leverage(const Eigen::Ref<const Vector>& phi) const;
  double cross_leverage(const Eigen::Ref<const Vector>& phi_i,
                        const Eigen::Ref<const Vector>& phi_j) const;
  /// Leverage of phi_i under H + phi_new phi_new^T (rank-one downdate form).
  double augmented_leverage(const Eigen::Ref<const Vector>& phi_i,
                            const Eigen::Ref<const Vector>& phi_new) const;

  /// Dense H (includes any jitter). Intended for diagnostics and tests.
  Matrix hessian() const;

 private:
  friend GgnState build_ggn(const Matrix&, double, GgnMode, Index);
  Vector effective(const Eigen::Ref<const Vector>& v) const;

  Eigen::LLT<Matrix> llt_;
  double delta_ = 0.0;
  double jitter_ = 0.0;
  GgnMode mode_ = GgnMode::full;
  Index dim_ = 0;
  Index full_dim_ = 0;
  Index offset_ = 0;
  std::vector<std::string> warnings_;
};

/// `jac_rows` holds one Jacobian row per (point, output). `ll_offset` is the
/// first parameter of the output layer and is ignored in full mode.
GgnState build_ggn(const Matrix& jac_rows, double delta, GgnMode mode = GgnMode::full,
                   Index ll_offset = 0);
/// Convenience: Jacobians of `model` at every row of `inputs`.
GgnState build_ggn(const MlpModel& model, const Matrix& inputs, double delta,
                   GgnMode mode = GgnMode::full);

inline const std::vector<double> kDefaultDeltaGrid{1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4};

struct DeltaSearchResult {
  double best_delta = 1.0;
  std::vector<double> deltas;
  std::vector<double> val_rmse;
};

/// Holds out `val_frac` of the rows, trains once per grid value and returns
/// the delta with the lowest validation RMSE. Callers retrain on all rows.
DeltaSearchResult grid_search_delta(const Matrix& inputs, const Matrix& targets,
                                    const std::vector<Index>& layer_sizes,
                                    const TrainConfig& base, const std::vector<double>& delta_grid,
                                    double val_frac, std::uint64_t seed);

}  // namespace acpgn
