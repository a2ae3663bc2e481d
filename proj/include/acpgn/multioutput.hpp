#pragma once

#include <vector>

#include "acpgn/crr.hpp"

namespace acpgn {

/// Vector residual of example i at label y is a[i] + B[i] y. Index N is the
/// test point.
struct MultiCrrCoefficients {
  std::vector<Vector> a;
  std::vector<Matrix> B;
  ScoreVariant variant = ScoreVariant::standard;
  std::vector<std::string> warnings;

  Index n_train() const { return static_cast<Index>(a.size()) - 1; }
  Index outputs() const { return a.empty() ? 0 : a.front().size(); }
};

struct AcpGnMultiContext {
  const GgnState* ggn = nullptr;
  Index outputs = 0;
  Matrix phi;          // (N*O) x D_eff, point-major
  Matrix targets;      // N x O
  Matrix predictions;  // N x O
  std::vector<Matrix> self_v;  // V_i = J_i H^{-1} J_i^T

  Index size() const { return targets.rows(); }
  auto block(Index i) const { return phi.middleRows(i * outputs, outputs); }
};

AcpGnMultiContext make_acp_gn_multi_context(const GgnState& ggn, const Matrix& jac_rows, const Matrix& targets,
                                            const Matrix& predictions);
AcpGnMultiContext make_acp_gn_multi_context(const MlpModel& model, const GgnState& ggn, const Matrix& inputs,
                                            const Matrix& targets);

MultiCrrCoefficients multioutput_coeffs(const AcpGnMultiContext& ctx, const Matrix& jac_new,
                                        const Vector& f_new);

/// Augmented leverage blocks: V_bar_i for i <= N and V_bar_N+1 last.
std::vector<Matrix> augmented_leverage_blocks(const AcpGnMultiContext& ctx, const Matrix& jac_new);

/// Deleted: (I - V_bar_i)^{-1}; studentized: the symmetric inverse square root.
MultiCrrCoefficients transform_scores(const MultiCrrCoefficients& c, ScoreVariant variant,
                                      const std::vector<Matrix>& v_bar);

/// O-dim changepoints (B_N+1 - B_i)^{-1}(a_i - a_N+1) when the difference is
/// positive-definite, otherwise -inf (lower) and +inf (upper) per component.
SignedChangepoints multioutput_changepoints(const MultiCrrCoefficients& c, Index component,
                                            std::vector<std::string>* warnings = nullptr);

/// Hyperrectangle from component-wise order statistics; the per-dimension
/// level is alpha / O under Bonferroni.
PredictionSet multioutput_set(const MultiCrrCoefficients& c, double alpha, bool bonferroni);

PredictionSet multioutput_coeffs_and_set(const AcpGnMultiContext& ctx, const MlpModel& model,
                                         const Eigen::Ref<const Vector>& x_new, double alpha, bool bonferroni,
                                         ScoreVariant variant = ScoreVariant::standard);

}  // namespace acpgn
