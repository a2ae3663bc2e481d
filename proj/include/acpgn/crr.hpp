#pragma once

#include <optional>
#include <string>
#include <vector>

#include "acpgn/ggn.hpp"
#include "acpgn/mlp.hpp"
#include "acpgn/prediction_set.hpp"
#include "acpgn/types.hpp"

namespace acpgn {

enum class ScoreVariant { standard, deleted, studentized };
enum class CoeffSource { exact_ridge, acp_gn, refined };

std::string to_string(ScoreVariant v);
ScoreVariant parse_score_variant(const std::string& s);

/// Signed residual of example i at candidate label y is a(i) + b(i) * y.
/// Index N (the last entry) is the test point.
struct CrrCoefficients {
  Vector a;
  Vector b;
  ScoreVariant variant = ScoreVariant::standard;
  CoeffSource source = CoeffSource::exact_ridge;
  std::vector<std::string> warnings;

  Index n_train() const { return a.size() - 1; }
};

/// Equality tolerance for slope comparisons.
inline constexpr double kSlopeTol = 1e-12;

/// Conformalized ridge regression coefficients for the ridge fit on (X, y).
CrrCoefficients exact_ridge_coeffs(const Matrix& features, const Vector& targets,
                                   const Eigen::Ref<const Vector>& x_new, double delta);

/// Everything about the training set that ACP-GN coefficients need, computed
/// once per trained model and reused for every test point.
struct AcpGnContext {
  const GgnState* ggn = nullptr;
  Matrix phi;               // N x D_eff training Jacobian rows
  Vector targets;           // y_i
  Vector predictions;       // f_i(theta*), or the linearized f_i(theta~) when refined
  Vector self_leverage;     // h_i = phi_i^T H^{-1} phi_i
  Vector theta_expansion;   // theta* (or theta~ when refined)
  Vector theta_star;
  CoeffSource source = CoeffSource::acp_gn;

  Index size() const { return phi.rows(); }
};

/// Builds the context for scalar-output `model`. When `refined` is set the
/// linearized network is refitted first and predictions use it.
AcpGnContext make_acp_gn_context(const MlpModel& model, const GgnState& ggn, const Matrix& inputs,
                                 const Vector& targets, bool refined = false);
/// Context from precomputed Jacobians (N x D, full or effective width).
AcpGnContext make_acp_gn_context(const GgnState& ggn, const Matrix& jac_rows, const Vector& targets,
                                 const Vector& predictions, const Vector& theta_star,
                                 bool refined = false);

/// Point prediction used by the coefficients: f(theta*) or the linearized
/// prediction at theta~ for refined contexts.
double context_prediction(const AcpGnContext& ctx, const MlpModel& model, const Eigen::Ref<const Vector>& x,
                          const Matrix& jac_x);

CrrCoefficients acp_gn_coeffs(const AcpGnContext& ctx, const Eigen::Ref<const Vector>& phi_new,
                              double f_new);

/// Augmented leverages h_bar_i for i = 1..N+1 under H + phi_new phi_new^T.
Vector augmented_leverages(const AcpGnContext& ctx, const Eigen::Ref<const Vector>& phi_new);
Vector augmented_leverages_ridge(const Matrix& features, const Eigen::Ref<const Vector>& x_new, double delta);

/// Rescales the coefficients by 1/(1 - h_bar) (deleted) or 1/sqrt(1 - h_bar)
/// (studentized). Denominators are clamped at 1e-12 with a warning.
CrrCoefficients transform_scores(const CrrCoefficients& c, ScoreVariant variant, const Vector& h_bar);

// --- signed (asymmetric) residuals ---

struct SignedChangepoints {
  Vector lower;  // l_i
  Vector upper;  // u_i
};

SignedChangepoints changepoints_signed(const CrrCoefficients& c);
PredictionSet interval_signed(const SignedChangepoints& cp, double alpha, Index n);

// --- absolute residuals (ridge regression confidence machine) ---

enum class SetShape { interval, union_of_rays, ray, full_line, point, empty };
std::string to_string(SetShape s);

/// S_i = {y : |a_i + b_i y| <= |a_N+1 + b_N+1 y|} as up to two closed pieces.
struct AbsoluteSet {
  SetShape shape = SetShape::full_line;
  std::vector<Interval> pieces;
  std::vector<double> changepoints;

  bool contains(double y) const;
};

std::vector<AbsoluteSet> changepoints_absolute(const CrrCoefficients& c);

/// Piecewise-constant rank pi(y) = 1 + #{i : y in S_i} built by a sweep over
/// the sorted changepoints.
class RankSweep {
 public:
  explicit RankSweep(const std::vector<AbsoluteSet>& sets);

  Index rank_at(double y) const;
  const std::vector<double>& points() const { return points_; }
  /// Rank on the open gap to the left of points()[k]; gap k == size() is the
  /// ray to the right of the last point.
  Index gap_rank(std::size_t k) const { return gap_rank_[k]; }
  Index point_rank(std::size_t k) const { return point_rank_[k]; }

 private:
  std::vector<double> points_;
  std::vector<Index> point_rank_;
  std::vector<Index> gap_rank_;
};

PredictionSet predset_absolute(const std::vector<AbsoluteSet>& sets, double alpha, Index n);

/// Region assembly of the chosen pipeline from scalar coefficients.
enum class SetPipeline { absolute, signed_residual, automatic };
inline constexpr Index kSignedPipelineMinN = 2000;
PredictionSet conformal_set(const CrrCoefficients& c, double alpha, SetPipeline pipeline);

}  // namespace acpgn
