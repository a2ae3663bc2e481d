#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "acpgn/crr.hpp"
#include "acpgn/multioutput.hpp"
#include "acpgn/oracles.hpp"
#include "acpgn/split_cp.hpp"
#include "acpgn/data.hpp"
#include "acpgn/ggn.hpp"
#include "acpgn/mlp.hpp"
#include "acpgn/prediction_set.hpp"

namespace acpgn {

struct CoverageWidth {
  double coverage = 0.0;
  double mean_width = 0.0;         // +inf if any set is unbounded
  double finite_mean_width = 0.0;  // over bounded sets only
  Index infinite_count = 0;
  Index n = 0;
};

/// Coverage counts a point when every output lies in its set (closed
/// endpoints). Width is the union length, or the product over outputs.
CoverageWidth coverage_and_width(const std::vector<PredictionSet>& sets, const Matrix& y_true);

struct ValidityResult {
  bool pass = true;
  double lo = 0.0;
  double hi = 1.0;
  Index k = 0;
  std::vector<std::string> warnings;
};

/// Passes when coverage lies within the 1% and 99% quantiles of
/// Beta(k, n_eff + 1 - k), k = ceil((n_eff + 1)(1 - alpha)).
ValidityResult validity_check(double coverage, Index n_eff, double alpha);

enum class MethodKind { la, scp, scp_gn, acp_gn, acp_gn_split_refine, full_cp_grid };

struct MethodSpec {
  MethodKind kind = MethodKind::acp_gn;
  ScoreVariant score = ScoreVariant::studentized;

  std::string name() const;
  bool needs_calibration() const;
};

/// Accepts LA, SCP, SCP-GN, ACP-GN, ACP-GN(standard|deleted|studentized),
/// ACP-GN-split-refine and FULL-CP-grid. `default_score` applies to the
/// ACP-GN variants when no score is given in the name.
MethodSpec parse_method(const std::string& name, ScoreVariant default_score = ScoreVariant::studentized);
const std::vector<std::string>& valid_method_names();

struct ExperimentConfig {
  std::vector<Index> hidden{50};
  TrainConfig train;
  std::vector<double> delta_grid = kDefaultDeltaGrid;  // a single value skips the search
  double val_frac = 0.1;
  SetPipeline pipeline = SetPipeline::automatic;
  GgnMode ggn_mode = GgnMode::full;
  Index grid_points = 50;
  int fullcp_epochs = 50;
  double fullcp_lr = 1e-3;
};

/// Models trained for one split, shared by the methods evaluated on it.
struct FittedModel {
  MlpModel model;
  double delta = 1.0;
  double final_loss = 0.0;
};

class SplitCache {
 public:
  SplitCache(const Dataset& ds, const SplitPlan& split, const ExperimentConfig& cfg);

  /// Model on train_idx + calib_idx.
  const FittedModel& full();
  /// Model on train_idx only.
  const FittedModel& train_only();

  Matrix rows(const std::vector<Index>& idx) const;
  Matrix targets(const std::vector<Index>& idx) const;

 private:
  FittedModel fit(const std::vector<Index>& idx, std::uint64_t salt);

  const Dataset* ds_;
  const SplitPlan* split_;
  const ExperimentConfig* cfg_;
  std::optional<FittedModel> full_;
  std::optional<FittedModel> train_;
};

/// A method fitted around a trained model, ready to produce prediction sets
/// for standardized test inputs. `fit_rows` are the rows the model was
/// trained on; `calib_rows` the held-out calibration rows (split methods).
class PreparedMethod {
 public:
  PreparedMethod(const Dataset& ds, const std::vector<Index>& fit_rows, const std::vector<Index>& calib_rows,
                 const MethodSpec& method, const ExperimentConfig& cfg, const FittedModel& fm);

  /// Prediction set in standardized target units.
  PredictionSet predict(const Eigen::Ref<const Vector>& x, double alpha) const;
  Index n_eff() const { return n_eff_; }
  const MethodSpec& method() const { return method_; }

 private:
  MethodSpec method_;
  ExperimentConfig cfg_;
  MlpModel model_;
  double delta_ = 1.0;
  Index n_eff_ = 0;
  std::unique_ptr<GgnState> ggn_;
  std::unique_ptr<AcpGnContext> ctx_;
  std::unique_ptr<AcpGnMultiContext> multi_ctx_;
  std::unique_ptr<WarmStartMlpRetrainer> retrainer_;
  double sigma2_ = 1.0;
  CalibratedScores scores_;
  Matrix fit_x_;
  Vector fit_y_;
  std::vector<double> grid_;
};

/// Maps a set in standardized target units back to the original units.
PredictionSet to_original_units(const Dataset& ds, const PredictionSet& ps);

struct MethodOutput {
  /// sets[a][t]: prediction set for alpha index a and test point t, in the
  /// units of the original targets.
  std::vector<std::vector<PredictionSet>> sets;
  Index n_eff = 0;
  double runtime_s = 0.0;
};

MethodOutput run_method(const Dataset& ds, const SplitPlan& split, const MethodSpec& method,
                        const std::vector<double>& alphas, const ExperimentConfig& cfg, SplitCache& cache);

struct SplitMetrics {
  Index split = 0;
  double coverage = 0.0;
  double mean_width = 0.0;
  double finite_mean_width = 0.0;
  Index infinite_count = 0;
  Index n_eff = 0;
  bool valid = false;
  double band_lo = 0.0, band_hi = 1.0;
  double runtime_s = 0.0;
};

struct EvalReport {
  std::string method;
  double alpha = 0.1;
  std::vector<SplitMetrics> splits;
  double mean_coverage = 0.0, se_coverage = 0.0;
  double mean_width = 0.0, se_width = 0.0;
  double finite_mean_width = 0.0;
  Index infinite_count = 0;
  Index valid_splits = 0;
  bool valid = false;  // mean coverage inside the band for the mean n_eff
  double mean_runtime_s = 0.0;

  /// Recomputes the aggregates from `splits`.
  void aggregate();
};

std::vector<EvalReport> run_experiment(const Dataset& ds, const std::vector<MethodSpec>& methods,
                                       const std::vector<SplitPlan>& splits, const std::vector<double>& alphas,
                                       const ExperimentConfig& cfg);

/// One synthetic GP-with-outliers dataset per seed; the last calib_frac of
/// each training block becomes the calibration split. Split s of every report
/// corresponds to seeds[s].
std::vector<EvalReport> run_synthetic_experiment(const std::vector<MethodSpec>& methods, Index n_train,
                                                 Index n_test, const std::vector<std::uint64_t>& seeds,
                                                 const std::vector<double>& alphas, double calib_frac,
                                                 const ExperimentConfig& cfg);

double mean(const std::vector<double>& v);
/// Sample standard deviation divided by sqrt(n); 0 for n < 2.
double standard_error(const std::vector<double>& v);

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const std::vector<EvalReport>& reports);
/// One row per method x alpha x split.
std::string reports_csv(const std::vector<EvalReport>& reports);
/// Console table: average width and coverage per method and level.
std::string summary_table(const std::vector<EvalReport>& reports);

}  // namespace acpgn
