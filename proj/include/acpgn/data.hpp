#pragma once

#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "acpgn/types.hpp"

namespace acpgn {

/// Regression data: N rows of I features and O targets.
///
/// When `standardized` is set the stored means/stds are the affine parameters
/// that map standardized values back to the original units.
struct Dataset {
  Matrix features;  // N x I
  Matrix targets;   // N x O
  Vector feature_means, feature_stds;
  Vector target_means, target_stds;
  bool standardized = false;

  Index size() const { return features.rows(); }
  Index input_dim() const { return features.cols(); }
  Index output_dim() const { return targets.cols(); }

  Dataset subset(std::span<const Index> rows) const;
  /// Scalar targets as a vector; throws unless O == 1.
  Vector scalar_targets() const;
  void validate() const;
};

struct SplitPlan {
  std::vector<Index> train_idx;
  std::vector<Index> calib_idx;
  std::vector<Index> test_idx;
  std::uint64_t seed = 0;

  /// train_idx followed by calib_idx, for methods that use all non-test data.
  std::vector<Index> fit_idx() const;
};

struct HoldoutScheme {
  double test_frac = 0.1;
};
struct KFoldScheme {
  int k = 10;
  int repeats = 1;
};
using SplitScheme = std::variant<HoldoutScheme, KFoldScheme>;

/// Reads a comma-separated file whose last `target_cols` columns are targets.
/// A first row that does not parse as numbers is treated as a header.
Dataset load_csv(const std::filesystem::path& path, Index target_cols);
/// All numeric cells of a CSV file (same header rule as load_csv).
Matrix load_csv_matrix(const std::filesystem::path& path);
void save_csv(const std::filesystem::path& path, const Dataset& ds,
              const std::vector<std::string>& header = {});

/// Columnwise zero mean, unit population std. Constant columns keep std 1.
Dataset standardize(const Dataset& ds);
Dataset destandardize(const Dataset& ds);

/// Applies the stored standardization of `reference` to raw feature rows.
Matrix standardize_features(const Dataset& reference, const Matrix& raw);
/// Maps a standardized target value of output `o` back to original units.
double destandardize_target(const Dataset& reference, Index o, double value);
/// Scale factor of output `o` (1 when not standardized).
double target_scale(const Dataset& reference, Index o);

std::vector<SplitPlan> make_splits(Index n, const SplitScheme& scheme,
                                   double calib_frac, std::uint64_t seed);

/// Moves the last round(calib_frac * |train|) training indices into calib_idx.
SplitPlan carve_calibration(const SplitPlan& plan, double calib_frac);

struct SyntheticData {
  Dataset data;
  SplitPlan split;
  std::vector<bool> outlier;  // per row, noise std inflated by 10
};

inline constexpr double kSynthInputLo = -3.0;
inline constexpr double kSynthInputHi = 3.0;
inline constexpr double kSynthLengthscale = 0.5;
inline constexpr double kSynthNoiseStd = 0.1;
inline constexpr double kSynthOutlierProb = 0.1;
inline constexpr double kSynthOutlierScale = 10.0;

/// 1-D GP-prior regression with heavy-noise outliers. Rows [0, n_train) are
/// training points and the remainder are test points.
SyntheticData synth_gp_outliers(Index n_train, Index n_test, std::uint64_t seed);

}  // namespace acpgn
