#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "acpgn/types.hpp"

namespace acpgn {

/// Closed interval; either endpoint may be infinite.
struct Interval {
  double lo = -kInf;
  double hi = kInf;

  bool contains(double y) const { return lo <= y && y <= hi; }
  double length() const { return hi - lo; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Union of disjoint closed intervals per output dimension (a hyperrectangle
/// when every output has a single interval).
struct PredictionSet {
  std::vector<std::vector<Interval>> per_output;
  double alpha = 0.1;
  Index rank_threshold = 0;
  std::vector<double> changepoints;  // sorted, finite
  std::vector<std::string> warnings;

  Index output_dim() const { return static_cast<Index>(per_output.size()); }
  bool empty() const;
  bool contains(std::span<const double> y) const;
  bool contains(double y) const { return contains(std::span<const double>(&y, 1)); }
  /// Total length of the union for output `o`.
  double length(Index o = 0) const;
  /// Product of per-output lengths.
  double volume() const;
  /// Shifts and scales every endpoint: lo -> lo * scale[o] + shift[o].
  PredictionSet affine(std::span<const double> scale, std::span<const double> shift) const;

  static PredictionSet single(Interval iv, double alpha);
};

/// Sorts, drops empty pieces and merges overlapping or touching intervals.
std::vector<Interval> normalize_intervals(std::vector<Interval> pieces);

/// Endpoints serialize as numbers, with "-inf"/"inf" strings for infinities.
nlohmann::json to_json(const PredictionSet& ps);
nlohmann::json endpoint_to_json(double v);
double endpoint_from_json(const nlohmann::json& j);
PredictionSet prediction_set_from_json(const nlohmann::json& j);

/// k = ceil((1 - alpha)(n + 1)) computed with a guard against round-off
/// (e.g. 0.9 * 10 must give 9, not 10).
Index conformal_rank_threshold(double alpha, Index n);
Index ceil_guarded(double x);
Index floor_guarded(double x);

}  // namespace acpgn
