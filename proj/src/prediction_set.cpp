#include "acpgn/prediction_set.hpp"

#include <algorithm>
#include <cmath>

namespace acpgn {

Index ceil_guarded(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<Index>(r);
  return static_cast<Index>(std::ceil(x));
}

Index floor_guarded(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<Index>(r);
  return static_cast<Index>(std::floor(x));
}

Index conformal_rank_threshold(double alpha, Index n) {
  return ceil_guarded((1.0 - alpha) * static_cast<double>(n + 1));
}

bool PredictionSet::empty() const {
  return std::any_of(per_output.begin(), per_output.end(), [](const auto& v) { return v.empty(); }) ||
         per_output.empty();
}

bool PredictionSet::contains(std::span<const double> y) const {
  if (static_cast<Index>(y.size()) != output_dim()) throw Error("label dimension does not match prediction set");
  for (std::size_t o = 0; o < y.size(); ++o) {
    const auto& pieces = per_output[o];
    if (std::none_of(pieces.begin(), pieces.end(), [&](const Interval& iv) { return iv.contains(y[o]); }))
      return false;
  }
  return true;
}

double PredictionSet::length(Index o) const {
  double total = 0.0;
  for (const auto& iv : per_output.at(static_cast<std::size_t>(o))) total += iv.length();
  return total;
}

double PredictionSet::volume() const {
  double v = 1.0;
  for (Index o = 0; o < output_dim(); ++o) {
    const double len = length(o);
    if (len == 0.0) return 0.0;
    v *= len;
  }
  return v;
}

PredictionSet PredictionSet::affine(std::span<const double> scale, std::span<const double> shift) const {
  PredictionSet out = *this;
  for (std::size_t o = 0; o < out.per_output.size(); ++o) {
    for (auto& iv : out.per_output[o]) {
      iv.lo = iv.lo * scale[o] + shift[o];
      iv.hi = iv.hi * scale[o] + shift[o];
    }
  }
  if (scale.size() == 1)
    for (auto& c : out.changepoints) c = c * scale[0] + shift[0];
  return out;
}

PredictionSet PredictionSet::single(Interval iv, double alpha) {
  PredictionSet ps;
  ps.alpha = alpha;
  if (iv.lo <= iv.hi) ps.per_output.push_back({iv});
  else ps.per_output.emplace_back();
  return ps;
}

std::vector<Interval> normalize_intervals(std::vector<Interval> pieces) {
  std::erase_if(pieces, [](const Interval& iv) { return !(iv.lo <= iv.hi); });
  std::sort(pieces.begin(), pieces.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  std::vector<Interval> out;
  for (const auto& iv : pieces) {
    if (!out.empty() && iv.lo <= out.back().hi) {
      out.back().hi = std::max(out.back().hi, iv.hi);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

nlohmann::json endpoint_to_json(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  return v;
}

double endpoint_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw Error("bad interval endpoint '" + s + "'");
  }
  return j.get<double>();
}

nlohmann::json to_json(const PredictionSet& ps) {
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& pieces : ps.per_output) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& iv : pieces) arr.push_back({endpoint_to_json(iv.lo), endpoint_to_json(iv.hi)});
    outputs.push_back(std::move(arr));
  }
  nlohmann::json j{{"alpha", ps.alpha},
                   {"intervals", std::move(outputs)},
                   {"diagnostics", {{"rank_threshold", ps.rank_threshold}, {"changepoints", ps.changepoints}}}};
  if (!ps.warnings.empty()) j["diagnostics"]["warnings"] = ps.warnings;
  return j;
}

PredictionSet prediction_set_from_json(const nlohmann::json& j) {
  PredictionSet ps;
  ps.alpha = j.at("alpha").get<double>();
  for (const auto& pieces : j.at("intervals")) {
    std::vector<Interval> out;
    for (const auto& iv : pieces) out.push_back({endpoint_from_json(iv.at(0)), endpoint_from_json(iv.at(1))});
    ps.per_output.push_back(std::move(out));
  }
  if (j.contains("diagnostics")) {
    const auto& d = j.at("diagnostics");
    ps.rank_threshold = d.value("rank_threshold", Index{0});
    ps.changepoints = d.value("changepoints", std::vector<double>{});
    ps.warnings = d.value("warnings", std::vector<std::string>{});
  }
  return ps;
}

}  // namespace acpgn
