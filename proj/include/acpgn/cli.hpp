#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "acpgn/crr.hpp"
#include "acpgn/data.hpp"
#include "acpgn/eval.hpp"

namespace acpgn::cli {

/// Settings shared by every subcommand. Read from a JSON config file and
/// overridden field by field from the command line.
struct RunConfig {
  std::string dataset;  // CSV path or "synth:NTRAIN:NTEST"
  Index target_cols = 1;
  std::vector<Index> arch{50};  // hidden layer widths
  std::vector<std::string> methods{"ACP-GN"};
  std::vector<double> alphas{0.1};
  std::string scheme = "holdout";  // holdout | kfold
  double test_frac = 0.1;
  int folds = 10;
  int repeats = 1;
  double calib_frac = 0.5;
  std::uint64_t seed = 0;
  std::vector<double> delta_grid = kDefaultDeltaGrid;
  ScoreVariant score = ScoreVariant::studentized;
  Index grid_points = 50;
  int epochs = 500;
  Index batch_size = 256;
  double lr_initial = 1e-2;
  double lr_final = 1e-5;
  std::string ggn_mode = "full";  // full | last_layer
  std::string pipeline = "automatic";  // automatic | absolute | signed
  std::string out;
  std::string model;  // intervals: trained model file
  std::string test;   // intervals: CSV of test rows

  /// Throws when a method name, score, scheme or numeric field is invalid.
  void validate() const;
  ExperimentConfig experiment() const;
  std::vector<MethodSpec> method_specs() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);

/// Parses "0.1,0.05,0.01" into numbers.
std::vector<double> parse_number_list(const std::string& s);
/// Parses "50,50" into layer widths.
std::vector<Index> parse_arch(const std::string& s);

struct SynthSpec {
  Index n_train = 0;
  Index n_test = 0;
};
/// "synth:500:100" -> {500, 100}; nullopt when the prefix is absent, an
/// error for a malformed "synth:" spec.
std::optional<SynthSpec> parse_synth_spec(const std::string& s);

/// Writes via a sibling temporary file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

/// Entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace acpgn::cli
