#ifndef ATTNFACTOR_RUNNER_HPP
#define ATTNFACTOR_RUNNER_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "attnfactor/common.hpp"
#include "attnfactor/dgp.hpp"
#include "attnfactor/encoder.hpp"

namespace attnfactor::cli {

// ---- Config document -----------------------------------------------------------
// TOML subset: [section] and [section.sub] headers, key = value lines with
// strings, integers, floats, booleans and flat arrays, # comments. Keys are
// flattened to "section.sub.key".

struct ConfigValue {
  std::variant<std::string, std::int64_t, double, bool,
               std::vector<std::string>, std::vector<double>>
      value;

  std::string as_string() const;
  std::int64_t as_int() const;
  double as_double() const;
  bool as_bool() const;
  std::vector<std::string> as_string_array() const;
  std::vector<double> as_double_array() const;
};

class ConfigDoc {
 public:
  static ConfigDoc parse(const std::string& text);
  static ConfigDoc parse_file(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_string_array(const std::string& key,
                                            const std::vector<std::string>& fallback) const;
  std::vector<double> get_double_array(const std::string& key,
                                       const std::vector<double>& fallback) const;
  // Required lookups throw ConfigError naming the key.
  std::string require_string(const std::string& key) const;

  const std::map<std::string, ConfigValue>& entries() const { return entries_; }

 private:
  std::map<std::string, ConfigValue> entries_;
};

// ---- Run plumbing ---------------------------------------------------------------

struct RunOptions {
  std::string command;
  std::filesystem::path config_path;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;  // overrides the config file
  int workers = 1;
};

// Exit codes: 0 success, 2 config error, 3 numerical failure.
int run_command(const RunOptions& options);

// Writes manifest.json into out_dir: config hash, code version, wall time and
// a checksum for every emitted artifact. Returns the artifact map.
std::map<std::string, std::string> write_manifest(const std::filesystem::path& out_dir,
                                                  const std::string& command,
                                                  std::uint64_t config_hash, std::uint64_t seed,
                                                  int workers, double wall_ms);

// Minimal self-contained grayscale SVG rendering of a matrix.
void write_heatmap_svg(const std::filesystem::path& path, const Matrix& m, int cell_px = 8);

// ---- Shared forecasting harness ---------------------------------------------------

// Model zoo entry: standardized-scale forecasts for the test quarters.
struct ModelRun {
  std::string name;
  std::vector<double> forecasts_std;
  double val_mse = 0.0;
};

struct SimTableRow {
  std::string regime;
  std::string model;
  double rmse = 0.0, mae = 0.0, da = 0.0;
};

// Datasets for one target variable on an aligned (high, low) standardized
// panel pair: one sequence per usable quarter, target = standardized value
// `horizon` quarters ahead.
struct TargetDatasets {
  enc::Dataset train, val, test;
  std::vector<int> test_quarters;           // low-frequency row indices of the forecast
  std::vector<double> test_actuals_std;
  std::vector<std::int64_t> test_months;    // forecast-dated months (calendar)
};

TargetDatasets build_target_datasets(const panels::Panel& high_std, const panels::Panel& low_std,
                                     int target_column, int window_months, int horizon, int r,
                                     const dgp::SplitIndices& split, const enc::Ablations& ablations);

// Quarterly split with the canonical proportions (80% train, 10% of that as
// validation, 20% held out), mapped onto both clocks.
dgp::SplitIndices split_quarters(int t_low, int r);

// ---- Simulation study (the engine behind `attnfactor sim` and `ablate`) ---------

struct SimStudyConfig {
  dgp::DgpConfig dgp_base;
  std::vector<std::string> regimes{"linear", "rbf6", "rbf12"};
  int window_months = 12;
  int horizon = 1;
  int search_trials = 2;
  enc::EncoderConfig model;
  enc::TrainHyper hyper;
  enc::SearchSpace space;
  bool ablations = true;  // train AB1-AB5 alongside the full model
  std::vector<std::string> models_extra{"ar", "midas"};
  int ar_p_max = 8;
  int midas_lags = 4;
};

struct SimRegimeResult {
  std::string regime;
  std::vector<SimTableRow> rows;
  std::map<std::string, std::vector<double>> forecasts_raw;  // per model
  std::vector<double> actuals_raw;
  std::vector<std::int64_t> forecast_months;
  enc::SearchResult search;
};

struct SimStudyResult {
  std::vector<SimRegimeResult> regimes;
};

SimStudyResult run_sim_study(const SimStudyConfig& config, std::uint64_t seed);

// Maps a regime name ("linear", "rbf6", "rbf12") onto the base DGP config.
dgp::DgpConfig regime_config(const dgp::DgpConfig& base, const std::string& regime);

}  // namespace attnfactor::cli

#endif
