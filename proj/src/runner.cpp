#include "attnfactor/runner.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attnfactor/forecast.hpp"
#include "attnfactor/io.hpp"
#include "attnfactor/parallel.hpp"

namespace attnfactor::cli {

// ---- ConfigValue ------------------------------------------------------------------

std::string ConfigValue::as_string() const {
  if (auto* s = std::get_if<std::string>(&value)) return *s;
  throw ConfigError("config value is not a string");
}
std::int64_t ConfigValue::as_int() const {
  if (auto* i = std::get_if<std::int64_t>(&value)) return *i;
  if (auto* d = std::get_if<double>(&value)) return static_cast<std::int64_t>(*d);
  throw ConfigError("config value is not an integer");
}
double ConfigValue::as_double() const {
  if (auto* d = std::get_if<double>(&value)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&value)) return static_cast<double>(*i);
  throw ConfigError("config value is not a number");
}
bool ConfigValue::as_bool() const {
  if (auto* b = std::get_if<bool>(&value)) return *b;
  throw ConfigError("config value is not a boolean");
}
std::vector<std::string> ConfigValue::as_string_array() const {
  if (auto* a = std::get_if<std::vector<std::string>>(&value)) return *a;
  throw ConfigError("config value is not a string array");
}
std::vector<double> ConfigValue::as_double_array() const {
  if (auto* a = std::get_if<std::vector<double>>(&value)) return *a;
  if (auto* s = std::get_if<std::vector<std::string>>(&value)) {
    if (s->empty()) return {};
  }
  throw ConfigError("config value is not a numeric array");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

ConfigValue parse_scalar(const std::string& raw, int line_no) {
  std::string text = trim(raw);
  if (text.empty()) throw ConfigError("empty value at config line " + std::to_string(line_no));
  ConfigValue v;
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"')
      throw ConfigError("unterminated string at config line " + std::to_string(line_no));
    v.value = text.substr(1, text.size() - 2);
    return v;
  }
  if (text == "true" || text == "false") {
    v.value = text == "true";
    return v;
  }
  bool looks_float = text.find_first_of(".eE") != std::string::npos;
  try {
    std::size_t used = 0;
    if (looks_float) {
      double d = std::stod(text, &used);
      if (used == text.size()) {
        v.value = d;
        return v;
      }
    } else {
      std::int64_t i = std::stoll(text, &used);
      if (used == text.size()) {
        v.value = i;
        return v;
      }
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("unparseable value '" + text + "' at config line " + std::to_string(line_no));
}

}  // namespace

ConfigDoc ConfigDoc::parse(const std::string& text) {
  ConfigDoc doc;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    std::size_t hash = t.find('#');
    if (hash != std::string::npos && (hash == 0 || t.find('"') == std::string::npos))
      t = trim(t.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("malformed section header at line " + std::to_string(line_no));
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value at config line " + std::to_string(line_no));
    std::string key = trim(t.substr(0, eq));
    std::string raw = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("empty key at config line " + std::to_string(line_no));
    std::string full = section.empty() ? key : section + "." + key;
    ConfigValue value;
    if (!raw.empty() && raw.front() == '[') {
      if (raw.back() != ']')
        throw ConfigError("unterminated array at config line " + std::to_string(line_no));
      std::string body = raw.substr(1, raw.size() - 2);
      std::vector<std::string> items;
      std::string cur;
      bool in_str = false;
      for (char c : body) {
        if (c == '"') in_str = !in_str;
        if (c == ',' && !in_str) {
          items.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
      if (!trim(cur).empty()) items.push_back(cur);
      bool all_strings = true;
      for (auto& item : items)
        if (trim(item).empty() || trim(item).front() != '"') all_strings = false;
      if (all_strings && !items.empty()) {
        std::vector<std::string> out;
        for (auto& item : items) out.push_back(std::get<std::string>(parse_scalar(item, line_no).value));
        value.value = out;
      } else {
        std::vector<double> out;
        for (auto& item : items) out.push_back(parse_scalar(item, line_no).as_double());
        value.value = out;
      }
    } else {
      value = parse_scalar(raw, line_no);
    }
    doc.entries_[full] = value;
  }
  return doc;
}

ConfigDoc ConfigDoc::parse_file(const std::filesystem::path& path) {
  return parse(read_text_file(path));
}

bool ConfigDoc::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string ConfigDoc::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.as_string();
}
std::int64_t ConfigDoc::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.as_int();
}
double ConfigDoc::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.as_double();
}
bool ConfigDoc::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.as_bool();
}
std::vector<std::string> ConfigDoc::get_string_array(
    const std::string& key, const std::vector<std::string>& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.as_string_array();
}
std::vector<double> ConfigDoc::get_double_array(const std::string& key,
                                                const std::vector<double>& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.as_double_array();
}
std::string ConfigDoc::require_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing required config key '" + key + "'");
  return it->second.as_string();
}

// ---- Manifest and SVG ----------------------------------------------------------------

std::map<std::string, std::string> write_manifest(const std::filesystem::path& out_dir,
                                                  const std::string& command,
                                                  std::uint64_t config_hash, std::uint64_t seed,
                                                  int workers, double wall_ms) {
  std::map<std::string, std::string> artifacts;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(out_dir))
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    artifacts[std::filesystem::relative(f, out_dir).generic_string()] = hex64(checksum_file(f));

  nlohmann::json j{{"command", command},
                   {"config_hash", hex64(config_hash)},
                   {"seed", seed},
                   {"workers", workers},
                   {"code_version", "attnfactor 0.1.0"},
                   {"wall_ms", wall_ms},
                   {"artifacts", artifacts}};
  write_json_file(out_dir / "manifest.json", j);
  return artifacts;
}

void write_heatmap_svg(const std::filesystem::path& path, const Matrix& m, int cell_px) {
  const Eigen::Index rows = m.rows(), cols = m.cols();
  double hi = m.size() > 0 ? m.maxCoeff() : 1.0;
  if (hi <= 0.0) hi = 1.0;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * cell_px << "\" height=\""
      << rows * cell_px << "\">\n";
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      int shade = 255 - static_cast<int>(std::lround(255.0 * std::clamp(m(i, j) / hi, 0.0, 1.0)));
      svg << "<rect x=\"" << j * cell_px << "\" y=\"" << i * cell_px << "\" width=\"" << cell_px
          << "\" height=\"" << cell_px << "\" fill=\"rgb(" << shade << ',' << shade << ','
          << shade << ")\"/>\n";
    }
  }
  svg << "</svg>\n";
  write_text_file(path, svg.str());
}

// ---- Dataset construction --------------------------------------------------------------

dgp::SplitIndices split_quarters(int t_low, int r) {
  require(t_low >= 10, "split_quarters: sample too short");
  const int total_train = static_cast<int>(std::floor(0.8 * t_low));
  const int val = static_cast<int>(std::floor(0.1 * total_train));
  const int train = total_train - val;
  dgp::SplitIndices s;
  s.low_train = {0, train};
  s.low_val = {train, total_train};
  s.low_test = {total_train, t_low};
  s.high_train = {0, train * r};
  s.high_val = {train * r, total_train * r};
  s.high_test = {total_train * r, t_low * r};
  return s;
}

TargetDatasets build_target_datasets(const panels::Panel& high_std, const panels::Panel& low_std,
                                     int target_column, int window_months, int horizon, int r,
                                     const dgp::SplitIndices& split,
                                     const enc::Ablations& ablations) {
  require(target_column >= 0 && target_column < low_std.cols(),
          "build_target_datasets: target column out of range");
  require(horizon >= 1, "build_target_datasets: horizon must be >= 1");
  TargetDatasets out;
  const std::int64_t start_month = high_std.timestamps.front();
  const int t_low = static_cast<int>(low_std.rows());

  for (int tp = horizon; tp < t_low; ++tp) {
    if (low_std.missing_mask(tp, target_column)) continue;
    int as_of_quarter = tp - horizon;
    std::int64_t as_of_month = r * low_std.timestamps[as_of_quarter] + (r - 1);
    if (as_of_month - window_months + 1 < start_month) continue;  // window incomplete
    enc::TokenSequence seq;
    try {
      seq = enc::build_sequence(high_std, low_std, window_months, as_of_month, ablations, r,
                                start_month);
    } catch (const ArgumentError&) {
      continue;  // nothing observed in the window
    }
    seq.target_variable = low_std.meta[target_column].id;
    seq.horizon = horizon;
    double target = low_std.values(tp, target_column);
    if (tp < split.low_train.end) {
      out.train.push_back({seq, target});
    } else if (tp < split.low_val.end) {
      out.val.push_back({seq, target});
    } else {
      out.test.push_back({seq, target});
      out.test_quarters.push_back(tp);
      out.test_actuals_std.push_back(target);
      out.test_months.push_back(r * low_std.timestamps[tp] + (r - 1));
    }
  }
  require(!out.train.empty(), "build_target_datasets: empty training split");
  require(!out.val.empty(), "build_target_datasets: empty validation split");
  require(!out.test.empty(), "build_target_datasets: empty test split");
  return out;
}

// ---- Simulation study -------------------------------------------------------------------

dgp::DgpConfig regime_config(const dgp::DgpConfig& base, const std::string& regime) {
  dgp::DgpConfig cfg = base;
  if (regime == "linear") {
    cfg.regime = dgp::Regime::Linear;
  } else if (regime == "rbf6") {
    cfg.regime = dgp::Regime::Rbf;
    cfg.rbf_k = 6;
  } else if (regime == "rbf12") {
    cfg.regime = dgp::Regime::Rbf;
    cfg.rbf_k = 12;
  } else {
    throw ConfigError("unknown simulation regime '" + regime + "'");
  }
  return cfg;
}

namespace {

struct EncoderVariant {
  std::string name;
  enc::Ablations ablations;
};

std::vector<EncoderVariant> encoder_variants(bool with_ablations) {
  std::vector<EncoderVariant> v{{"MPTE", {}}};
  if (with_ablations) {
    v.push_back({"AB1", {.no_nonlinearity = true}});
    v.push_back({"AB2", {.no_attention = true}});
    v.push_back({"AB3", {.no_nonlinearity = true, .no_attention = true}});
    v.push_back({"AB4", {.no_temporal_encoding = true}});
    v.push_back({"AB5", {.low_freq_only = true}});
  }
  return v;
}

}  // namespace

SimStudyResult run_sim_study(const SimStudyConfig& config, std::uint64_t seed) {
  SimStudyResult result;
  for (std::size_t ri = 0; ri < config.regimes.size(); ++ri) {
    const std::string& regime = config.regimes[ri];
    SimRegimeResult rr;
    rr.regime = regime;

    dgp::DgpConfig dcfg = regime_config(config.dgp_base, regime);
    dcfg.seed = derive_seed(seed, 1000 + ri);
    dgp::SimulatedData data = dgp::simulate(dcfg);
    dgp::SplitIndices split = dgp::standard_split(data);

    // Standardization on the in-sample portion (train + validation).
    std::int64_t end_high = split.high_val.end - 1;
    std::int64_t end_low = split.low_val.end - 1;
    auto stats_x = panels::standardize_fit(data.x, end_high);
    auto stats_y = panels::standardize_fit(data.y, end_low);
    panels::Panel x_std = panels::standardize_apply(data.x, stats_x);
    panels::Panel y_std = panels::standardize_apply(data.y, stats_y);
    const int target_col = 0;  // first low-frequency series
    const double mu_y = stats_y.means(target_col);
    const double sd_y = stats_y.stddevs(target_col);

    TargetDatasets full = build_target_datasets(x_std, y_std, target_col, config.window_months,
                                                config.horizon, dcfg.r, split, {});
    rr.forecast_months = full.test_months;
    for (int tp : full.test_quarters) rr.actuals_raw.push_back(data.y.values(tp, target_col));

    // Hyperparameters: a small seeded random search on the full model; the
    // ablation variants reuse the selected architecture.
    enc::EncoderConfig model = config.model;
    model.n_variables = dcfg.n_x + dcfg.n_y;
    enc::TrainHyper hyper = config.hyper;
    hyper.seed = derive_seed(seed, 2000 + ri);
    if (config.search_trials > 1) {
      rr.search = enc::random_search(config.space, config.search_trials,
                                     derive_seed(seed, 3000 + ri), full.train, full.val, model,
                                     hyper);
      model = rr.search.best_config;
      hyper = rr.search.best_hyper;
    }

    std::vector<EncoderVariant> variants = encoder_variants(config.ablations);
    std::vector<std::vector<double>> forecasts_std(variants.size());
    parallel_for_indexed(variants.size(), [&](std::size_t vi) {
      enc::EncoderConfig vcfg = model;
      vcfg.ablations = variants[vi].ablations;
      TargetDatasets ds = variants[vi].ablations.low_freq_only
                              ? build_target_datasets(x_std, y_std, target_col,
                                                      config.window_months, config.horizon,
                                                      dcfg.r, split, variants[vi].ablations)
                              : full;
      enc::TrainHyper vhyper = hyper;
      vhyper.seed = derive_seed(seed, 4000 + 100 * ri + vi);
      enc::TrainResult tr = enc::train(ds.train, ds.val, vcfg, vhyper);
      std::vector<double> fc;
      fc.reserve(ds.test.size());
      for (const auto& [seq, target] : ds.test) {
        (void)target;
        fc.push_back(enc::predict(seq, tr.state));
      }
      forecasts_std[vi] = fc;
    });

    auto add_model = [&](const std::string& name, const std::vector<double>& fc_std) {
      std::vector<double> fc_raw;
      fc_raw.reserve(fc_std.size());
      for (double v : fc_std) fc_raw.push_back(v * sd_y + mu_y);
      rr.forecasts_raw[name] = fc_raw;
      fc::MetricsReport rep = fc::metrics(fc_raw, rr.actuals_raw);
      rr.rows.push_back({regime, name, rep.rmse, rep.mae, rep.da});
    };
    for (std::size_t vi = 0; vi < variants.size(); ++vi)
      add_model(variants[vi].name, forecasts_std[vi]);

    // Benchmarks on the standardized data, forecasting the same quarters.
    std::vector<double> y1_std(y_std.rows());
    for (Eigen::Index tp = 0; tp < y_std.rows(); ++tp) y1_std[tp] = y_std.values(tp, target_col);

    if (std::find(config.models_extra.begin(), config.models_extra.end(), "ar") !=
        config.models_extra.end()) {
      std::vector<double> in_sample(y1_std.begin(), y1_std.begin() + split.low_val.end);
      fc::ArModel ar = fc::fit_ar_bic(in_sample, config.ar_p_max);
      std::vector<double> fc_std;
      for (int tp : full.test_quarters) {
        std::vector<double> history(y1_std.begin(), y1_std.begin() + (tp - config.horizon) + 1);
        fc_std.push_back(fc::forecast_ar(ar, history));
      }
      add_model("AR", fc_std);
    }
    if (std::find(config.models_extra.begin(), config.models_extra.end(), "midas") !=
        config.models_extra.end()) {
      std::vector<double> in_sample(y1_std.begin(), y1_std.begin() + split.low_val.end);
      fc::MidasModel midas =
          fc::fit_midas_unrestricted(in_sample, x_std, dcfg.r, config.midas_lags, config.horizon);
      std::vector<double> fc_std;
      for (int tp : full.test_quarters)
        fc_std.push_back(fc::forecast_midas(midas, x_std, tp - config.horizon));
      add_model("MIDAS", fc_std);
    }
    result.regimes.push_back(std::move(rr));
  }
  return result;
}

}  // namespace attnfactor::cli
