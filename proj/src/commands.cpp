#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attnfactor/forecast.hpp"
#include "attnfactor/io.hpp"
#include "attnfactor/mc.hpp"
#include "attnfactor/parallel.hpp"
#include "attnfactor/runner.hpp"

namespace attnfactor::cli {

namespace {

using nlohmann::json;

// Ranking flags for the result tables: "best" / "second" / "".
void apply_flags(std::vector<SimTableRow>& rows, std::vector<std::array<std::string, 3>>& flags) {
  flags.assign(rows.size(), {"", "", ""});
  for (int metric = 0; metric < 3; ++metric) {
    std::vector<std::pair<double, std::size_t>> vals;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double v = metric == 0 ? rows[i].rmse : metric == 1 ? rows[i].mae : rows[i].da;
      vals.push_back({metric == 2 ? -v : v, i});  // DA: higher is better
    }
    std::sort(vals.begin(), vals.end());
    if (!vals.empty()) flags[vals[0].second][metric] = "best";
    if (vals.size() > 1) flags[vals[1].second][metric] = "second";
  }
}

dgp::DgpConfig dgp_from_config(const ConfigDoc& doc, const std::string& prefix) {
  dgp::DgpConfig d;
  d.q = static_cast<int>(doc.get_int(prefix + ".q", d.q));
  d.r = static_cast<int>(doc.get_int(prefix + ".r", d.r));
  d.n_x = static_cast<int>(doc.get_int(prefix + ".n_x", d.n_x));
  d.n_y = static_cast<int>(doc.get_int(prefix + ".n_y", d.n_y));
  d.l_x = static_cast<int>(doc.get_int(prefix + ".l_x", d.l_x));
  d.l_y = static_cast<int>(doc.get_int(prefix + ".l_y", d.l_y));
  d.q_fx = static_cast<int>(doc.get_int(prefix + ".q_fx", d.q_fx));
  d.q_fy = static_cast<int>(doc.get_int(prefix + ".q_fy", d.q_fy));
  d.nu = doc.get_double(prefix + ".nu", d.nu);
  d.rho_factor = doc.get_double(prefix + ".rho_factor", d.rho_factor);
  d.rho_x = doc.get_double(prefix + ".rho_x", d.rho_x);
  d.rho_y = doc.get_double(prefix + ".rho_y", d.rho_y);
  d.snr = doc.get_double(prefix + ".snr", d.snr);
  d.t_high = static_cast<int>(doc.get_int(prefix + ".t_high", d.t_high));
  d.burn_in = static_cast<int>(doc.get_int(prefix + ".burn_in", d.burn_in));
  d.almon_a1 = doc.get_double(prefix + ".almon_a1", d.almon_a1);
  d.almon_a2 = doc.get_double(prefix + ".almon_a2", d.almon_a2);
  return d;
}

enc::EncoderConfig model_from_config(const ConfigDoc& doc, const std::string& prefix) {
  enc::EncoderConfig m;
  m.d_model = static_cast<int>(doc.get_int(prefix + ".d_model", 16));
  m.n_head = static_cast<int>(doc.get_int(prefix + ".n_head", 2));
  m.n_layers = static_cast<int>(doc.get_int(prefix + ".n_layers", 1));
  m.d_ff = static_cast<int>(doc.get_int(prefix + ".d_ff", 32));
  m.dropout = doc.get_double(prefix + ".dropout", 0.0);
  m.activation = nn::activation_from_string(doc.get_string(prefix + ".activation", "relu"));
  std::string pooling = doc.get_string(prefix + ".pooling", "mean");
  m.pooling = pooling == "last" ? enc::Pooling::Last : enc::Pooling::Mean;
  return m;
}

enc::TrainHyper hyper_from_config(const ConfigDoc& doc, const std::string& prefix) {
  enc::TrainHyper h;
  h.lr = doc.get_double(prefix + ".lr", 1e-3);
  h.batch_size = static_cast<int>(doc.get_int(prefix + ".batch_size", 16));
  h.max_epochs = static_cast<int>(doc.get_int(prefix + ".max_epochs", 40));
  h.patience = static_cast<int>(doc.get_int(prefix + ".patience", 5));
  return h;
}

void write_table_csv(const std::filesystem::path& path, std::vector<SimTableRow> rows) {
  CsvTable table;
  table.header = {"regime", "model", "rmse", "mae", "da", "rmse_flag", "mae_flag", "da_flag"};
  // Flags are computed within each regime block.
  std::map<std::string, std::vector<std::size_t>> by_regime;
  for (std::size_t i = 0; i < rows.size(); ++i) by_regime[rows[i].regime].push_back(i);
  std::vector<std::array<std::string, 3>> all_flags(rows.size());
  for (auto& [regime, idx] : by_regime) {
    (void)regime;
    std::vector<SimTableRow> block;
    for (auto i : idx) block.push_back(rows[i]);
    std::vector<std::array<std::string, 3>> flags;
    apply_flags(block, flags);
    for (std::size_t j = 0; j < idx.size(); ++j) all_flags[idx[j]] = flags[j];
  }
  for (std::size_t i = 0; i < rows.size(); ++i)
    table.rows.push_back({rows[i].regime, rows[i].model, format_double(rows[i].rmse),
                          format_double(rows[i].mae), format_double(rows[i].da), all_flags[i][0],
                          all_flags[i][1], all_flags[i][2]});
  write_csv(path, table);
}

SimStudyConfig sim_config_from_doc(const ConfigDoc& doc) {
  SimStudyConfig cfg;
  cfg.dgp_base = dgp_from_config(doc, "sim.dgp");
  cfg.regimes = doc.get_string_array("sim.regimes", cfg.regimes);
  cfg.window_months = static_cast<int>(doc.get_int("sim.window_months", 12));
  cfg.horizon = static_cast<int>(doc.get_int("sim.horizon", 1));
  cfg.search_trials = static_cast<int>(doc.get_int("sim.search_trials", 1));
  cfg.model = model_from_config(doc, "sim.model");
  cfg.hyper = hyper_from_config(doc, "sim.train");
  cfg.ablations = doc.get_bool("sim.ablations", true);
  cfg.ar_p_max = static_cast<int>(doc.get_int("sim.ar_p_max", 8));
  cfg.midas_lags = static_cast<int>(doc.get_int("sim.midas_lags", 4));
  return cfg;
}

int cmd_sim(const ConfigDoc& doc, const std::filesystem::path& out, std::uint64_t seed) {
  SimStudyConfig cfg = sim_config_from_doc(doc);
  SimStudyResult study = run_sim_study(cfg, seed);

  std::vector<SimTableRow> all_rows;
  for (const auto& rr : study.regimes) {
    for (const auto& row : rr.rows) all_rows.push_back(row);
    CsvTable fc_table;
    fc_table.header = {"month", "actual"};
    std::vector<std::string> model_names;
    for (const auto& [name, fc] : rr.forecasts_raw) {
      (void)fc;
      model_names.push_back(name);
      fc_table.header.push_back(name);
    }
    for (std::size_t i = 0; i < rr.actuals_raw.size(); ++i) {
      std::vector<std::string> row{format_year_month(rr.forecast_months[i]),
                                   format_double(rr.actuals_raw[i])};
      for (const auto& name : model_names)
        row.push_back(format_double(rr.forecasts_raw.at(name)[i]));
      fc_table.rows.push_back(row);
    }
    write_csv(out / ("forecasts_" + rr.regime + ".csv"), fc_table);

    std::ostringstream log;
    for (const auto& trial : rr.search.trials) {
      json t{{"trial", trial.trial},
             {"d_model", trial.config.d_model},
             {"n_head", trial.config.n_head},
             {"n_layers", trial.config.n_layers},
             {"d_ff", trial.config.d_ff},
             {"dropout", trial.config.dropout},
             {"activation", nn::to_string(trial.config.activation)},
             {"lr", trial.hyper.lr},
             {"val_mse", trial.val_mse}};
      log << t.dump() << "\n";
    }
    write_text_file(out / ("search_" + rr.regime + ".jsonl"), log.str());

    dgp::DgpConfig dcfg = regime_config(cfg.dgp_base, rr.regime);
    dcfg.seed = derive_seed(seed, 1000 + (&rr - study.regimes.data()));
    dgp::save_simulated_data(out / ("dgp_" + rr.regime), dgp::simulate(dcfg));
  }
  write_table_csv(out / "table1.csv", all_rows);
  return 0;
}

int cmd_mc(const ConfigDoc& doc, const std::filesystem::path& out, std::uint64_t seed) {
  std::ostringstream md;
  md << "# Monte Carlo verification summary\n\n";
  json report;

  if (doc.get_bool("mc.run_rate", true)) {
    mc::RateStudyDesign design;
    auto grid = doc.get_double_array("mc.rate_n_grid", {50, 100});
    design.n_grid.clear();
    for (double g : grid) design.n_grid.push_back(static_cast<int>(g));
    design.t = static_cast<int>(doc.get_int("mc.rate_t", 200));
    design.reps = static_cast<int>(doc.get_int("mc.rate_reps", 50));
    design.seed = seed;
    design.primary = {mc::AttentionFamily::Kind::DiffuseDiagonal};
    design.controls = {{mc::AttentionFamily::Kind::Identity}};
    mc::RateStudyResult rate = mc::run_consistency_study(design);

    CsvTable cells;
    cells.header = {"family", "n", "bar_alpha", "mse_loadings", "mse_se", "failures"};
    md << "## Consistency rates\n\n| family | slope | boot se | theory | rate ok |\n"
       << "|---|---|---|---|---|\n";
    json jr = json::array();
    for (const auto& fam : rate.families) {
      for (const auto& cell : fam.cells)
        cells.rows.push_back({fam.family, std::to_string(cell.n), format_double(cell.bar_alpha),
                              format_double(cell.mse_loadings_mean),
                              format_double(cell.mse_loadings_se),
                              std::to_string(cell.failures)});
      md << "| " << fam.family << " | " << fam.fitted_slope << " | " << fam.slope_bootstrap_se
         << " | " << fam.theory_slope << " | " << (fam.rate_condition_ok ? "yes" : "VIOLATED")
         << " |\n";
      jr.push_back({{"family", fam.family},
                    {"fitted_slope", fam.fitted_slope},
                    {"slope_se", fam.slope_se},
                    {"slope_bootstrap_se", fam.slope_bootstrap_se},
                    {"theory_slope", fam.theory_slope},
                    {"rate_condition_ok", fam.rate_condition_ok}});
    }
    md << "\n";
    write_csv(out / "rate_cells.csv", cells);
    report["rate"] = jr;
  }

  if (doc.get_bool("mc.run_coverage", false)) {
    mc::NormalityDesign design;
    design.n_x = static_cast<int>(doc.get_int("mc.coverage_n_x", 120));
    design.n_y = static_cast<int>(doc.get_int("mc.coverage_n_y", 80));
    design.t = static_cast<int>(doc.get_int("mc.coverage_t", 200));
    design.reps = static_cast<int>(doc.get_int("mc.coverage_reps", 100));
    design.units = {0, 1};
    design.t_indices = {design.t / 2};
    design.seed = seed;
    if (design.reps < 100)
      log_info("mc coverage: fewer than 100 replications gives unreliable coverage bands");
    mc::NormalityResult lres = mc::run_loading_normality_study(design);
    mc::NormalityResult fres = mc::run_factor_normality_study(design);
    CsvTable cov;
    cov.header = {"coordinate", "coverage_oracle", "coverage_feasible", "ks_p"};
    json jc = json::array();
    md << "## Coverage (nominal " << design.nominal << ")\n\n"
       << "| coordinate | oracle | feasible |\n|---|---|---|\n";
    for (const auto& res : {lres, fres}) {
      for (const auto& c : res.coordinates) {
        cov.rows.push_back({c.label, format_double(c.coverage_oracle),
                            format_double(c.coverage_feasible),
                            format_double(c.ks_oracle.p_value)});
        md << "| " << c.label << " | " << c.coverage_oracle << " | " << c.coverage_feasible
           << " |\n";
        jc.push_back({{"label", c.label},
                      {"coverage_oracle", c.coverage_oracle},
                      {"coverage_feasible", c.coverage_feasible},
                      {"ks_p", c.ks_oracle.p_value},
                      {"warning_low_reps", design.reps < 100}});
      }
    }
    md << "\n";
    write_csv(out / "coverage_cells.csv", cov);
    report["coverage"] = jc;
  }

  if (doc.get_bool("mc.run_regimes", false)) {
    std::vector<mc::RegimeDesign> designs(3);
    designs[0].regime = mc::Regime::FDominant;
    designs[0].n_x = 32; designs[0].n_y = 16; designs[0].t = 800;
    designs[1].regime = mc::Regime::LambdaDominant;
    designs[1].n_x = 256; designs[1].n_y = 128; designs[1].t = 64;
    designs[2].regime = mc::Regime::Mixed;
    designs[2].n_x = 128; designs[2].n_y = 64; designs[2].t = 192;
    for (auto& d : designs) {
      d.reps = static_cast<int>(doc.get_int("mc.regime_reps", 200));
      d.seed = seed;
    }
    auto results = mc::run_common_component_regimes(designs);
    json jr = json::array();
    md << "## Common-component regimes\n\n"
       << "| regime | lambda share | rate*var | target |\n|---|---|---|---|\n";
    const char* names[] = {"F-dominant", "Lambda-dominant", "Mixed"};
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      md << "| " << names[i] << " | " << r.lambda_share << " | " << r.rate_scaled_var << " | "
         << r.rate_target << " |\n";
      jr.push_back({{"regime", names[i]},
                    {"lambda_share", r.lambda_share},
                    {"rate_scaled_var", r.rate_scaled_var},
                    {"rate_target", r.rate_target},
                    {"n_eff", r.n_eff},
                    {"c_ratio", r.c_ratio}});
    }
    md << "\n";
    report["regimes"] = jr;
  }

  if (doc.get_bool("mc.run_efficiency", false)) {
    mc::EfficiencyDesign design;
    design.reps = static_cast<int>(doc.get_int("mc.efficiency_reps", 200));
    design.seed = seed;
    mc::EfficiencyResult informative = mc::efficiency_comparison(design);
    mc::EfficiencyDesign control = design;
    control.omega = 0.0;
    mc::EfficiencyResult null_case = mc::efficiency_comparison(control);
    report["efficiency"] = {
        {"informative",
         {{"ratio_aligned", informative.ratio_aligned},
          {"ratio_orthogonal", informative.ratio_orthogonal},
          {"paired_t", informative.paired_t_aligned},
          {"p_one_sided", informative.p_one_sided_aligned}}},
        {"control",
         {{"ratio_aligned", null_case.ratio_aligned},
          {"ratio_orthogonal", null_case.ratio_orthogonal}}}};
    md << "## Transfer-learning efficiency\n\n"
       << "informative-X aligned-unit variance ratio " << informative.ratio_aligned
       << " (one-sided p " << informative.p_one_sided_aligned << "), control ratio "
       << null_case.ratio_aligned << "\n\n";
  }

  write_json_file(out / "mc_report.json", report);
  write_text_file(out / "mc_summary.md", md.str());
  return 0;
}

struct EmpiricalData {
  panels::Panel monthly_std, quarterly_std;
  panels::Panel monthly_raw, quarterly_raw;
  panels::StandardizationStats stats_m, stats_q;
  panels::VariableManifest manifest;
  dgp::SplitIndices split;
};

EmpiricalData load_empirical(const ConfigDoc& doc) {
  EmpiricalData d;
  std::filesystem::path manifest_path = doc.require_string("empirical.manifest");
  d.manifest = panels::load_variable_manifest(manifest_path);
  d.monthly_raw = panels::load_csv(doc.require_string("empirical.monthly_csv"), d.manifest.monthly);
  d.quarterly_raw =
      panels::load_csv(doc.require_string("empirical.quarterly_csv"), d.manifest.quarterly);
  const int t_low = static_cast<int>(d.quarterly_raw.rows());
  d.split = split_quarters(t_low, 3);
  std::int64_t end_q = d.quarterly_raw.timestamps[d.split.low_val.end - 1];
  std::int64_t end_m = 3 * end_q + 2;
  d.stats_m = panels::standardize_fit(d.monthly_raw, end_m);
  d.stats_q = panels::standardize_fit(d.quarterly_raw, end_q);
  d.monthly_std = panels::standardize_apply(d.monthly_raw, d.stats_m);
  d.quarterly_std = panels::standardize_apply(d.quarterly_raw, d.stats_q);
  return d;
}

int cmd_empirical(const ConfigDoc& doc, const std::filesystem::path& out, std::uint64_t seed) {
  EmpiricalData data = load_empirical(doc);
  std::vector<std::string> targets =
      doc.get_string_array("empirical.targets", data.manifest.quarterly_order);
  const int window = static_cast<int>(doc.get_int("empirical.window_months", 24));
  const int horizon = static_cast<int>(doc.get_int("empirical.horizon", 1));
  const int search_trials = static_cast<int>(doc.get_int("empirical.search_trials", 1));
  const bool emit_heatmaps = doc.get_bool("empirical.heatmaps", false);

  enc::EncoderConfig base_model = model_from_config(doc, "empirical.model");
  base_model.n_variables =
      static_cast<int>(data.manifest.monthly_order.size() + data.manifest.quarterly_order.size());
  enc::TrainHyper base_hyper = hyper_from_config(doc, "empirical.train");

  // Quarterly information set for the single-frequency benchmarks: last
  // monthly value of the quarter plus all quarterly series.
  panels::Panel monthly_q =
      panels::collapse_to_low_frequency(data.monthly_std, 3, panels::CollapseMethod::Last);
  auto [mq_aligned, q_aligned] = panels::align_common_clock(data.monthly_std, data.quarterly_std, 3);

  CsvTable metrics_table;
  metrics_table.header = {"target", "model", "subsample", "rmse", "mae", "da", "n_obs"};
  CsvTable dm_table;
  dm_table.header = {"target", "midas", "ar", "ols", "nn"};

  for (const auto& target : targets) {
    int target_col = -1;
    for (Eigen::Index j = 0; j < data.quarterly_std.cols(); ++j)
      if (data.quarterly_std.meta[j].name == target) target_col = static_cast<int>(j);
    if (target_col < 0) throw ConfigError("missing mnemonic '" + target + "' among targets");

    TargetDatasets ds = build_target_datasets(data.monthly_std, data.quarterly_std, target_col,
                                              window, horizon, 3, data.split, {});
    enc::EncoderConfig model = base_model;
    enc::TrainHyper hyper = base_hyper;
    hyper.seed = derive_seed(seed, fnv1a64(target));
    enc::SearchResult search;
    if (search_trials > 1) {
      enc::SearchSpace space;
      search = enc::random_search(space, search_trials, derive_seed(seed, fnv1a64(target) + 1),
                                  ds.train, ds.val, model, hyper);
      model = search.best_config;
      hyper = search.best_hyper;
    }
    enc::TrainResult trained = enc::train(ds.train, ds.val, model, hyper);

    const double mu = data.stats_q.means(target_col), sd = data.stats_q.stddevs(target_col);
    auto de_std = [&](double v) { return v * sd + mu; };
    std::vector<double> actual_raw, mpte_raw;
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
      actual_raw.push_back(de_std(ds.test_actuals_std[i]));
      mpte_raw.push_back(de_std(enc::predict(ds.test[i].first, trained.state)));
    }

    // Benchmarks.
    std::map<std::string, std::vector<double>> model_fc;
    model_fc["MPTE"] = mpte_raw;
    std::vector<double> y_std_series(data.quarterly_std.rows());
    for (Eigen::Index tp = 0; tp < data.quarterly_std.rows(); ++tp)
      y_std_series[tp] = data.quarterly_std.values(tp, target_col);
    std::vector<double> in_sample(y_std_series.begin(),
                                  y_std_series.begin() + data.split.low_val.end);
    fc::ArModel ar = fc::fit_ar_bic(in_sample, static_cast<int>(doc.get_int("empirical.ar_p_max", 4)));
    fc::MidasModel midas = fc::fit_midas_unrestricted(in_sample, data.monthly_std, 3,
                                                      static_cast<int>(doc.get_int(
                                                          "empirical.midas_lags", 4)),
                                                      horizon);
    // Quarterly tabular design for OLS / NN.
    const int n_feat = static_cast<int>(mq_aligned.cols() + q_aligned.cols());
    auto feature_row = [&](int tp) {
      Vector row(n_feat);
      row.head(mq_aligned.cols()) = mq_aligned.values.row(tp).transpose();
      row.tail(q_aligned.cols()) = q_aligned.values.row(tp).transpose();
      return row;
    };
    std::vector<double> ols_y;
    Matrix ols_x(data.split.low_val.end - horizon, n_feat);
    for (int tp = 0; tp + horizon < data.split.low_val.end; ++tp) {
      ols_x.row(tp) = feature_row(tp).transpose();
      ols_y.push_back(y_std_series[tp + horizon]);
    }
    fc::OlsModel ols = fc::fit_ols(ols_y, ols_x);
    fc::NnLiteHyper nn_hyper;
    nn_hyper.seed = derive_seed(seed, fnv1a64(target) + 2);
    nn_hyper.hidden = static_cast<int>(doc.get_int("empirical.nn_hidden", 8));
    fc::NnLiteModel nn = fc::fit_nn_lite(ols_y, ols_x, nn_hyper);

    std::vector<double> ar_fc, midas_fc, ols_fc, nn_fc;
    for (std::size_t i = 0; i < ds.test_quarters.size(); ++i) {
      int tp = ds.test_quarters[i];
      std::vector<double> history(y_std_series.begin(), y_std_series.begin() + (tp - horizon) + 1);
      ar_fc.push_back(de_std(fc::forecast_ar(ar, history)));
      midas_fc.push_back(de_std(fc::forecast_midas(midas, data.monthly_std, tp - horizon)));
      Vector feats = feature_row(tp - horizon);
      ols_fc.push_back(de_std(fc::forecast_ols(ols, feats)));
      nn_fc.push_back(de_std(fc::forecast_nn_lite(nn, feats)));
    }
    model_fc["AR"] = ar_fc;
    model_fc["MIDAS"] = midas_fc;
    model_fc["OLS"] = ols_fc;
    model_fc["NN"] = nn_fc;

    fc::SubsampleSplit sub = fc::subsample_split(ds.test_months);
    auto slice = [](const std::vector<double>& v, const std::vector<int>& idx) {
      std::vector<double> out;
      for (int i : idx) out.push_back(v[i]);
      return out;
    };
    for (const auto& [name, fc_raw] : model_fc) {
      struct Block {
        const char* label;
        const std::vector<int>* idx;
      } blocks[] = {{"full", &sub.full}, {"pre", &sub.pre}, {"post", &sub.post}};
      for (const auto& block : blocks) {
        if (block.idx->empty()) continue;
        fc::MetricsReport rep = fc::metrics(slice(fc_raw, *block.idx), slice(actual_raw, *block.idx));
        metrics_table.rows.push_back({target, name, block.label, format_double(rep.rmse),
                                      format_double(rep.mae), format_double(rep.da),
                                      std::to_string(rep.n_obs)});
      }
    }

    auto errors_of = [&](const std::vector<double>& fc_raw) {
      std::vector<double> e;
      for (std::size_t i = 0; i < fc_raw.size(); ++i) e.push_back(fc_raw[i] - actual_raw[i]);
      return e;
    };
    std::vector<double> e_mpte = errors_of(mpte_raw);
    auto dm_stat = [&](const std::vector<double>& other) {
      if (e_mpte.size() < 10) return std::string("");
      fc::DmTest t = fc::diebold_mariano(e_mpte, errors_of(other), fc::DmLoss::Squared, horizon);
      return format_double(t.statistic);
    };
    dm_table.rows.push_back({target, dm_stat(midas_fc), dm_stat(ar_fc), dm_stat(ols_fc),
                             dm_stat(nn_fc)});

    CsvTable fc_csv;
    fc_csv.header = {"month", "actual", "MPTE", "AR", "MIDAS", "OLS", "NN"};
    for (std::size_t i = 0; i < actual_raw.size(); ++i)
      fc_csv.rows.push_back({format_year_month(ds.test_months[i]), format_double(actual_raw[i]),
                             format_double(mpte_raw[i]), format_double(ar_fc[i]),
                             format_double(midas_fc[i]), format_double(ols_fc[i]),
                             format_double(nn_fc[i])});
    write_csv(out / ("forecasts_" + target + ".csv"), fc_csv);

    if (emit_heatmaps) {
      std::vector<enc::AttentionRecord> records;
      for (const auto& [seq, y] : ds.test) {
        (void)y;
        records.push_back(
            enc::encoder_forward(seq, trained.state, enc::Mode::Eval, true).record);
      }
      enc::HeatmapResult hm =
          enc::extract_attention_heatmaps(records, base_model.n_variables, window + 1);
      std::filesystem::create_directories(out / "heatmaps");
      if (hm.no_attention) {
        write_json_file(out / "heatmaps" / (target + "_no_attention.json"),
                        json{{"target", target}, {"no_attention", true}});
      } else {
        write_matrix_csv(out / "heatmaps" / (target + "_variable.csv"), hm.variable_matrix);
        write_matrix_csv(out / "heatmaps" / (target + "_temporal.csv"), hm.temporal_matrix);
        write_heatmap_svg(out / "heatmaps" / (target + "_variable.svg"), hm.variable_matrix);
        write_heatmap_svg(out / "heatmaps" / (target + "_temporal.svg"), hm.temporal_matrix);
      }
    }
  }
  write_csv(out / "metrics.csv", metrics_table);
  write_csv(out / "dm_matrix.csv", dm_table);
  return 0;
}

int cmd_ablate(const ConfigDoc& doc, const std::filesystem::path& out, std::uint64_t seed) {
  SimStudyConfig cfg = sim_config_from_doc(doc);
  cfg.regimes = doc.get_string_array("ablate.regimes",
                                     doc.get_string_array("sim.regimes", {"linear"}));
  std::vector<std::string> keep = doc.get_string_array(
      "ablate.models", {"MPTE", "AB1", "AB2", "AB3", "AB4", "AB5"});
  cfg.models_extra.clear();
  SimStudyResult study = run_sim_study(cfg, seed);

  std::vector<SimTableRow> rows;
  CsvTable dm_table;
  dm_table.header = {"regime", "model", "dm_vs_full", "p_value"};
  for (const auto& rr : study.regimes) {
    std::vector<double> e_full;
    for (std::size_t i = 0; i < rr.actuals_raw.size(); ++i)
      e_full.push_back(rr.forecasts_raw.at("MPTE")[i] - rr.actuals_raw[i]);
    for (const auto& row : rr.rows) {
      if (std::find(keep.begin(), keep.end(), row.model) == keep.end()) continue;
      rows.push_back(row);
      if (row.model != "MPTE" && rr.actuals_raw.size() >= 10) {
        std::vector<double> e;
        for (std::size_t i = 0; i < rr.actuals_raw.size(); ++i)
          e.push_back(rr.forecasts_raw.at(row.model)[i] - rr.actuals_raw[i]);
        fc::DmTest t = fc::diebold_mariano(e_full, e, fc::DmLoss::Squared, cfg.horizon);
        dm_table.rows.push_back({rr.regime, row.model, format_double(t.statistic),
                                 format_double(t.p_value)});
      }
    }
  }
  write_table_csv(out / "ablation_metrics.csv", rows);
  write_csv(out / "dm_vs_full.csv", dm_table);
  return 0;
}

int cmd_heatmaps(const ConfigDoc& doc, const std::filesystem::path& out, std::uint64_t seed) {
  const int window = static_cast<int>(doc.get_int("heatmaps.window_months", 12));
  enc::EncoderState state = enc::load_checkpoint(doc.require_string("heatmaps.checkpoint"));

  // Data source: a simulated regime re-generated from its seed.
  dgp::DgpConfig dcfg = regime_config(dgp_from_config(doc, "heatmaps.dgp"),
                                      doc.get_string("heatmaps.regime", "linear"));
  dcfg.seed = derive_seed(seed, 1000);
  dgp::SimulatedData data = dgp::simulate(dcfg);
  dgp::SplitIndices split = dgp::standard_split(data);
  auto stats_x = panels::standardize_fit(data.x, split.high_val.end - 1);
  auto stats_y = panels::standardize_fit(data.y, split.low_val.end - 1);
  panels::Panel x_std = panels::standardize_apply(data.x, stats_x);
  panels::Panel y_std = panels::standardize_apply(data.y, stats_y);

  TargetDatasets ds = build_target_datasets(x_std, y_std, 0, window, 1, dcfg.r, split,
                                            state.config.ablations);
  std::vector<enc::AttentionRecord> records;
  for (const auto& [seq, y] : ds.test) {
    (void)y;
    records.push_back(enc::encoder_forward(seq, state, enc::Mode::Eval, true).record);
  }
  enc::HeatmapResult hm =
      enc::extract_attention_heatmaps(records, state.config.n_variables, window + 1);
  if (hm.no_attention) {
    write_json_file(out / "no_attention.json",
                    json{{"no_attention", true},
                         {"reason", "checkpoint was trained with the attention ablation"}});
    return 0;
  }
  write_matrix_csv(out / "az_heatmap.csv", hm.variable_matrix);
  write_matrix_csv(out / "b_heatmap.csv", hm.temporal_matrix);
  write_heatmap_svg(out / "az_heatmap.svg", hm.variable_matrix);
  write_heatmap_svg(out / "b_heatmap.svg", hm.temporal_matrix);
  return 0;
}

}  // namespace

int run_command(const RunOptions& options) {
  auto started = std::chrono::steady_clock::now();
  try {
    ConfigDoc doc = ConfigDoc::parse_file(options.config_path);
    std::uint64_t seed;
    if (options.seed) {
      seed = *options.seed;
    } else if (doc.has("run.seed")) {
      seed = static_cast<std::uint64_t>(doc.get_int("run.seed", 0));
    } else {
      throw ConfigError("seed is mandatory: pass --seed or set [run] seed");
    }
    set_workers(options.workers);
    std::filesystem::create_directories(options.out_dir);

    int rc;
    if (options.command == "sim") {
      rc = cmd_sim(doc, options.out_dir, seed);
    } else if (options.command == "mc") {
      rc = cmd_mc(doc, options.out_dir, seed);
    } else if (options.command == "empirical") {
      rc = cmd_empirical(doc, options.out_dir, seed);
    } else if (options.command == "ablate") {
      rc = cmd_ablate(doc, options.out_dir, seed);
    } else if (options.command == "heatmaps") {
      rc = cmd_heatmaps(doc, options.out_dir, seed);
    } else {
      throw ConfigError("unknown command '" + options.command + "'");
    }
    if (rc != 0) return rc;

    double wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    std::uint64_t config_hash = fnv1a64(read_text_file(options.config_path));
    write_manifest(options.out_dir, options.command, config_hash, seed, options.workers, wall_ms);
    return 0;
  } catch (const ConfigError& e) {
    log_info(std::string("config error: ") + e.what());
    std::fprintf(stderr, "attnfactor: config error: %s\n", e.what());
    return 2;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "attnfactor: config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "attnfactor: numerical failure: %s\n", e.what());
    return 3;
  }
}

}  // namespace attnfactor::cli
