#ifndef ATTNFACTOR_MC_HPP
#define ATTNFACTOR_MC_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attnfactor/attention.hpp"
#include "attnfactor/common.hpp"
#include "attnfactor/stats.hpp"

namespace attnfactor::mc {

// ---- Attention families with known exact scaling ------------------------------

struct AttentionFamily {
  enum class Kind { DiffuseDiagonal, DiffuseDense, Sparse, Identity, HeteroDiagonal, TargetPca };
  Kind kind = Kind::DiffuseDiagonal;
  double sparse_exponent = 0.5;  // Sparse: m = ceil(N^exponent)
  double gamma = 1.0;            // TargetPca weight
  double hetero_lo = 0.6;        // HeteroDiagonal weight bounds
  double hetero_hi = 1.4;
  std::uint64_t hetero_seed = 7;

  attn::CrossSectionAttention build(int n_x, int n_y) const;
  bool invertible() const { return kind != Kind::Sparse && kind != Kind::DiffuseDense; }
  std::string name() const;
};

struct TemporalFamily {
  int band_halfwidth = 0;  // 0 = identity; otherwise a banded moving average
  attn::TemporalAttention build(int t) const;
  std::string name() const;
};

// ---- Theorem 1: consistency rates ---------------------------------------------

struct RateCell {
  int n = 0;
  double bar_alpha = 0.0;
  double mse_loadings_mean = 0.0;
  double mse_loadings_se = 0.0;
  double mse_factors_mean = 0.0;
  int failures = 0;
  bool cell_failed = false;  // more than fail_threshold of reps failed
};

struct RateFamilyResult {
  std::string family;
  std::vector<RateCell> cells;
  double fitted_slope = 0.0;
  double slope_se = 0.0;            // from the log-log regression
  double slope_bootstrap_se = 0.0;  // resampling replications within cells
  double theory_slope = 0.0;        // slope of log bar_alpha on log N
  bool rate_condition_ok = false;   // bar_alpha decays along the grid
};

// Linear factor DGP (signal-plus-noise with pervasive attended loadings).
// The panel is generated so the *primary* family's attended loadings satisfy
// the pervasiveness normalization exactly; control families are evaluated on
// the same panels.
struct RateStudyDesign {
  std::vector<int> n_grid{50, 100, 200, 400};
  int t = 500;
  int reps = 200;
  int k = 3;
  double x_share = 0.6;  // N_x = round(x_share * N)
  std::vector<double> factor_variances{4.0, 2.25, 1.0};
  double noise_sd = 1.0;
  AttentionFamily primary;                  // must be invertible
  std::vector<AttentionFamily> controls;    // evaluated on the same panels
  TemporalFamily temporal;
  double fail_threshold = 0.05;
  int bootstrap = 200;
  std::uint64_t seed = 1;
};

struct RateStudyResult {
  RateStudyDesign design;
  std::vector<RateFamilyResult> families;  // primary first
};

RateStudyResult run_consistency_study(const RateStudyDesign& design);

// ---- Strong-block construction (Assumptions B.1-B.3) --------------------------

// k_ys Y-strong directions; the X block carries signal on exactly one of
// them (energy share omega), leaving rank(Sigma_{ys,x}) = 1 < k_ys, and loads
// the remaining k - k_ys direction(s) with unit energy. Attended loading
// columns are exactly orthogonal with squared norm N, so the population
// rotation is the identity.
struct StrongBlockSpec {
  int k = 3;
  int k_ys = 2;
  double omega = 0.3;  // X energy share of Y-strong direction 1; 0 disables
  bool disjoint_y_support = false;  // direction 1 on even Y rows, 2 on odd
};

struct StrongBlock {
  Matrix lambda;  // attended loadings, N x k
  int n_x = 0, n_y = 0, k_ys = 0;
  Matrix lambda_ys_y() const { return lambda.bottomRows(n_y).leftCols(k_ys); }
};

StrongBlock build_strong_block(int n_x, int n_y, const StrongBlockSpec& spec, std::uint64_t seed);

// ---- Theorem 2: asymptotic normality ------------------------------------------

struct NormalityDesign {
  int n_x = 480;
  int n_y = 320;
  int t = 400;
  int reps = 500;
  StrongBlockSpec block;
  AttentionFamily family{AttentionFamily::Kind::HeteroDiagonal};
  std::vector<double> factor_variances{3.0, 2.0, 1.0};
  double noise_sd_lo = 0.8;  // per-unit raw noise sd, seeded uniform
  double noise_sd_hi = 1.2;
  double zero_noise = false;
  std::vector<int> units{0, 7, 19};     // Y-block unit indices (loading study)
  std::vector<int> t_indices{100, 300}; // time indices (factor study)
  double nominal = 0.95;
  int hac_bandwidth = -1;  // auto rule floor(4 (T/100)^{2/9})
  std::uint64_t seed = 1;
};

struct CoverageCoordinate {
  std::string label;
  double coverage_oracle = 0.0;
  double coverage_feasible = 0.0;
  KsResult ks_oracle;
  int reps_used = 0;
};

struct NormalityResult {
  NormalityDesign design;
  std::vector<CoverageCoordinate> coordinates;
  bool degenerate_zero_noise = false;
  double n_eff = 0.0;
};

NormalityResult run_loading_normality_study(const NormalityDesign& design);
NormalityResult run_factor_normality_study(const NormalityDesign& design);

// ---- Theorem 3: common-component regimes --------------------------------------

enum class Regime { FDominant, LambdaDominant, Mixed };

struct RegimeDesign {
  Regime regime = Regime::Mixed;
  int n_x = 0;
  int n_y = 0;
  int t = 0;
  int reps = 400;
  StrongBlockSpec block;
  AttentionFamily family{AttentionFamily::Kind::HeteroDiagonal};
  std::vector<double> factor_variances{3.0, 2.0, 1.0};
  double noise_sd_lo = 0.8;
  double noise_sd_hi = 1.2;
  bool zero_noise = false;
  int unit = 0;     // Y-block index
  int t_index = -1; // -1 selects t/2
  std::uint64_t seed = 1;
};

struct RegimeResult {
  RegimeDesign design;
  double n_eff = 0.0;
  double c_ratio = 0.0;          // N_eff / T
  double var_total = 0.0;        // Var(C_hat - C) across replications
  double var_f_term = 0.0;       // Var(Delta_F)
  double var_lambda_term = 0.0;  // Var(Delta_Lambda)
  double lambda_share = 0.0;     // var_lambda_term / var_total
  double sigma2_f = 0.0;         // oracle asymptotic variances
  double sigma2_lambda = 0.0;
  double rate_scaled_var = 0.0;  // regime rate * var_total
  double rate_target = 0.0;      // regime asymptotic variance
  bool zero_noise_flag = false;
};

RegimeResult run_common_component_regime(const RegimeDesign& design);
std::vector<RegimeResult> run_common_component_regimes(const std::vector<RegimeDesign>& designs);

// ---- Long-run covariance (Newey-West, Bartlett kernel) ------------------------

struct LongRunResult {
  Matrix omega;
  int bandwidth = 0;
  bool psd_floor_applied = false;
};

LongRunResult newey_west_longrun(const Matrix& score_series, int bandwidth = -1);

// ---- Remark 1: transfer-learning efficiency -----------------------------------

struct EfficiencyDesign {
  int n_x = 96;
  int n_y = 48;
  int t = 1200;
  int reps = 300;
  double omega = 0.5;  // 0 gives the Target-PCA control (X carries no signal)
  AttentionFamily family{AttentionFamily::Kind::HeteroDiagonal};
  std::vector<double> factor_variances{3.0, 2.0, 1.0};
  double noise_sd_lo = 0.8;
  double noise_sd_hi = 1.2;
  bool zero_noise = false;
  int aligned_unit = 0;     // loads Y-strong direction 1 only
  int orthogonal_unit = 1;  // loads Y-strong direction 2 only
  int t_index = -1;
  std::uint64_t seed = 1;
};

struct EfficiencyResult {
  EfficiencyDesign design;
  double var_joint_aligned = 0.0;
  double var_yonly_aligned = 0.0;
  double ratio_aligned = 0.0;
  double paired_t_aligned = 0.0;   // one-sided; negative favors the joint fit
  double p_one_sided_aligned = 1.0;
  double ratio_orthogonal = 0.0;
  bool zero_noise_flag = false;
};

EfficiencyResult efficiency_comparison(const EfficiencyDesign& design);

// ---- Lemma 1(a): Y-strong eigen-structure --------------------------------------

struct EigenScalingResult {
  std::vector<double> n_y_eff;
  std::vector<double> eig_kys;        // k_ys-th largest eigenvalue per cell
  std::vector<double> eig_next;       // (k_ys+1)-th
  double slope_kys = 0.0;
  double slope_next = 0.0;
};

EigenScalingResult run_y_block_eigen_scaling(const std::vector<int>& n_y_grid, int t, int reps,
                                             const StrongBlockSpec& block,
                                             const AttentionFamily& family, std::uint64_t seed);

}  // namespace attnfactor::mc

#endif
