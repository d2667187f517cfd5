#include "attnfactor/mc.hpp"

#include <algorithm>
#include <cmath>

#include "attnfactor/mpte.hpp"
#include "attnfactor/parallel.hpp"
#include "attnfactor/rng.hpp"

namespace attnfactor::mc {

namespace {
// Seed stream tags; replication streams hang off these.
constexpr std::uint64_t kStreamLoadings = 11;
constexpr std::uint64_t kStreamFactors = 12;
constexpr std::uint64_t kStreamNoiseSd = 13;
constexpr std::uint64_t kStreamReps = 14;
constexpr std::uint64_t kStreamBootstrap = 15;

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Orthonormal columns via Householder QR of a seeded Gaussian matrix.
Matrix random_orthonormal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix g = gaussian_matrix(rows, cols, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  return q;
}

Matrix factor_path(Eigen::Index t, const std::vector<double>& variances, Rng& rng) {
  Matrix f(t, variances.size());
  for (Eigen::Index i = 0; i < t; ++i)
    for (std::size_t j = 0; j < variances.size(); ++j)
      f(i, j) = rng.normal(0.0, std::sqrt(variances[j]));
  return f;
}

}  // namespace

attn::CrossSectionAttention AttentionFamily::build(int n_x, int n_y) const {
  const int n = n_x + n_y;
  attn::CrossSectionAttention a;
  switch (kind) {
    case Kind::DiffuseDiagonal:
      a = attn::diffuse_attention(n, attn::DiffuseVariant::Diagonal);
      break;
    case Kind::DiffuseDense:
      a = attn::diffuse_attention(n, attn::DiffuseVariant::Dense);
      break;
    case Kind::Sparse: {
      int m = static_cast<int>(std::ceil(std::pow(static_cast<double>(n), sparse_exponent)));
      a = attn::sparse_attention(n, std::min(std::max(m, 1), n));
      break;
    }
    case Kind::Identity: {
      a.matrix = attn::identity_attention(n);
      a.variant = "identity";
      break;
    }
    case Kind::HeteroDiagonal: {
      Rng rng(hetero_seed);
      a.matrix = Matrix::Zero(n, n);
      for (int i = 0; i < n; ++i) a.matrix(i, i) = rng.uniform(hetero_lo, hetero_hi);
      a.variant = "hetero_diagonal";
      break;
    }
    case Kind::TargetPca:
      a = attn::target_pca_attention(n_x, n_y, gamma);
      break;
  }
  a.block_split = {n_x, n_y};
  return a;
}

std::string AttentionFamily::name() const {
  switch (kind) {
    case Kind::DiffuseDiagonal: return "diffuse_diagonal";
    case Kind::DiffuseDense: return "diffuse_dense";
    case Kind::Sparse: return "sparse";
    case Kind::Identity: return "identity";
    case Kind::HeteroDiagonal: return "hetero_diagonal";
    case Kind::TargetPca: return "target_pca";
  }
  return "unknown";
}

attn::TemporalAttention TemporalFamily::build(int t) const {
  attn::TemporalAttention b;
  if (band_halfwidth <= 0) {
    b.matrix = Matrix::Identity(t, t);
    return b;
  }
  // Banded moving average; ||B||_F^2 / T stays O(1) for fixed half-width.
  b.matrix = Matrix::Zero(t, t);
  for (int i = 0; i < t; ++i) {
    int lo = std::max(0, i - band_halfwidth);
    int hi = std::min(t - 1, i + band_halfwidth);
    double w = 1.0 / static_cast<double>(hi - lo + 1);
    for (int j = lo; j <= hi; ++j) b.matrix(i, j) = w;
  }
  return b;
}

std::string TemporalFamily::name() const {
  return band_halfwidth <= 0 ? "identity" : "banded_" + std::to_string(band_halfwidth);
}

// ---- Theorem 1 ------------------------------------------------------------------

RateStudyResult run_consistency_study(const RateStudyDesign& design) {
  require(design.primary.invertible(),
          "run_consistency_study: the primary family must be invertible so the panel "
          "can be generated against it");
  require(static_cast<int>(design.factor_variances.size()) == design.k,
          "run_consistency_study: factor variance count must equal k");
  const int n_cells = static_cast<int>(design.n_grid.size());
  const int n_families = 1 + static_cast<int>(design.controls.size());

  std::vector<AttentionFamily> families;
  families.push_back(design.primary);
  for (const auto& f : design.controls) families.push_back(f);

  struct CellSetup {
    int n, n_x, n_y;
    Matrix lambda_raw;
    std::vector<Matrix> a;            // per family
    std::vector<Matrix> truth;        // attended loadings per family
    std::vector<double> bar_alpha;
    Matrix b;
  };
  std::vector<CellSetup> setups(n_cells);
  for (int c = 0; c < n_cells; ++c) {
    CellSetup& s = setups[c];
    s.n = design.n_grid[c];
    s.n_x = static_cast<int>(std::lround(design.x_share * s.n));
    s.n_y = s.n - s.n_x;
    Rng rng(derive_seed(design.seed, kStreamLoadings + 100 * c));
    Matrix q = random_orthonormal(s.n, design.k, rng);
    Matrix lambda_attended = std::sqrt(static_cast<double>(s.n)) * q;

    attn::TemporalAttention b = design.temporal.build(design.t);
    s.b = b.matrix;
    attn::CrossSectionAttention a0 = design.primary.build(s.n_x, s.n_y);
    // Raw loadings chosen so the primary family's attended loadings
    // A^T Lambda_raw equal the pervasiveness-normalized lambda_attended.
    s.lambda_raw = a0.matrix.transpose().inverse() * lambda_attended;

    for (const auto& fam : families) {
      attn::CrossSectionAttention af = fam.build(s.n_x, s.n_y);
      s.a.push_back(af.matrix);
      s.truth.push_back(af.matrix.transpose() * s.lambda_raw);
      s.bar_alpha.push_back(attn::attention_diagnostics(af, b, design.t).bar_alpha);
    }
  }

  // per [cell][family][rep] loading/factor MSEs; NaN marks estimator failure
  std::vector<std::vector<std::vector<double>>> mse_l(
      n_cells, std::vector<std::vector<double>>(n_families,
                                                std::vector<double>(design.reps, 0.0)));
  auto mse_f = mse_l;
  std::vector<std::vector<std::vector<char>>> failed(
      n_cells,
      std::vector<std::vector<char>>(n_families, std::vector<char>(design.reps, 0)));

  const std::size_t total = static_cast<std::size_t>(n_cells) * design.reps;
  parallel_for_indexed(total, [&](std::size_t idx) {
    const int c = static_cast<int>(idx / design.reps);
    const int rep = static_cast<int>(idx % design.reps);
    const CellSetup& s = setups[c];
    Rng rng(derive_seed(design.seed, kStreamReps + 1000003ULL * c + rep));
    Matrix f = factor_path(design.t, design.factor_variances, rng);
    Matrix e = gaussian_matrix(design.t, s.n, rng) * design.noise_sd;
    Matrix z = f * s.lambda_raw.transpose() + e;
    Matrix zb = design.temporal.band_halfwidth > 0 ? Matrix(s.b * z) : z;
    Matrix fb = design.temporal.band_halfwidth > 0 ? Matrix(s.b * f) : f;
    for (int fam = 0; fam < n_families; ++fam) {
      try {
        Matrix z_tilde = zb * s.a[fam];
        mpte::FactorFit fit = mpte::fit_attention_pca(z_tilde, design.k);
        mpte::RotationAlignment h = mpte::align_rotation(fit.loadings, s.truth[fam]);
        mse_l[c][fam][rep] = mpte::loading_mse(fit.loadings, s.truth[fam], h);
        mse_f[c][fam][rep] = mpte::factor_mse(fit.factors, fb, h);
      } catch (const NumericError&) {
        failed[c][fam][rep] = 1;
      }
    }
  });

  RateStudyResult result;
  result.design = design;
  Rng boot_rng(derive_seed(design.seed, kStreamBootstrap));
  for (int fam = 0; fam < n_families; ++fam) {
    RateFamilyResult fr;
    fr.family = families[fam].name() + (design.temporal.band_halfwidth > 0
                                            ? "+B_" + design.temporal.name()
                                            : "");
    std::vector<double> log_n, log_mse, log_bar;
    std::vector<std::vector<double>> kept(n_cells);
    for (int c = 0; c < n_cells; ++c) {
      RateCell cell;
      cell.n = setups[c].n;
      cell.bar_alpha = setups[c].bar_alpha[fam];
      std::vector<double> ok_l, ok_f;
      for (int rep = 0; rep < design.reps; ++rep) {
        if (failed[c][fam][rep]) {
          ++cell.failures;
        } else {
          ok_l.push_back(mse_l[c][fam][rep]);
          ok_f.push_back(mse_f[c][fam][rep]);
        }
      }
      cell.cell_failed =
          cell.failures > design.fail_threshold * static_cast<double>(design.reps);
      cell.mse_loadings_mean = mean(ok_l);
      cell.mse_loadings_se = ok_l.size() > 1
                                 ? std::sqrt(sample_variance(ok_l) / ok_l.size())
                                 : 0.0;
      cell.mse_factors_mean = mean(ok_f);
      fr.cells.push_back(cell);
      kept[c] = ok_l;
      if (!cell.cell_failed && cell.mse_loadings_mean > 0.0) {
        log_n.push_back(std::log(static_cast<double>(cell.n)));
        log_mse.push_back(std::log(cell.mse_loadings_mean));
        log_bar.push_back(std::log(std::max(cell.bar_alpha, 1e-300)));
      }
    }
    LineFit fit = fit_line(log_n, log_mse);
    fr.fitted_slope = fit.slope;
    fr.slope_se = fit.slope_se;
    LineFit theory = fit_line(log_n, log_bar);
    fr.theory_slope = theory.slope;
    fr.rate_condition_ok = fr.theory_slope < -1e-9;

    // Bootstrap over replications within cells.
    std::vector<double> boot_slopes;
    for (int b = 0; b < design.bootstrap; ++b) {
      std::vector<double> bx, by;
      for (int c = 0; c < n_cells; ++c) {
        if (kept[c].empty()) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < kept[c].size(); ++i)
          s += kept[c][static_cast<std::size_t>(
              boot_rng.uniform_int(0, static_cast<std::int64_t>(kept[c].size()) - 1))];
        double m = s / static_cast<double>(kept[c].size());
        if (m > 0.0) {
          bx.push_back(std::log(static_cast<double>(setups[c].n)));
          by.push_back(std::log(m));
        }
      }
      if (bx.size() >= 2) boot_slopes.push_back(fit_line(bx, by).slope);
    }
    fr.slope_bootstrap_se = std::sqrt(sample_variance(boot_slopes));
    result.families.push_back(fr);
  }
  return result;
}

// ---- Strong block ----------------------------------------------------------------

StrongBlock build_strong_block(int n_x, int n_y, const StrongBlockSpec& spec,
                               std::uint64_t seed) {
  require(spec.k_ys >= 1 && spec.k_ys <= spec.k, "strong block: need 1 <= k_ys <= k");
  require(spec.k - spec.k_ys <= 1, "strong block: construction supports k_R <= 1");
  require(spec.omega >= 0.0 && spec.omega < 1.0, "strong block: omega must lie in [0,1)");
  require(spec.k_ys == 2, "strong block: construction is specialized to k_ys = 2");
  const int n = n_x + n_y;
  const double nn = static_cast<double>(n);
  Rng rng(derive_seed(seed, kStreamLoadings));

  // Y-block directions for the two Y-strong columns.
  Matrix qy;
  if (spec.disjoint_y_support) {
    // Direction 1 lives on even Y rows, direction 2 on odd rows, so every
    // Y unit is purely X-aligned or purely orthogonal.
    qy = Matrix::Zero(n_y, 2);
    int n_even = (n_y + 1) / 2, n_odd = n_y / 2;
    for (int i = 0; i < n_y; ++i) {
      double g = 0.5 + 0.5 * rng.uniform();  // bounded away from zero
      if (i % 2 == 0) {
        qy(i, 0) = g;
      } else {
        qy(i, 1) = g;
      }
    }
    (void)n_even;
    (void)n_odd;
    qy.col(0) /= qy.col(0).norm();
    qy.col(1) /= qy.col(1).norm();
  } else {
    qy = random_orthonormal(n_y, 2, rng);
  }
  Matrix qx = random_orthonormal(n_x, 2, rng);

  Matrix lambda = Matrix::Zero(n, spec.k);
  // Column 1: Y-strong, X-informed with energy share omega.
  lambda.col(0).head(n_x) = qx.col(0) * std::sqrt(spec.omega * nn);
  lambda.col(0).tail(n_y) = qy.col(0) * std::sqrt((1.0 - spec.omega) * nn);
  // Column 2: Y-strong, Y-only.
  lambda.col(1).tail(n_y) = qy.col(1) * std::sqrt(nn);
  // Column 3 (if any): the rest factor, X-only.
  if (spec.k > spec.k_ys) lambda.col(2).head(n_x) = qx.col(1) * std::sqrt(nn);

  StrongBlock block;
  block.lambda = lambda;
  block.n_x = n_x;
  block.n_y = n_y;
  block.k_ys = spec.k_ys;

  // Invariants of the construction.
  Matrix gram = lambda.transpose() * lambda / nn;
  require((gram - Matrix::Identity(spec.k, spec.k)).norm() < 1e-8,
          "strong block: loading columns are not orthonormalized");
  Matrix sy = block.lambda_ys_y();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sy.transpose() * sy /
                                            static_cast<double>(n_y));
  require(eig.eigenvalues().minCoeff() > 0.1,
          "strong block: Y-strong second moment nearly singular");
  return block;
}

// ---- Shared fitting helpers -------------------------------------------------------

namespace {

struct YsFit {
  Matrix lambda_ys;      // N_y x k_ys
  Matrix lambda_ys_all;  // N x k_ys
  Matrix f_ys;           // T x k_ys
  Matrix h;              // Procrustes rotation: estimate ~ H truth
  Matrix ehat;           // T x N residuals of the full fit
};

// Lemma 1 extraction: eigendecompose the estimated Y-block loading second
// moment, take the top-k_ys eigenspace, then align within it.
YsFit fit_y_strong(const Matrix& z_tilde, int n_y, int k, int k_ys, const Matrix& truth_ys_y,
                   bool want_residuals) {
  mpte::FactorFit fit = mpte::fit_attention_pca(z_tilde, k);
  Matrix lambda_y = fit.loadings.bottomRows(n_y);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(lambda_y.transpose() * lambda_y);
  Matrix v(k, k_ys);
  for (int j = 0; j < k_ys; ++j) v.col(j) = eig.eigenvectors().col(k - 1 - j);
  YsFit out;
  out.lambda_ys = lambda_y * v;
  out.lambda_ys_all = fit.loadings * v;
  out.f_ys = fit.factors * v;
  mpte::RotationAlignment align = mpte::align_rotation(out.lambda_ys, truth_ys_y);
  out.h = align.h;
  if (want_residuals) out.ehat = z_tilde - fit.factors * fit.loadings.transpose();
  return out;
}

struct PanelDraw {
  Matrix z_tilde;
  Matrix e_tilde;
};

// Attended panel draw: Z~ = F Lambda^(A)T + e_tilde with independent Gaussian
// attended noise of per-unit sd sigma_tilde (the diagonal-attention image of
// independent raw noise).
PanelDraw draw_attended_panel(const Matrix& f, const Matrix& lambda, const Vector& sigma_tilde,
                              Rng& rng) {
  PanelDraw draw;
  const Eigen::Index t = f.rows(), n = lambda.rows();
  draw.e_tilde = Matrix(t, n);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j < n; ++j) draw.e_tilde(i, j) = rng.normal(0.0, sigma_tilde(j));
  draw.z_tilde = f * lambda.transpose() + draw.e_tilde;
  return draw;
}

struct NormalitySetup {
  StrongBlock block;
  Matrix f;             // fixed factor path
  Vector weights;       // diagonal attention weights
  Vector sigma_tilde;   // attended noise sds
  double n_eff = 0.0;
  Matrix sigma_f_y;     // realized (1/T) sum F^S F^S'
  Matrix sigma_lambda;  // (1/N_eff) Lambda_ys' Lambda_ys over all units
  Matrix xi;            // (1/N_eff) sum lambda lambda' sigma_tilde^2
};

NormalitySetup make_normality_setup(int n_x, int n_y, int t, const StrongBlockSpec& spec,
                                    const AttentionFamily& family,
                                    const std::vector<double>& factor_variances,
                                    double sd_lo, double sd_hi, bool zero_noise,
                                    std::uint64_t seed) {
  require(family.kind == AttentionFamily::Kind::HeteroDiagonal ||
              family.kind == AttentionFamily::Kind::Identity ||
              family.kind == AttentionFamily::Kind::TargetPca ||
              family.kind == AttentionFamily::Kind::DiffuseDiagonal,
          "normality setup: attention family must be diagonal");
  NormalitySetup s;
  s.block = build_strong_block(n_x, n_y, spec, seed);
  const int n = n_x + n_y;
  attn::CrossSectionAttention a = family.build(n_x, n_y);
  s.weights = a.matrix.diagonal();
  s.n_eff = attn::attention_diagnostics(a, TemporalFamily{}.build(t), t).n_eff;

  Rng f_rng(derive_seed(seed, kStreamFactors));
  s.f = factor_path(t, factor_variances, f_rng);

  Rng sd_rng(derive_seed(seed, kStreamNoiseSd));
  s.sigma_tilde = Vector(n);
  for (int i = 0; i < n; ++i) {
    double raw_sd = zero_noise ? 0.0 : sd_rng.uniform(sd_lo, sd_hi);
    s.sigma_tilde(i) = s.weights(i) * raw_sd;
  }

  const int k_ys = spec.k_ys;
  Matrix f_s = s.f.leftCols(k_ys);
  s.sigma_f_y = f_s.transpose() * f_s / static_cast<double>(t);
  Matrix lam_ys = s.block.lambda.leftCols(k_ys);
  s.sigma_lambda = lam_ys.transpose() * lam_ys / s.n_eff;
  s.xi = Matrix::Zero(k_ys, k_ys);
  for (int i = 0; i < n; ++i)
    s.xi += lam_ys.row(i).transpose() * lam_ys.row(i) * s.sigma_tilde(i) * s.sigma_tilde(i);
  s.xi /= s.n_eff;
  return s;
}

double coverage_quantile(double nominal) {
  // Inverse normal for the two-sided band; nominal 0.95 -> 1.959964.
  // Newton refinement of an initial Beasley-Springer-Moro style guess.
  double p = 1.0 - (1.0 - nominal) / 2.0;
  double x = 0.0;
  for (int it = 0; it < 60; ++it) {
    double f = normal_cdf(x) - p;
    double d = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    x -= f / std::max(d, 1e-12);
  }
  return x;
}

}  // namespace

// ---- Theorem 2 --------------------------------------------------------------------

NormalityResult run_loading_normality_study(const NormalityDesign& design) {
  NormalityResult result;
  result.design = design;
  NormalitySetup setup = make_normality_setup(
      design.n_x, design.n_y, design.t, design.block, design.family, design.factor_variances,
      design.noise_sd_lo, design.noise_sd_hi, design.zero_noise, design.seed);
  result.n_eff = setup.n_eff;
  if (design.zero_noise) {
    result.degenerate_zero_noise = true;
    return result;
  }
  const int k_ys = design.block.k_ys;
  const int n_units = static_cast<int>(design.units.size());
  Matrix truth = setup.block.lambda_ys_y();

  int bw = design.hac_bandwidth;
  if (bw < 0) bw = static_cast<int>(std::floor(4.0 * std::pow(design.t / 100.0, 2.0 / 9.0)));
  require(design.t > 2 * bw, "loading normality: HAC bandwidth exceeds T/2");

  // [rep][unit*k_ys + j] studentized errors, oracle and feasible.
  const int n_coords = n_units * k_ys;
  Matrix z_oracle(design.reps, n_coords), z_feasible(design.reps, n_coords);
  std::vector<char> rep_failed(design.reps, 0);

  Matrix sigma_f_inv = setup.sigma_f_y.inverse();
  parallel_for_indexed(design.reps, [&](std::size_t rep) {
    Rng rng(derive_seed(design.seed, kStreamReps + rep));
    PanelDraw draw = draw_attended_panel(setup.f, setup.block.lambda, setup.sigma_tilde, rng);
    YsFit fit;
    try {
      fit = fit_y_strong(draw.z_tilde, design.n_y, design.block.k, k_ys, truth, true);
    } catch (const NumericError&) {
      rep_failed[rep] = 1;
      return;
    }
    Matrix sigma_f_feas = fit.f_ys.transpose() * fit.f_ys / static_cast<double>(design.t);
    Matrix sigma_f_feas_inv = sigma_f_feas.inverse();
    for (int u = 0; u < n_units; ++u) {
      int i_local = design.units[u];
      int i_global = design.n_x + i_local;
      Vector err = fit.lambda_ys.row(i_local).transpose() -
                   fit.h * truth.row(i_local).transpose();
      // Oracle: Omega = sigma~_i^2 Sigma_F (independent errors), rotated by H.
      double s2 = setup.sigma_tilde(i_global) * setup.sigma_tilde(i_global);
      Matrix v_oracle = fit.h * (s2 * sigma_f_inv) * fit.h.transpose();
      // Feasible: HAC on the realized score series F^S_t ehat_it.
      Matrix scores(design.t, k_ys);
      for (int t = 0; t < design.t; ++t)
        scores.row(t) = fit.f_ys.row(t) * fit.ehat(t, i_global);
      LongRunResult lr = newey_west_longrun(scores, bw);
      Matrix v_feas = sigma_f_feas_inv * lr.omega * sigma_f_feas_inv;
      for (int j = 0; j < k_ys; ++j) {
        double s_o = std::sqrt(std::max(v_oracle(j, j), 1e-300) / design.t);
        double s_f = std::sqrt(std::max(v_feas(j, j), 1e-300) / design.t);
        z_oracle(rep, u * k_ys + j) = err(j) / s_o;
        z_feasible(rep, u * k_ys + j) = err(j) / s_f;
      }
    }
  });

  double crit = coverage_quantile(design.nominal);
  for (int u = 0; u < n_units; ++u) {
    for (int j = 0; j < k_ys; ++j) {
      CoverageCoordinate coord;
      coord.label = "loading_unit" + std::to_string(design.units[u]) + "_coord" +
                    std::to_string(j);
      int used = 0, cov_o = 0, cov_f = 0;
      std::vector<double> zo;
      for (int rep = 0; rep < design.reps; ++rep) {
        if (rep_failed[rep]) continue;
        ++used;
        double a = z_oracle(rep, u * k_ys + j);
        double b = z_feasible(rep, u * k_ys + j);
        if (std::abs(a) <= crit) ++cov_o;
        if (std::abs(b) <= crit) ++cov_f;
        zo.push_back(a);
      }
      coord.reps_used = used;
      coord.coverage_oracle = used > 0 ? static_cast<double>(cov_o) / used : 0.0;
      coord.coverage_feasible = used > 0 ? static_cast<double>(cov_f) / used : 0.0;
      coord.ks_oracle = ks_test_standard_normal(zo);
      result.coordinates.push_back(coord);
    }
  }
  return result;
}

NormalityResult run_factor_normality_study(const NormalityDesign& design) {
  NormalityResult result;
  result.design = design;
  NormalitySetup setup = make_normality_setup(
      design.n_x, design.n_y, design.t, design.block, design.family, design.factor_variances,
      design.noise_sd_lo, design.noise_sd_hi, design.zero_noise, design.seed);
  result.n_eff = setup.n_eff;
  if (design.zero_noise) {
    result.degenerate_zero_noise = true;
    return result;
  }
  const int k_ys = design.block.k_ys;
  const int n_times = static_cast<int>(design.t_indices.size());
  Matrix truth = setup.block.lambda_ys_y();
  Matrix f_s = setup.f.leftCols(k_ys);

  Matrix sigma_lambda_inv = setup.sigma_lambda.inverse();
  Matrix v_factor_true = sigma_lambda_inv * setup.xi * sigma_lambda_inv;

  const int n_coords = n_times * k_ys;
  Matrix z_oracle(design.reps, n_coords), z_feasible(design.reps, n_coords);
  std::vector<char> rep_failed(design.reps, 0);

  parallel_for_indexed(design.reps, [&](std::size_t rep) {
    Rng rng(derive_seed(design.seed, kStreamReps + rep));
    PanelDraw draw = draw_attended_panel(setup.f, setup.block.lambda, setup.sigma_tilde, rng);
    YsFit fit;
    try {
      fit = fit_y_strong(draw.z_tilde, design.n_y, design.block.k, k_ys, truth, true);
    } catch (const NumericError&) {
      rep_failed[rep] = 1;
      return;
    }
    Matrix sigma_lambda_feas =
        fit.lambda_ys_all.transpose() * fit.lambda_ys_all / setup.n_eff;
    Matrix sigma_lambda_feas_inv = sigma_lambda_feas.inverse();
    for (int ti = 0; ti < n_times; ++ti) {
      int t_idx = design.t_indices[ti];
      // (H^T)^-1 = H for the orthogonal Procrustes rotation.
      Vector err = fit.f_ys.row(t_idx).transpose() - fit.h * f_s.row(t_idx).transpose();
      Matrix v_oracle = fit.h * v_factor_true * fit.h.transpose();
      Matrix xi_feas = Matrix::Zero(k_ys, k_ys);
      for (int i = 0; i < design.n_x + design.n_y; ++i) {
        double e2 = fit.ehat(t_idx, i) * fit.ehat(t_idx, i);
        xi_feas += fit.lambda_ys_all.row(i).transpose() * fit.lambda_ys_all.row(i) * e2;
      }
      xi_feas /= setup.n_eff;
      Matrix v_feas = sigma_lambda_feas_inv * xi_feas * sigma_lambda_feas_inv;
      for (int j = 0; j < k_ys; ++j) {
        double s_o = std::sqrt(std::max(v_oracle(j, j), 1e-300) / setup.n_eff);
        double s_f = std::sqrt(std::max(v_feas(j, j), 1e-300) / setup.n_eff);
        z_oracle(rep, ti * k_ys + j) = err(j) / s_o;
        z_feasible(rep, ti * k_ys + j) = err(j) / s_f;
      }
    }
  });

  double crit = coverage_quantile(design.nominal);
  for (int ti = 0; ti < n_times; ++ti) {
    for (int j = 0; j < k_ys; ++j) {
      CoverageCoordinate coord;
      coord.label =
          "factor_t" + std::to_string(design.t_indices[ti]) + "_coord" + std::to_string(j);
      int used = 0, cov_o = 0, cov_f = 0;
      std::vector<double> zo;
      for (int rep = 0; rep < design.reps; ++rep) {
        if (rep_failed[rep]) continue;
        ++used;
        double a = z_oracle(rep, ti * k_ys + j);
        double b = z_feasible(rep, ti * k_ys + j);
        if (std::abs(a) <= crit) ++cov_o;
        if (std::abs(b) <= crit) ++cov_f;
        zo.push_back(a);
      }
      coord.reps_used = used;
      coord.coverage_oracle = used > 0 ? static_cast<double>(cov_o) / used : 0.0;
      coord.coverage_feasible = used > 0 ? static_cast<double>(cov_f) / used : 0.0;
      coord.ks_oracle = ks_test_standard_normal(zo);
      result.coordinates.push_back(coord);
    }
  }
  return result;
}

// ---- Theorem 3 --------------------------------------------------------------------

RegimeResult run_common_component_regime(const RegimeDesign& design) {
  RegimeResult result;
  result.design = design;
  NormalitySetup setup = make_normality_setup(
      design.n_x, design.n_y, design.t, design.block, design.family, design.factor_variances,
      design.noise_sd_lo, design.noise_sd_hi, design.zero_noise, design.seed);
  result.n_eff = setup.n_eff;
  result.c_ratio = setup.n_eff / static_cast<double>(design.t);
  const int k_ys = design.block.k_ys;
  const int t_idx = design.t_index >= 0 ? design.t_index : design.t / 2;
  Matrix truth = setup.block.lambda_ys_y();
  Matrix f_s = setup.f.leftCols(k_ys);
  Vector lam_i = truth.row(design.unit).transpose();
  Vector f_t = f_s.row(t_idx).transpose();
  double c_true = lam_i.dot(f_t);

  if (design.zero_noise) {
    result.zero_noise_flag = true;
    return result;
  }

  std::vector<double> err(design.reps, 0.0), d_f(design.reps, 0.0), d_l(design.reps, 0.0);
  std::vector<char> rep_failed(design.reps, 0);
  parallel_for_indexed(design.reps, [&](std::size_t rep) {
    Rng rng(derive_seed(design.seed, kStreamReps + rep));
    PanelDraw draw = draw_attended_panel(setup.f, setup.block.lambda, setup.sigma_tilde, rng);
    YsFit fit;
    try {
      fit = fit_y_strong(draw.z_tilde, design.n_y, design.block.k, k_ys, truth, false);
    } catch (const NumericError&) {
      rep_failed[rep] = 1;
      return;
    }
    double c_hat = fit.lambda_ys.row(design.unit).dot(fit.f_ys.row(t_idx));
    Vector f_err = fit.f_ys.row(t_idx).transpose() - fit.h * f_t;
    Vector l_err = fit.lambda_ys.row(design.unit).transpose() - fit.h * lam_i;
    err[rep] = c_hat - c_true;
    d_f[rep] = lam_i.dot(f_err);               // Delta_F with (H^T)^-1 = H
    d_l[rep] = l_err.dot(fit.h * f_t);         // Delta_Lambda
  });

  std::vector<double> e_ok, f_ok, l_ok;
  for (int rep = 0; rep < design.reps; ++rep) {
    if (rep_failed[rep]) continue;
    e_ok.push_back(err[rep]);
    f_ok.push_back(d_f[rep]);
    l_ok.push_back(d_l[rep]);
  }
  result.var_total = variance(e_ok);
  result.var_f_term = variance(f_ok);
  result.var_lambda_term = variance(l_ok);
  result.lambda_share = result.var_total > 0.0 ? result.var_lambda_term / result.var_total : 0.0;

  // Oracle asymptotic variances at the fixed (i, t); the population rotation
  // is the identity by construction.
  Matrix sigma_lambda_inv = setup.sigma_lambda.inverse();
  Matrix v_factor = sigma_lambda_inv * setup.xi * sigma_lambda_inv;
  result.sigma2_f = lam_i.dot(v_factor * lam_i);
  int unit_global = design.n_x + design.unit;
  double s2 = setup.sigma_tilde(unit_global) * setup.sigma_tilde(unit_global);
  Matrix v_lambda = s2 * setup.sigma_f_y.inverse();
  result.sigma2_lambda = f_t.dot(v_lambda * f_t);

  switch (design.regime) {
    case Regime::FDominant:
      result.rate_scaled_var = setup.n_eff * result.var_total;
      result.rate_target = result.sigma2_f;
      break;
    case Regime::LambdaDominant:
      result.rate_scaled_var = design.t * result.var_total;
      result.rate_target = result.sigma2_lambda;
      break;
    case Regime::Mixed:
      result.rate_scaled_var = design.t * result.var_total;
      result.rate_target = result.sigma2_lambda + result.c_ratio * result.sigma2_f;
      break;
  }
  return result;
}

std::vector<RegimeResult> run_common_component_regimes(const std::vector<RegimeDesign>& designs) {
  std::vector<RegimeResult> out;
  out.reserve(designs.size());
  for (const auto& d : designs) out.push_back(run_common_component_regime(d));
  return out;
}

// ---- Newey-West -------------------------------------------------------------------

LongRunResult newey_west_longrun(const Matrix& score_series, int bandwidth) {
  const Eigen::Index t = score_series.rows();
  const Eigen::Index k = score_series.cols();
  require(t >= 2, "newey_west_longrun: series too short");
  int bw = bandwidth;
  if (bw < 0) bw = static_cast<int>(std::floor(4.0 * std::pow(t / 100.0, 2.0 / 9.0)));
  require(bw < t, "newey_west_longrun: bandwidth must be below T");
  require(t > 2 * bw, "newey_west_longrun: need T > 2 * bandwidth");

  Matrix centered = score_series;
  centered.rowwise() -= score_series.colwise().mean();
  Matrix omega = centered.transpose() * centered / static_cast<double>(t);
  for (int l = 1; l <= bw; ++l) {
    Matrix gamma = centered.bottomRows(t - l).transpose() * centered.topRows(t - l) /
                   static_cast<double>(t);
    double w = 1.0 - static_cast<double>(l) / (bw + 1);
    omega += w * (gamma + gamma.transpose());
  }
  omega = 0.5 * (omega + omega.transpose().eval());

  LongRunResult result;
  result.bandwidth = bw;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(omega);
  if (eig.eigenvalues().minCoeff() < 0.0) {
    Vector clipped = eig.eigenvalues().cwiseMax(0.0);
    omega = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    result.psd_floor_applied = true;
  }
  result.omega = omega;
  (void)k;
  return result;
}

// ---- Remark 1 ----------------------------------------------------------------------

EfficiencyResult efficiency_comparison(const EfficiencyDesign& design) {
  EfficiencyResult result;
  result.design = design;
  StrongBlockSpec spec;
  spec.k = 3;
  spec.k_ys = 2;
  spec.omega = design.omega;
  spec.disjoint_y_support = true;  // units are purely aligned or orthogonal
  NormalitySetup setup = make_normality_setup(
      design.n_x, design.n_y, design.t, spec, design.family, design.factor_variances,
      design.noise_sd_lo, design.noise_sd_hi, design.zero_noise, design.seed);
  if (design.zero_noise) {
    result.zero_noise_flag = true;
    return result;
  }
  const int k_ys = spec.k_ys;
  const int t_idx = design.t_index >= 0 ? design.t_index : design.t / 2;
  Matrix truth = setup.block.lambda_ys_y();
  Matrix f_s = setup.f.leftCols(k_ys);
  require(design.aligned_unit % 2 == 0 && design.orthogonal_unit % 2 == 1,
          "efficiency_comparison: with disjoint support, aligned units are even rows and "
          "orthogonal units odd rows");

  const int units[2] = {design.aligned_unit, design.orthogonal_unit};
  double c_true[2];
  for (int u = 0; u < 2; ++u)
    c_true[u] = truth.row(units[u]).dot(f_s.row(t_idx));

  Matrix err_joint(design.reps, 2), err_yonly(design.reps, 2);
  std::vector<char> rep_failed(design.reps, 0);
  parallel_for_indexed(design.reps, [&](std::size_t rep) {
    Rng rng(derive_seed(design.seed, kStreamReps + rep));
    PanelDraw draw = draw_attended_panel(setup.f, setup.block.lambda, setup.sigma_tilde, rng);
    try {
      YsFit joint = fit_y_strong(draw.z_tilde, design.n_y, spec.k, k_ys, truth, false);
      // Y-only analogue: the same estimator on the attended Y block alone.
      Matrix z_y = draw.z_tilde.rightCols(design.n_y);
      mpte::FactorFit yfit = mpte::fit_attention_pca(z_y, k_ys);
      Matrix c_y = yfit.factors.row(t_idx) * yfit.loadings.transpose();
      for (int u = 0; u < 2; ++u) {
        double cj = joint.lambda_ys.row(units[u]).dot(joint.f_ys.row(t_idx));
        err_joint(rep, u) = cj - c_true[u];
        err_yonly(rep, u) = c_y(0, units[u]) - c_true[u];
      }
    } catch (const NumericError&) {
      rep_failed[rep] = 1;
    }
  });

  std::vector<double> ej[2], ey[2];
  for (int rep = 0; rep < design.reps; ++rep) {
    if (rep_failed[rep]) continue;
    for (int u = 0; u < 2; ++u) {
      ej[u].push_back(err_joint(rep, u));
      ey[u].push_back(err_yonly(rep, u));
    }
  }
  result.var_joint_aligned = variance(ej[0]);
  result.var_yonly_aligned = variance(ey[0]);
  result.ratio_aligned =
      result.var_yonly_aligned > 0.0 ? result.var_joint_aligned / result.var_yonly_aligned : 0.0;
  double var_joint_orth = variance(ej[1]);
  double var_yonly_orth = variance(ey[1]);
  result.ratio_orthogonal = var_yonly_orth > 0.0 ? var_joint_orth / var_yonly_orth : 0.0;

  // One-sided paired test on centered squared errors of the aligned unit.
  double mj = mean(ej[0]), my = mean(ey[0]);
  std::vector<double> d;
  for (std::size_t i = 0; i < ej[0].size(); ++i) {
    double a = ej[0][i] - mj, b = ey[0][i] - my;
    d.push_back(a * a - b * b);
  }
  double se = std::sqrt(sample_variance(d) / static_cast<double>(d.size()));
  result.paired_t_aligned = se > 0.0 ? mean(d) / se : 0.0;
  result.p_one_sided_aligned = normal_cdf(result.paired_t_aligned);
  return result;
}

// ---- Lemma 1(a) ---------------------------------------------------------------------

EigenScalingResult run_y_block_eigen_scaling(const std::vector<int>& n_y_grid, int t, int reps,
                                             const StrongBlockSpec& block,
                                             const AttentionFamily& family, std::uint64_t seed) {
  EigenScalingResult result;
  std::vector<double> log_neff, log_kys, log_next;
  for (std::size_t c = 0; c < n_y_grid.size(); ++c) {
    int n_y = n_y_grid[c];
    int n_x = 2 * n_y;  // fixed block ratio
    NormalitySetup setup =
        make_normality_setup(n_x, n_y, t, block, family, {3.0, 2.0, 1.0}, 0.8, 1.2, false,
                             derive_seed(seed, c));
    double n_y_eff = setup.weights.tail(n_y).squaredNorm();
    std::vector<double> e1(reps), e2(reps);
    parallel_for_indexed(reps, [&](std::size_t rep) {
      Rng rng(derive_seed(seed, kStreamReps + 7919 * c + rep));
      PanelDraw draw = draw_attended_panel(setup.f, setup.block.lambda, setup.sigma_tilde, rng);
      Matrix z_y = draw.z_tilde.rightCols(n_y);
      Eigen::SelfAdjointEigenSolver<Matrix> eig(z_y.transpose() * z_y /
                                                static_cast<double>(t));
      e1[rep] = eig.eigenvalues()(n_y - block.k_ys);
      e2[rep] = eig.eigenvalues()(n_y - block.k_ys - 1);
    });
    result.n_y_eff.push_back(n_y_eff);
    result.eig_kys.push_back(mean(e1));
    result.eig_next.push_back(mean(e2));
    log_neff.push_back(std::log(n_y_eff));
    log_kys.push_back(std::log(std::max(mean(e1), 1e-300)));
    log_next.push_back(std::log(std::max(mean(e2), 1e-300)));
  }
  result.slope_kys = fit_line(log_neff, log_kys).slope;
  result.slope_next = fit_line(log_neff, log_next).slope;
  return result;
}

}  // namespace attnfactor::mc
