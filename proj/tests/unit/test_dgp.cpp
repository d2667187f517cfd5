#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "attnfactor/dgp.hpp"
#include "attnfactor/io.hpp"
#include "attnfactor/rng.hpp"

using namespace attnfactor;
using namespace attnfactor::dgp;

namespace {

// Independent spectral-radius check: power iteration on the companion matrix
// built by hand.
double power_iteration_radius(const std::vector<Matrix>& blocks) {
  const int q = static_cast<int>(blocks[0].rows());
  const int p = static_cast<int>(blocks.size());
  Matrix c = Matrix::Zero(q * p, q * p);
  for (int l = 0; l < p; ++l) c.block(0, l * q, q, q) = blocks[l];
  if (p > 1) c.block(q, 0, q * (p - 1), q * (p - 1)).setIdentity();
  // Power iteration on C^T C gives the squared largest singular value; to get
  // the spectral radius use repeated squaring of C instead: ||C^m||^(1/m).
  Matrix m = c;
  for (int it = 0; it < 9; ++it) {
    m = m * m;
    m /= std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  }
  // rho(C) = lim ||C^m x||^(1/m); recover through one more multiply.
  Vector x = Vector::Ones(q * p).normalized();
  Vector y = m * x;
  double norm_m = y.norm();
  Matrix m2 = c * m;
  double norm_m2 = (m2 * x).norm();
  return norm_m2 / std::max(norm_m, 1e-300);
}

DgpConfig small_config() {
  DgpConfig cfg;
  cfg.q = 2;
  cfg.n_x = 6;
  cfg.n_y = 3;
  cfg.t_high = 300;
  cfg.burn_in = 50;
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("rescale_to_spectral_radius: scalar cases against the hand oracle") {
  std::vector<Matrix> half{Matrix::Constant(1, 1, 0.5)};
  auto same = rescale_to_spectral_radius(half, 0.9);
  CHECK(same[0](0, 0) == 0.5);

  std::vector<Matrix> two{Matrix::Constant(1, 1, 2.0)};
  auto scaled = rescale_to_spectral_radius(two, 0.5);
  double radius = companion_spectral_radius(scaled);
  CHECK(radius <= 0.5 + 1e-12);
  CHECK(radius >= 0.5 - 1e-4);
  CHECK(scaled[0](0, 0) == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("rescale_to_spectral_radius: VAR(2) blocks against power iteration") {
  Rng rng(1);
  std::vector<Matrix> blocks(2, Matrix(3, 3));
  for (auto& b : blocks)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) b(i, j) = rng.uniform(-0.9, 0.9);
  double before = companion_spectral_radius(blocks);
  CHECK(before == doctest::Approx(power_iteration_radius(blocks)).epsilon(1e-3));
  if (before <= 0.95) {
    for (auto& b : blocks) b *= 1.3 / before;  // force a violation
  }
  auto scaled = rescale_to_spectral_radius(blocks, 0.95);
  double after = companion_spectral_radius(scaled);
  CHECK(after <= 0.95 + 1e-12);
  CHECK(after >= 0.95 - 1e-4);
  CHECK(after == doctest::Approx(power_iteration_radius(scaled)).epsilon(1e-3));
}

TEST_CASE("simulate_factors: iid case variance 0.5 within 3 MC standard errors") {
  DgpConfig cfg = small_config();
  cfg.q = 1;
  cfg.t_high = 10000;
  cfg.rho_factor = 0.01;  // forces Phi ~ 0 after rescaling
  Rng rng(cfg.seed);
  LatentPath latent = simulate_factors(cfg, rng);
  // With the tiny spectral cap the AR component is negligible; the variance
  // of the innovation is 0.5.
  double var = (latent.f.col(0).array() - latent.f.col(0).mean()).square().mean();
  double tol = 3.0 * 0.5 * std::sqrt(2.0 / cfg.t_high) + 0.01;  // 3 se + AR remainder
  CHECK(std::abs(var - 0.5) < tol);
  CHECK(latent.f.rows() == cfg.t_high);
}

TEST_CASE("simulate_factors: seed-identical calls are bitwise identical") {
  DgpConfig cfg = small_config();
  Rng r1(cfg.seed), r2(cfg.seed);
  LatentPath a = simulate_factors(cfg, r1);
  LatentPath b = simulate_factors(cfg, r2);
  CHECK(a.f == b.f);
}

TEST_CASE("simulate_factors: lag-0 autocovariance solves the Yule-Walker system") {
  DgpConfig cfg = small_config();
  cfg.q = 2;
  cfg.t_high = 60000;
  cfg.burn_in = 500;
  Rng rng(5);
  LatentPath latent = simulate_factors(cfg, rng);

  // Companion-form Lyapunov solve: vec(Gamma) = (I - C (x) C)^-1 vec(Sigma_U).
  const int q = 2, p = 2;
  Matrix c = Matrix::Zero(q * p, q * p);
  c.block(0, 0, q, q) = latent.phi[0];
  c.block(0, q, q, q) = latent.phi[1];
  c.block(q, 0, q, q).setIdentity();
  Matrix sigma_u = Matrix::Zero(q * p, q * p);
  sigma_u.block(0, 0, q, q) = latent.innovations_cov;
  const int d = q * p;
  Matrix kron(d * d, d * d);
  for (int i1 = 0; i1 < d; ++i1)
    for (int j1 = 0; j1 < d; ++j1)
      for (int i2 = 0; i2 < d; ++i2)
        for (int j2 = 0; j2 < d; ++j2)
          kron(i1 * d + i2, j1 * d + j2) = c(i1, j1) * c(i2, j2);
  Eigen::Map<const Vector> vec_sigma(sigma_u.data(), sigma_u.size());
  Vector vec_gamma = (Matrix::Identity(16, 16) - kron).lu().solve(vec_sigma);
  Eigen::Map<const Matrix> gamma_companion(vec_gamma.data(), q * p, q * p);
  Matrix gamma0 = gamma_companion.block(0, 0, q, q);

  Matrix sample = latent.f.transpose() * latent.f / static_cast<double>(cfg.t_high);
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j)
      CHECK(sample(i, j) == doctest::Approx(gamma0(i, j)).epsilon(0.05).scale(gamma0.trace()));
}

TEST_CASE("median_heuristic_gamma: hand cases") {
  Matrix two(2, 1);
  two << 0.0, 2.0;
  CHECK(median_heuristic_gamma(two) == doctest::Approx(1.0 / 8).epsilon(1e-12));

  // 3-4-5 right triangle: vertices (0,0), (3,0), (0,4); median distance 4.
  Matrix tri(3, 2);
  tri << 0, 0, 3, 0, 0, 4;
  CHECK(median_heuristic_gamma(tri) == doctest::Approx(1.0 / 32).epsilon(1e-12));

  Matrix same = Matrix::Zero(3, 2);
  CHECK_THROWS_AS(median_heuristic_gamma(same), NumericError);
  CHECK_THROWS_AS(median_heuristic_gamma(Matrix::Zero(1, 2)), ArgumentError);
}

TEST_CASE("rbf_transform: degenerate, single-row and unit-variance cases") {
  Matrix center(1, 2);
  center << 0.3, -0.1;
  Matrix constant_path = center.replicate(50, 1);
  CHECK_THROWS_AS(rbf_transform(constant_path, center, 1.0), NumericError);

  Matrix single = center;
  Matrix one = rbf_transform(single, center, 2.5);
  CHECK(one(0, 0) == doctest::Approx(1.0));  // exp(0), no standardization possible

  Rng rng(3);
  Matrix f(200, 2);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
  Matrix centers(6, 2);
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = rng.normal();
  Vector sigmas;
  Matrix h = rbf_transform(f, centers, median_heuristic_gamma(centers), &sigmas);
  for (int j = 0; j < 6; ++j) {
    double mu = h.col(j).mean();
    double var = (h.col(j).array() - mu).square().sum() / (f.rows() - 1);
    CHECK(std::abs(var - 1.0) < 1e-10);
    CHECK(h.col(j).minCoeff() > 0.0);
  }
}

TEST_CASE("almon_loadings: weights and normalization") {
  Rng rng(4);
  Vector w;
  auto blocks = almon_loadings(3, 2, 0, 0.0, -1.0, rng, &w);
  CHECK(blocks.size() == 1);
  CHECK(w(0) == doctest::Approx(1.0));

  Rng rng2(4);
  auto decay = almon_loadings(3, 2, 2, 0.0, -1.0, rng2, &w);
  double z = 1.0 + std::exp(-1.0) + std::exp(-4.0);
  CHECK(w(0) == doctest::Approx(1.0 / z).epsilon(1e-12));
  CHECK(w(1) == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-12));
  CHECK(w(2) == doctest::Approx(std::exp(-4.0) / z).epsilon(1e-12));
  CHECK(std::abs(w.sum() - 1.0) < 1e-12);
  // Blocks are the shared base scaled by the weights.
  CHECK((decay[1] - decay[0] * (w(1) / w(0))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("simulate_panels: noiseless zero-AR panel equals the factor-driven input") {
  DgpConfig cfg = small_config();
  cfg.l_x = 0;
  cfg.l_y = 0;
  cfg.snr = std::numeric_limits<double>::infinity();
  SimulatedData data = simulate(cfg);
  // Recompute X_t = sum_j Lambda_xj g(F_t-j) by hand (pre-sample lags 0).
  for (int t = 0; t < cfg.t_high; ++t) {
    Vector expected = Vector::Zero(cfg.n_x);
    for (int j = 0; j <= cfg.q_fx; ++j)
      if (t - j >= 0) expected += data.loadings_x[j] * data.latent.f.row(t - j).transpose();
    CHECK((data.x.values.row(t).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Clock consistency: Y_t' is driven by F at high-frequency indices
  // r (t'+1) - 1 - j.
  const int t_low = cfg.t_high / cfg.r;
  for (int tp = 0; tp < t_low; ++tp) {
    Vector expected = Vector::Zero(cfg.n_y);
    int end_month = cfg.r * (tp + 1) - 1;
    for (int j = 0; j <= cfg.q_fy; ++j)
      if (end_month - j >= 0)
        expected += data.loadings_y[j] * data.latent.f.row(end_month - j).transpose();
    CHECK((data.y.values.row(tp).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("simulate_panels: regimes set the nonlinear feature width") {
  DgpConfig cfg = small_config();
  SimulatedData linear = simulate(cfg);
  CHECK_FALSE(linear.rbf_centers.has_value());
  CHECK(linear.loadings_x[0].cols() == cfg.q);

  cfg.regime = Regime::Rbf;
  cfg.rbf_k = 6;
  SimulatedData mild = simulate(cfg);
  CHECK(mild.rbf_centers->rows() == 6);
  CHECK(mild.loadings_x[0].cols() == 6);
  cfg.rbf_k = 12;
  SimulatedData wild = simulate(cfg);
  CHECK(wild.loadings_x[0].cols() == 12);
}

TEST_CASE("simulate_panels: determinism, stationarity caps and t_nu noise") {
  DgpConfig cfg = small_config();
  SimulatedData a = simulate(cfg);
  SimulatedData b = simulate(cfg);
  CHECK(a.x.values == b.x.values);
  CHECK(a.y.values == b.y.values);

  CHECK(companion_spectral_radius(a.latent.phi) <= cfg.rho_factor + 1e-10);
  if (!a.ar_x.empty()) CHECK(companion_spectral_radius(a.ar_x) <= cfg.rho_x + 1e-10);
  if (!a.ar_y.empty()) CHECK(companion_spectral_radius(a.ar_y) <= cfg.rho_y + 1e-10);

  DgpConfig other = cfg;
  other.seed = cfg.seed + 1;
  SimulatedData c = simulate(other);
  CHECK(a.x.values != c.x.values);
}

TEST_CASE("simulate_panels: realized SNR matches the target exactly when AR mixing is off") {
  DgpConfig cfg = small_config();
  cfg.l_x = 0;
  cfg.l_y = 0;
  cfg.snr = 2.0;
  SimulatedData data = simulate(cfg);
  for (int j = 0; j < cfg.n_x; ++j)
    CHECK(data.realized_snr_x(j) == doctest::Approx(2.0).epsilon(1e-8));
  for (int j = 0; j < cfg.n_y; ++j)
    CHECK(data.realized_snr_y(j) == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("standard_split: canonical and proportional splits") {
  SplitIndices canonical = standard_split(5000, 3);
  CHECK(canonical.high_train.size() == 3600);
  CHECK(canonical.high_val.size() == 400);
  CHECK(canonical.high_test.size() == 1000);

  SplitIndices small = standard_split(100, 1);
  CHECK(small.high_train.size() == 72);
  CHECK(small.high_val.size() == 8);
  CHECK(small.high_test.size() == 20);

  // No overlap, full coverage, and the low clock respects period ends.
  SplitIndices s = standard_split(600, 3);
  CHECK(s.high_train.end == s.high_val.begin);
  CHECK(s.high_val.end == s.high_test.begin);
  CHECK(s.high_test.end == 600);
  CHECK(s.low_train.end == s.low_val.begin);
  CHECK(s.low_val.end == s.low_test.begin);
  CHECK(s.low_test.end == 200);
  int first_val_quarter = s.low_val.begin;
  CHECK(3 * (first_val_quarter + 1) - 1 >= s.high_train.end);
  CHECK(3 * first_val_quarter - 1 < s.high_train.end);
}

TEST_CASE("simulated data serialization carries config and derived quantities") {
  DgpConfig cfg = small_config();
  cfg.regime = Regime::Rbf;
  cfg.rbf_k = 4;
  SimulatedData data = simulate(cfg);
  auto dir = std::filesystem::temp_directory_path() / "attnfactor_dgp_dir";
  save_simulated_data(dir, data);
  CHECK(std::filesystem::exists(dir / "x.csv"));
  CHECK(std::filesystem::exists(dir / "y.meta.json"));
  auto j = read_json_file(dir / "dgp.json");
  CHECK(j.at("config").at("t_high").get<int>() == cfg.t_high);
  CHECK(j.at("rbf_gamma").get<double>() == doctest::Approx(*data.rbf_gamma));
  CHECK(j.at("companion_radius_factor").get<double>() <= cfg.rho_factor + 1e-10);
  std::filesystem::remove_all(dir);
}
