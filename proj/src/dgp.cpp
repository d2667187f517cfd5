#include "attnfactor/dgp.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "attnfactor/io.hpp"

namespace attnfactor::dgp {

void DgpConfig::validate() const {
  require(q >= 1 && n_x >= 1 && n_y >= 1 && t_high >= 1, "dgp: dimensions must be positive");
  require(r >= 1, "dgp: frequency ratio must be >= 1");
  require(l_x >= 0 && l_y >= 0 && q_fx >= 0 && q_fy >= 0, "dgp: lag orders must be >= 0");
  require(rho_factor > 0.0 && rho_factor < 1.0, "dgp: rho_factor must lie in (0,1)");
  require(rho_x > 0.0 && rho_x < 1.0 && rho_y > 0.0 && rho_y < 1.0,
          "dgp: block spectral caps must lie in (0,1)");
  require(nu > 2.0, "dgp: Student-t dof must exceed 2");
  require(snr > 0.0, "dgp: SNR target must be positive");
  require(burn_in >= 0, "dgp: burn-in must be >= 0");
  if (regime == Regime::Rbf) require(rbf_k >= 1, "dgp: rbf regime needs K >= 1");
}

double companion_spectral_radius(const std::vector<Matrix>& coeff_blocks) {
  if (coeff_blocks.empty()) return 0.0;
  const Eigen::Index q = coeff_blocks[0].rows();
  const int p = static_cast<int>(coeff_blocks.size());
  for (const auto& b : coeff_blocks)
    require(b.rows() == q && b.cols() == q, "companion: blocks must be square, same size");
  Matrix companion = Matrix::Zero(q * p, q * p);
  for (int l = 0; l < p; ++l) companion.block(0, l * q, q, q) = coeff_blocks[l];
  if (p > 1)
    companion.block(q, 0, q * (p - 1), q * (p - 1)) = Matrix::Identity(q * (p - 1), q * (p - 1));
  Eigen::EigenSolver<Matrix> eig(companion, /*computeEigenvectors=*/false);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

std::vector<Matrix> rescale_to_spectral_radius(const std::vector<Matrix>& coeff_blocks,
                                               double cap) {
  require(cap > 0.0 && cap < 1.0, "rescale_to_spectral_radius: cap must lie in (0,1)");
  if (coeff_blocks.empty()) return coeff_blocks;
  if (companion_spectral_radius(coeff_blocks) <= cap) return coeff_blocks;

  auto scaled = [&](double s) {
    std::vector<Matrix> out = coeff_blocks;
    for (auto& b : out) b *= s;
    return out;
  };
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-6) {
    double mid = 0.5 * (lo + hi);
    if (companion_spectral_radius(scaled(mid)) <= cap) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return scaled(lo);
}

LatentPath simulate_factors(const DgpConfig& config, Rng& rng) {
  config.validate();
  const int q = config.q;
  std::vector<Matrix> phi(2, Matrix::Zero(q, q));
  for (auto& block : phi)
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) block(i, j) = rng.uniform(-0.5, 0.5);
  phi = rescale_to_spectral_radius(phi, config.rho_factor);

  const double innov_sd = std::sqrt(0.5);
  const int total = config.burn_in + config.t_high;
  Matrix path = Matrix::Zero(total, q);
  for (int t = 0; t < total; ++t) {
    Vector f = Vector::Zero(q);
    if (t >= 1) f += phi[0] * path.row(t - 1).transpose();
    if (t >= 2) f += phi[1] * path.row(t - 2).transpose();
    for (int j = 0; j < q; ++j) f(j) += rng.normal(0.0, innov_sd);
    path.row(t) = f.transpose();
  }

  LatentPath latent;
  latent.f = path.bottomRows(config.t_high);
  latent.innovations_cov = 0.5 * Matrix::Identity(q, q);
  latent.phi = phi;
  return latent;
}

double median_heuristic_gamma(const Matrix& centers) {
  const Eigen::Index k = centers.rows();
  require(k >= 2, "median_heuristic_gamma: need at least two centers");
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(k) * (k - 1) / 2);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j)
      dists.push_back((centers.row(i) - centers.row(j)).norm());
  std::sort(dists.begin(), dists.end());
  double median;
  std::size_t n = dists.size();
  if (n % 2 == 1) {
    median = dists[n / 2];
  } else {
    median = 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
  }
  if (median <= 0.0)
    throw NumericError("median_heuristic_gamma: coincident centers give zero median distance");
  return 1.0 / (2.0 * median * median);
}

Matrix rbf_transform(const Matrix& f, const Matrix& centers, double gamma, Vector* sigmas_out) {
  require(gamma > 0.0, "rbf_transform: gamma must be positive");
  require(f.cols() == centers.cols(), "rbf_transform: factor and center dimensions differ");
  const Eigen::Index t = f.rows();
  const Eigen::Index k = centers.rows();
  Matrix raw(t, k);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      raw(i, j) = std::exp(-gamma * (f.row(i) - centers.row(j)).squaredNorm());

  Vector sigmas(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (t < 2) {
      // A single row cannot be standardized; keep the raw value.
      sigmas(j) = 1.0;
      continue;
    }
    double mu = raw.col(j).mean();
    double ss = (raw.col(j).array() - mu).square().sum() / static_cast<double>(t - 1);
    double sd = std::sqrt(ss);
    if (sd <= 1e-14)
      throw NumericError("rbf_transform: RBF column " + std::to_string(j) +
                         " is constant over time");
    sigmas(j) = sd;
    raw.col(j) /= sd;
  }
  if (sigmas_out != nullptr) *sigmas_out = sigmas;
  return raw;
}

std::vector<Matrix> almon_loadings(int rows, int cols, int n_lags, double a1, double a2,
                                   Rng& rng, Vector* weights_out) {
  require(rows >= 1 && cols >= 1, "almon_loadings: block shape must be positive");
  require(n_lags >= 0, "almon_loadings: n_lags must be >= 0");
  if (a2 >= 0.0) log_info("almon_loadings: a2 >= 0 gives non-decaying lag weights");
  Vector weights(n_lags + 1);
  for (int j = 0; j <= n_lags; ++j) weights(j) = std::exp(a1 * j + a2 * j * j);
  weights /= weights.sum();
  if (weights_out != nullptr) *weights_out = weights;

  Matrix base(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) base(i, j) = rng.normal();
  std::vector<Matrix> blocks;
  blocks.reserve(n_lags + 1);
  for (int j = 0; j <= n_lags; ++j) blocks.push_back(weights(j) * base);
  return blocks;
}

namespace {

// Runs the VAR recursion v_t = sum_l A_l v_{t-l} + input_t with zero
// pre-sample values.
Matrix var_filter(const std::vector<Matrix>& ar, const Matrix& input) {
  const Eigen::Index t_len = input.rows();
  const Eigen::Index n = input.cols();
  Matrix out = Matrix::Zero(t_len, n);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    Vector v = input.row(t).transpose();
    for (std::size_t l = 0; l < ar.size(); ++l)
      if (t >= static_cast<Eigen::Index>(l + 1))
        v += ar[l] * out.row(t - static_cast<Eigen::Index>(l + 1)).transpose();
    out.row(t) = v.transpose();
  }
  return out;
}

Vector column_variances(const Matrix& m) {
  Vector v(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    double mu = m.col(j).mean();
    v(j) = (m.col(j).array() - mu).square().sum() / std::max<double>(1.0, m.rows() - 1);
  }
  return v;
}

panels::Panel make_panel(const Matrix& values, panels::Frequency freq, const std::string& prefix,
                         int id_offset) {
  panels::Panel p;
  p.values = values;
  p.missing_mask = BoolMatrix::Constant(values.rows(), values.cols(), false);
  p.timestamps.resize(values.rows());
  for (Eigen::Index t = 0; t < values.rows(); ++t) p.timestamps[t] = t;
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    panels::SeriesMeta m;
    m.id = id_offset + static_cast<int>(j);
    m.name = prefix + std::to_string(j + 1);
    m.frequency = freq;
    m.category = "simulated";
    p.meta.push_back(m);
  }
  return p;
}

}  // namespace

SimulatedData simulate_panels(const DgpConfig& config, const LatentPath& latent, Rng& rng) {
  config.validate();
  const int t_high = config.t_high;
  require(latent.f.rows() == t_high, "simulate_panels: latent path length mismatch");
  const int t_low = t_high / config.r;
  require(t_low >= 1, "simulate_panels: not enough high-frequency periods for one low period");
  require(t_high > std::max(config.q_fx, config.r * (config.q_fy + 1)),
          "simulate_panels: latent path shorter than factor lag depth");

  SimulatedData data;
  data.config = config;
  data.latent = latent;

  // Nonlinear feature path g(F_t); width q in the linear regime, K otherwise.
  Matrix h;
  if (config.regime == Regime::Linear) {
    h = latent.f;
  } else {
    Matrix centers(config.rbf_k, config.q);
    for (int i = 0; i < config.rbf_k; ++i)
      for (int j = 0; j < config.q; ++j) centers(i, j) = rng.normal();
    double gamma = config.rbf_k >= 2 ? median_heuristic_gamma(centers) : 1.0;
    Vector sigmas;
    h = rbf_transform(latent.f, centers, gamma, &sigmas);
    data.rbf_centers = centers;
    data.rbf_gamma = gamma;
    data.rbf_sigmas = sigmas;
  }
  const int g_width = static_cast<int>(h.cols());

  // AR blocks, rescaled to the block-specific caps.
  std::vector<Matrix> ar_x(config.l_x, Matrix::Zero(config.n_x, config.n_x));
  for (auto& block : ar_x)
    for (int i = 0; i < config.n_x; ++i)
      for (int j = 0; j < config.n_x; ++j) block(i, j) = rng.uniform(-0.5, 0.5);
  ar_x = rescale_to_spectral_radius(ar_x, config.rho_x);

  std::vector<Matrix> ar_y(config.l_y, Matrix::Zero(config.n_y, config.n_y));
  for (auto& block : ar_y)
    for (int i = 0; i < config.n_y; ++i)
      for (int j = 0; j < config.n_y; ++j) block(i, j) = rng.uniform(-0.5, 0.5);
  ar_y = rescale_to_spectral_radius(ar_y, config.rho_y);

  data.ar_x = ar_x;
  data.ar_y = ar_y;

  data.loadings_x = almon_loadings(config.n_x, g_width, config.q_fx, config.almon_a1,
                                   config.almon_a2, rng);
  data.loadings_y = almon_loadings(config.n_y, g_width, config.q_fy, config.almon_a1,
                                   config.almon_a2, rng);

  // Factor-driven inputs. Pre-sample feature values are treated as zero.
  Matrix input_x = Matrix::Zero(t_high, config.n_x);
  for (int t = 0; t < t_high; ++t)
    for (int j = 0; j <= config.q_fx; ++j)
      if (t - j >= 0) input_x.row(t) += (data.loadings_x[j] * h.row(t - j).transpose()).transpose();

  Matrix input_y = Matrix::Zero(t_low, config.n_y);
  for (int tp = 0; tp < t_low; ++tp) {
    int end_month = config.r * (tp + 1) - 1;  // paper clock: t = r t' (1-based)
    for (int j = 0; j <= config.q_fy; ++j)
      if (end_month - j >= 0)
        input_y.row(tp) += (data.loadings_y[j] * h.row(end_month - j).transpose()).transpose();
  }

  Matrix signal_x = var_filter(ar_x, input_x);
  Matrix signal_y = var_filter(ar_y, input_y);

  // Unit-variance innovation noise paths through the same AR filters; their
  // realized variances calibrate per-series innovation scales to the SNR
  // target. Calibration is approximate when the AR blocks mix series.
  Matrix eta_unit(t_high, config.n_x);
  for (int t = 0; t < t_high; ++t)
    for (int j = 0; j < config.n_x; ++j) eta_unit(t, j) = rng.student_t_unit(config.nu);
  Matrix noise_path_x = var_filter(ar_x, eta_unit);
  Vector m_x = column_variances(noise_path_x);
  Vector v_x = column_variances(signal_x);

  Matrix xi_unit(t_low, config.n_y);
  for (int t = 0; t < t_low; ++t)
    for (int j = 0; j < config.n_y; ++j) xi_unit(t, j) = rng.normal();
  Matrix noise_path_y = var_filter(ar_y, xi_unit);
  Vector m_y = column_variances(noise_path_y);
  Vector v_y = column_variances(signal_y);

  data.noise_scale_x = Vector(config.n_x);
  for (int j = 0; j < config.n_x; ++j)
    data.noise_scale_x(j) = std::sqrt(std::max(v_x(j), 0.0) / (config.snr * std::max(m_x(j), 1e-12)));
  data.noise_scale_y = Vector(config.n_y);
  for (int j = 0; j < config.n_y; ++j)
    data.noise_scale_y(j) = std::sqrt(std::max(v_y(j), 0.0) / (config.snr * std::max(m_y(j), 1e-12)));

  Matrix eta = eta_unit * data.noise_scale_x.asDiagonal();
  Matrix xi = xi_unit * data.noise_scale_y.asDiagonal();
  Matrix x_values = var_filter(ar_x, input_x + eta);
  Matrix y_values = var_filter(ar_y, input_y + xi);

  Vector noise_var_x = column_variances(x_values - signal_x);
  Vector noise_var_y = column_variances(y_values - signal_y);
  data.realized_snr_x = Vector(config.n_x);
  for (int j = 0; j < config.n_x; ++j)
    data.realized_snr_x(j) = v_x(j) / std::max(noise_var_x(j), 1e-12);
  data.realized_snr_y = Vector(config.n_y);
  for (int j = 0; j < config.n_y; ++j)
    data.realized_snr_y(j) = v_y(j) / std::max(noise_var_y(j), 1e-12);

  data.x = make_panel(x_values, panels::Frequency::High, "X", 0);
  data.y = make_panel(y_values, panels::Frequency::Low, "Y", config.n_x);
  return data;
}

SimulatedData simulate(const DgpConfig& config) {
  Rng rng(config.seed);
  LatentPath latent = simulate_factors(config, rng);
  return simulate_panels(config, latent, rng);
}

SplitIndices standard_split(int t_high, int r) {
  require(t_high >= 10, "standard_split: sample too short");
  require(r >= 1, "standard_split: invalid ratio");
  const int total_train = static_cast<int>(std::floor(0.8 * t_high));
  const int val = static_cast<int>(std::floor(0.1 * total_train));
  const int train = total_train - val;
  SplitIndices s;
  s.high_train = {0, train};
  s.high_val = {train, total_train};
  s.high_test = {total_train, t_high};
  const int t_low = t_high / r;
  auto low_split_of = [&](int tp) {
    int end_month = r * (tp + 1) - 1;
    if (end_month < train) return 0;
    if (end_month < total_train) return 1;
    return 2;
  };
  int first_val = t_low, first_test = t_low;
  for (int tp = 0; tp < t_low; ++tp) {
    int sp = low_split_of(tp);
    if (sp >= 1 && tp < first_val) first_val = tp;
    if (sp == 2 && tp < first_test) first_test = tp;
  }
  s.low_train = {0, first_val};
  s.low_val = {first_val, first_test};
  s.low_test = {first_test, t_low};
  return s;
}

SplitIndices standard_split(const SimulatedData& data) {
  return standard_split(data.config.t_high, data.config.r);
}

void save_simulated_data(const std::filesystem::path& dir, const SimulatedData& data) {
  std::filesystem::create_directories(dir);
  panels::save_panel(dir / "x", data.x);
  panels::save_panel(dir / "y", data.y);

  nlohmann::json j;
  const DgpConfig& c = data.config;
  j["config"] = {{"q", c.q}, {"r", c.r}, {"n_x", c.n_x}, {"n_y", c.n_y},
                 {"l_x", c.l_x}, {"l_y", c.l_y}, {"q_fx", c.q_fx}, {"q_fy", c.q_fy},
                 {"regime", c.regime == Regime::Linear ? "linear" : "rbf"},
                 {"rbf_k", c.rbf_k}, {"nu", c.nu},
                 {"rho_factor", c.rho_factor}, {"rho_x", c.rho_x}, {"rho_y", c.rho_y},
                 {"snr", c.snr}, {"t_high", c.t_high}, {"burn_in", c.burn_in},
                 {"seed", c.seed}, {"almon_a1", c.almon_a1}, {"almon_a2", c.almon_a2}};
  auto vec = [](const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  if (data.rbf_gamma) j["rbf_gamma"] = *data.rbf_gamma;
  if (data.rbf_sigmas) j["rbf_sigmas"] = vec(*data.rbf_sigmas);
  if (data.rbf_centers) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < data.rbf_centers->rows(); ++i)
      rows.push_back(std::vector<double>(data.rbf_centers->row(i).begin(),
                                         data.rbf_centers->row(i).end()));
    j["rbf_centers"] = rows;
  }
  j["noise_scale_x"] = vec(data.noise_scale_x);
  j["noise_scale_y"] = vec(data.noise_scale_y);
  j["realized_snr_x"] = vec(data.realized_snr_x);
  j["realized_snr_y"] = vec(data.realized_snr_y);
  j["companion_radius_factor"] = companion_spectral_radius(data.latent.phi);
  j["companion_radius_x"] = companion_spectral_radius(data.ar_x);
  j["companion_radius_y"] = companion_spectral_radius(data.ar_y);
  j["seed_rule"] = "child = splitmix64(master ^ splitmix64(index + 1))";
  write_json_file(dir / "dgp.json", j);
}

}  // namespace attnfactor::dgp
