#ifndef ATTNFACTOR_DGP_HPP
#define ATTNFACTOR_DGP_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "attnfactor/common.hpp"
#include "attnfactor/panels.hpp"
#include "attnfactor/rng.hpp"

namespace attnfactor::dgp {

enum class Regime { Linear, Rbf };

struct DgpConfig {
  int q = 2;       // latent factor dimension
  int r = 3;       // high-to-low frequency ratio
  int n_x = 20;    // high-frequency panel width
  int n_y = 5;     // low-frequency panel width
  int l_x = 1;     // observable VAR order, X block
  int l_y = 1;     // observable VAR order, Y block
  int q_fx = 2;    // factor lag depth entering X (lags 0..q_fx)
  int q_fy = 2;    // factor lag depth entering Y
  Regime regime = Regime::Linear;
  int rbf_k = 6;   // number of RBF basis functions (nonlinear regimes)
  double nu = 5.0; // Student-t dof for high-frequency noise
  double rho_factor = 0.95;
  double rho_x = 0.7;
  double rho_y = 0.7;
  double snr = 2.0;  // per-series signal variance / noise variance target
  int t_high = 5000;
  int burn_in = 200;
  std::uint64_t seed = 1;
  double almon_a1 = 0.0;
  double almon_a2 = -0.5;

  void validate() const;
};

struct LatentPath {
  Matrix f;  // t_high x q, burn-in discarded
  Matrix innovations_cov;
  std::vector<Matrix> phi;  // rescaled VAR(2) coefficient blocks
};

struct SimulatedData {
  DgpConfig config;
  panels::Panel x;  // high frequency, month clock starting at 0
  panels::Panel y;  // low frequency, quarter clock starting at 0
  LatentPath latent;
  std::optional<Matrix> rbf_centers;  // K x q
  std::optional<double> rbf_gamma;
  std::optional<Vector> rbf_sigmas;
  std::vector<Matrix> loadings_x;  // lag 0..q_fx blocks, n_x x g-width
  std::vector<Matrix> loadings_y;
  std::vector<Matrix> ar_x;  // rescaled A_l blocks
  std::vector<Matrix> ar_y;  // rescaled C_l blocks
  Vector noise_scale_x;      // per-series innovation standard deviations
  Vector noise_scale_y;
  Vector realized_snr_x;
  Vector realized_snr_y;
};

// Spectral radius of the companion matrix of a VAR given its lag blocks.
double companion_spectral_radius(const std::vector<Matrix>& coeff_blocks);

// Multiplies every block by a single scalar s <= 1 (bisected to 1e-6) so the
// companion spectral radius does not exceed `cap`. Blocks already inside the
// cap are returned unchanged.
std::vector<Matrix> rescale_to_spectral_radius(const std::vector<Matrix>& coeff_blocks,
                                               double cap);

LatentPath simulate_factors(const DgpConfig& config, Rng& rng);

// gamma = 1 / (2 median^2) over the K(K-1)/2 pairwise center distances.
double median_heuristic_gamma(const Matrix& centers);

// Row t maps to (exp(-gamma ||F_t - c_k||^2) / sigma_k)_k with sigma_k the
// time-wise sample stddev of the raw column, so each output column has unit
// sample variance. `sigmas_out` receives the scalers when non-null.
Matrix rbf_transform(const Matrix& f, const Matrix& centers, double gamma,
                     Vector* sigmas_out = nullptr);

// Lag blocks w_j * base with base a seeded random matrix and Almon weights
// w_j proportional to exp(a1 j + a2 j^2), normalized to sum to one. The a0
// parameter of the classic parameterization cancels in the normalization.
// a2 >= 0 is accepted (weights then fail to decay) and only logged.
std::vector<Matrix> almon_loadings(int rows, int cols, int n_lags, double a1, double a2,
                                   Rng& rng, Vector* weights_out = nullptr);

SimulatedData simulate_panels(const DgpConfig& config, const LatentPath& latent, Rng& rng);

// Convenience: factors + panels from the config's seed.
SimulatedData simulate(const DgpConfig& config);

struct IndexRange {
  int begin = 0;
  int end = 0;  // exclusive
  int size() const { return end - begin; }
};

// Canonical temporally ordered split: floor(0.8 T) observations for
// training of which 10% become validation, remainder for evaluation.
// Low-frequency rows follow the split containing their period-end
// high-frequency index.
struct SplitIndices {
  IndexRange high_train, high_val, high_test;
  IndexRange low_train, low_val, low_test;
};
SplitIndices standard_split(int t_high, int r);
SplitIndices standard_split(const SimulatedData& data);

// Panels CSV pair per block plus dgp.json capturing config and derived
// quantities (gamma, centers, noise scales, realized SNR).
void save_simulated_data(const std::filesystem::path& dir, const SimulatedData& data);

}  // namespace attnfactor::dgp

#endif
