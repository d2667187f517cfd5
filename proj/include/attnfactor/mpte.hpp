#ifndef ATTNFACTOR_MPTE_HPP
#define ATTNFACTOR_MPTE_HPP

#include <cstdint>
#include <filesystem>

#include "attnfactor/common.hpp"

namespace attnfactor::mpte {

// Rank-k attention-weighted PCA solution for a T x N panel.
// Identifying normalization: loadings^T loadings / N = I_k.
struct FactorFit {
  int k = 0;
  Matrix loadings;        // N x k, sqrt(N) * top-k eigenvectors of Z~^T Z~ / N
  Matrix factors;         // T x k, Z~ loadings (loadings^T loadings)^-1
  Vector eigenvalues;     // k, nonincreasing; eigenvalues of Z~^T Z~ / N
  Vector singular_values; // k, of Z~
  Vector explained_variance_ratio;
  bool subspace_only = false;  // set when the k-th eigengap is numerically zero
};

struct FitOptions {
  bool demean_columns = false;  // second moment is uncentered by default
};

FactorFit fit_attention_pca(const Matrix& z_tilde, int k, const FitOptions& opts = {});

// Same estimator through the SVD route: loadings = sqrt(N) Q_hat,
// factors = P_hat S / sqrt(N). Identical common component.
FactorFit svd_fit(const Matrix& z_tilde, int k, const FitOptions& opts = {});

Matrix common_component(const FactorFit& fit);

struct RotationAlignment {
  Matrix h;         // k x k; orthogonal in the default mode
  double residual;  // attained || estimated - truth H^T ||_F
  bool orthogonal = true;
};

// Orthogonal Procrustes alignment of `estimated` onto `truth`, realizing the
// rotation whose existence the consistency theory asserts. With
// allow_invertible the alignment is unrestricted least squares instead
// (sensitivity checks only).
RotationAlignment align_rotation(const Matrix& estimated, const Matrix& truth,
                                 bool allow_invertible = false);

// (1/N) sum_i || estimated_i - H truth_i ||^2
double loading_mse(const Matrix& estimated, const Matrix& truth, const RotationAlignment& h);
// (1/T) sum_t || estimated_t - H truth_t ||^2; for orthogonal H the
// inverse-transpose factor convention coincides with H itself.
double factor_mse(const Matrix& estimated, const Matrix& truth, const RotationAlignment& h);

struct LinearAutoencoderFit {
  Matrix w0;  // k x N
  Matrix w1;  // N x k
  Vector b0;  // k
  Vector b1;  // N
  double final_loss = 0.0;
  int iterations = 0;
};

struct GradientOptions {
  double lr = 0.0;       // <= 0 selects 0.5 / lambda_max(Z~^T Z~)
  int max_iter = 20000;
  double tol = 1e-10;    // relative loss change stopping rule
  std::uint64_t seed = 1;
  bool init_closed_form = false;
};

enum class AutoencoderMode { ClosedForm, Gradient };

double autoencoder_loss(const Matrix& z_tilde, const LinearAutoencoderFit& fit);

LinearAutoencoderFit fit_linear_autoencoder(const Matrix& z_tilde, int k, AutoencoderMode mode,
                                            const GradientOptions& opts = {});

// Largest principal angle (radians) between span(W1) and the top-k right
// singular subspace of the PCA fit. Zero means equivalence up to a
// nonsingular k x k transform.
double autoencoder_pca_subspace_distance(const LinearAutoencoderFit& ae, const FactorFit& pca);

// Largest principal angle between the column spans of two full-column-rank
// matrices with equal column counts.
double largest_principal_angle(const Matrix& a, const Matrix& b);

// Directory serialization: loadings.csv, factors.csv, eigenvalues.csv,
// fit.json.
void save_factor_fit(const std::filesystem::path& dir, const FactorFit& fit);
FactorFit load_factor_fit(const std::filesystem::path& dir);

}  // namespace attnfactor::mpte

#endif
