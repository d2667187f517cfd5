#include <doctest.h>

#include <cmath>

#include "attnfactor/mpte.hpp"
#include "attnfactor/rng.hpp"
#include "support/jacobi_oracle.hpp"

using namespace attnfactor;
using namespace attnfactor::mpte;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

Matrix random_orthogonal(Eigen::Index n, Rng& rng) {
  Matrix g = random_matrix(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(n, n);
}

// Independent route to the common component: full Jacobi eigendecomposition
// of Z^T Z / N in plain nested vectors, then the same loadings/factors
// definitions evaluated by hand.
Matrix oracle_common_component(const Matrix& z, int k) {
  const std::size_t n = z.cols();
  std::vector<std::vector<double>> gram(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (Eigen::Index t = 0; t < z.rows(); ++t) s += z(t, i) * z(t, j);
      gram[i][j] = s / static_cast<double>(n);
    }
  auto eig = test_oracle::jacobi_eigen_symmetric(gram);
  Matrix loadings(n, k);
  for (int j = 0; j < k; ++j)
    for (std::size_t i = 0; i < n; ++i)
      loadings(i, j) = eig.vectors[j][i] * std::sqrt(static_cast<double>(n));
  Matrix factors = z * loadings * (loadings.transpose() * loadings).inverse();
  return factors * loadings.transpose();
}

}  // namespace

TEST_CASE("fit_attention_pca: exact recovery of a noiseless rank-1 panel") {
  Rng rng(1);
  const int t = 12, n = 6;
  Vector f = random_matrix(t, 1, rng).col(0);
  Vector lambda = random_matrix(n, 1, rng).col(0);
  lambda *= std::sqrt(static_cast<double>(n)) / lambda.norm();  // ||lambda||^2 = N
  Matrix z = f * lambda.transpose();
  FactorFit fit = fit_attention_pca(z, 1);
  CHECK((common_component(fit) - z).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::abs(fit.loadings.col(0).squaredNorm() / n - 1.0) < 1e-10);
}

TEST_CASE("fit_attention_pca and svd_fit match the brute-force Jacobi oracle") {
  Rng rng(2);
  Matrix z = random_matrix(4, 3, rng);
  Matrix oracle = oracle_common_component(z, 2);
  CHECK((common_component(fit_attention_pca(z, 2)) - oracle).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((common_component(svd_fit(z, 2)) - oracle).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("method equivalence and invariants over random instances") {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    int t = 10 + static_cast<int>(rng.uniform_int(0, 30));
    int n = 4 + static_cast<int>(rng.uniform_int(0, 12));
    int k = 1 + static_cast<int>(rng.uniform_int(0, 2));
    Matrix z = random_matrix(t, n, rng);
    FactorFit a = fit_attention_pca(z, k);
    FactorFit b = svd_fit(z, k);
    CHECK((common_component(a) - common_component(b)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((a.eigenvalues - b.eigenvalues).cwiseAbs().maxCoeff() < 1e-10);
    // Identifying normalization.
    Matrix gram = a.loadings.transpose() * a.loadings / static_cast<double>(n);
    CHECK((gram - Matrix::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-10);
    // D = S^2 / N.
    for (int j = 0; j < k; ++j)
      CHECK(a.eigenvalues(j) ==
            doctest::Approx(a.singular_values(j) * a.singular_values(j) / n).epsilon(1e-10));
    // Eigenvalues nonincreasing.
    for (int j = 1; j < k; ++j) CHECK(a.eigenvalues(j) <= a.eigenvalues(j - 1) + 1e-12);
    // Factor normal equations.
    Matrix lhs = a.loadings.transpose() * a.loadings * a.factors.transpose();
    Matrix rhs = a.loadings.transpose() * z.transpose();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("svd_fit: diagonal matrix and full-rank reconstruction") {
  Matrix z = Matrix::Zero(3, 3);
  z(0, 0) = 3;
  z(1, 1) = 2;
  z(2, 2) = 1;
  FactorFit fit = svd_fit(z, 2);
  CHECK(fit.singular_values(0) == doctest::Approx(3.0));
  CHECK(fit.singular_values(1) == doctest::Approx(2.0));

  Rng rng(4);
  Matrix z2 = random_matrix(5, 4, rng);
  FactorFit full = svd_fit(z2, 4);
  CHECK((common_component(full) - z2).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("fit error paths: k too large, rank deficiency, k = 0") {
  Rng rng(5);
  Matrix z = random_matrix(6, 4, rng);
  CHECK_THROWS_AS(fit_attention_pca(z, 5), ArgumentError);
  Matrix rank1 = z.col(0) * z.col(0).transpose();
  CHECK_THROWS_AS(fit_attention_pca(rank1, 3), NumericError);
  FactorFit zero = fit_attention_pca(z, 0);
  CHECK(common_component(zero).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("degenerate eigengap sets the subspace-only flag") {
  // Two identical nonzero eigenvalues at the k boundary.
  Matrix z = Matrix::Zero(4, 3);
  z(0, 0) = 1;
  z(1, 1) = 1;
  z(2, 2) = 2;
  FactorFit fit = fit_attention_pca(z, 2);
  CHECK(fit.subspace_only);
  FactorFit clean = fit_attention_pca(z, 1);
  CHECK_FALSE(clean.subspace_only);
}

TEST_CASE("align_rotation: identity, sign flip and constructed rotation") {
  Rng rng(6);
  Matrix truth = random_matrix(10, 3, rng);
  RotationAlignment self = align_rotation(truth, truth);
  CHECK((self.h - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(self.residual < 1e-10);

  RotationAlignment flip = align_rotation(-truth, truth);
  CHECK((flip.h + Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(flip.residual < 1e-10);

  Matrix q = random_orthogonal(3, rng);
  RotationAlignment rec = align_rotation(truth * q.transpose(), truth);
  CHECK((rec.h - q).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((rec.h.transpose() * rec.h - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);

  CHECK_THROWS_AS(align_rotation(Matrix::Zero(5, 2), Matrix::Zero(5, 2)), NumericError);
}

TEST_CASE("loading_mse: hand case with one zero row") {
  Matrix estimated(2, 1), truth(2, 1);
  estimated << 1.0, 0.0;
  truth << 0.5, 0.0;
  RotationAlignment id;
  id.h = Matrix::Identity(1, 1);
  id.residual = 0.0;
  CHECK(loading_mse(estimated, truth, id) == doctest::Approx(0.125));  // 0.25 / 2
  CHECK(loading_mse(truth, truth, id) == 0.0);
}

TEST_CASE("factor_mse mirrors loading_mse conventions") {
  Rng rng(7);
  Matrix truth = random_matrix(8, 2, rng);
  RotationAlignment id;
  id.h = Matrix::Identity(2, 2);
  CHECK(factor_mse(truth, truth, id) == 0.0);
  RotationAlignment flip = align_rotation(-truth, truth);
  CHECK(factor_mse(-truth, truth, flip) < 1e-20);
  Matrix est = truth;
  est.row(0) += Vector::Constant(2, 0.5).transpose();
  CHECK(factor_mse(est, truth, id) == doctest::Approx(0.5 / 8.0));
}

TEST_CASE("rotation invariance of the aligned loading MSE") {
  Rng rng(8);
  Matrix truth = random_matrix(12, 3, rng);
  Matrix estimated = truth + 0.1 * random_matrix(12, 3, rng);
  double base = loading_mse(estimated, truth, align_rotation(estimated, truth));
  for (int rep = 0; rep < 5; ++rep) {
    Matrix q = random_orthogonal(3, rng);
    Matrix rotated = estimated * q.transpose();
    double rotated_mse = loading_mse(rotated, truth, align_rotation(rotated, truth));
    CHECK(std::abs(rotated_mse - base) < 1e-10);
  }
}

TEST_CASE("invertible alignment is available behind a flag") {
  Rng rng(9);
  Matrix truth = random_matrix(10, 2, rng);
  Matrix scale(2, 2);
  scale << 2.0, 0.3, 0.0, 0.5;  // invertible, not orthogonal
  Matrix estimated = truth * scale.transpose();
  RotationAlignment general = align_rotation(estimated, truth, /*allow_invertible=*/true);
  CHECK_FALSE(general.orthogonal);
  CHECK(general.residual < 1e-10);
  RotationAlignment orth = align_rotation(estimated, truth);
  CHECK(orth.residual > 1e-3);  // orthogonal alignment cannot absorb the scale
}

TEST_CASE("linear autoencoder: closed form reconstructs rank-k panels exactly") {
  Rng rng(10);
  Matrix f = random_matrix(20, 3, rng);
  Matrix lam = random_matrix(7, 3, rng);
  Matrix z = f * lam.transpose();
  LinearAutoencoderFit fit = fit_linear_autoencoder(z, 3, AutoencoderMode::ClosedForm);
  CHECK(fit.final_loss < 1e-10);

  // Centering formula: with column-centered data and b0 = 0, b1 = 0.
  Matrix centered = z;
  centered.rowwise() -= z.colwise().mean();
  LinearAutoencoderFit cfit = fit_linear_autoencoder(centered, 3, AutoencoderMode::ClosedForm);
  CHECK(cfit.b0.cwiseAbs().maxCoeff() == 0.0);
  CHECK(cfit.b1.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("linear autoencoder: gradient mode approaches the closed-form loss") {
  Rng rng(11);
  Matrix z = random_matrix(50, 10, rng);
  LinearAutoencoderFit closed = fit_linear_autoencoder(z, 3, AutoencoderMode::ClosedForm);
  GradientOptions opts;
  opts.seed = 77;
  opts.max_iter = 30000;
  opts.tol = 1e-13;
  LinearAutoencoderFit grad = fit_linear_autoencoder(z, 3, AutoencoderMode::Gradient, opts);
  CHECK(grad.final_loss <= closed.final_loss * (1.0 + 1e-4));
  CHECK(grad.final_loss >= closed.final_loss * (1.0 - 1e-6));
}

TEST_CASE("Prop. 3 invariance: (QR, R^-1 Q^T) attains the closed-form loss for any nonsingular R") {
  Rng rng(12);
  Matrix z = random_matrix(30, 8, rng);
  LinearAutoencoderFit base = fit_linear_autoencoder(z, 3, AutoencoderMode::ClosedForm);
  for (int rep = 0; rep < 5; ++rep) {
    Matrix r = random_matrix(3, 3, rng) + 3.0 * Matrix::Identity(3, 3);
    LinearAutoencoderFit rotated = base;
    rotated.w1 = base.w1 * r;
    rotated.w0 = r.inverse() * base.w0;
    rotated.b1 = base.b1;  // b0 = 0 is preserved by the transform
    double loss = autoencoder_loss(z, rotated);
    CHECK(loss == doctest::Approx(base.final_loss).epsilon(1e-10));
    // Subspace distance stays zero under any nonsingular latent transform.
    FactorFit pca = fit_attention_pca(z, 3);
    CHECK(autoencoder_pca_subspace_distance(rotated, pca) < 1e-10);
  }
}

TEST_CASE("autoencoder/PCA subspace distance: closed form is exactly aligned") {
  Rng rng(13);
  Matrix z = random_matrix(40, 9, rng);
  LinearAutoencoderFit ae = fit_linear_autoencoder(z, 3, AutoencoderMode::ClosedForm);
  FactorFit pca = fit_attention_pca(z, 3);
  CHECK(autoencoder_pca_subspace_distance(ae, pca) < 1e-12);

  LinearAutoencoderFit broken = ae;
  broken.w1.col(1) = broken.w1.col(0);
  CHECK_THROWS_AS(autoencoder_pca_subspace_distance(broken, pca), NumericError);
}

TEST_CASE("gradient divergence raises a training failure") {
  Rng rng(14);
  Matrix z = random_matrix(20, 5, rng);
  GradientOptions opts;
  opts.lr = 10.0;  // far above the stable step size
  opts.max_iter = 200;
  CHECK_THROWS_AS(fit_linear_autoencoder(z, 2, AutoencoderMode::Gradient, opts), NumericError);
}

TEST_CASE("factor fit directory serialization round trip") {
  Rng rng(15);
  Matrix z = random_matrix(12, 5, rng);
  FactorFit fit = fit_attention_pca(z, 2);
  auto dir = std::filesystem::temp_directory_path() / "attnfactor_fit_dir";
  save_factor_fit(dir, fit);
  FactorFit back = load_factor_fit(dir);
  CHECK(back.k == fit.k);
  CHECK((back.loadings - fit.loadings).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.factors - fit.factors).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.eigenvalues - fit.eigenvalues).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove_all(dir);
}
