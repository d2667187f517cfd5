#include "attnfactor/mpte.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "attnfactor/io.hpp"
#include "attnfactor/rng.hpp"

namespace attnfactor::mpte {

namespace {

// Deterministic sign convention: the largest-magnitude entry of each column
// is made positive (ties resolved by the first index reaching the maximum).
void fix_column_signs(Matrix& primary, Matrix* companion) {
  for (Eigen::Index j = 0; j < primary.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < primary.rows(); ++i) {
      double mag = std::abs(primary(i, j));
      if (mag > best + 1e-15) {
        best = mag;
        arg = i;
      }
    }
    if (primary(arg, j) < 0.0) {
      primary.col(j) = -primary.col(j);
      if (companion != nullptr) companion->col(j) = -companion->col(j);
    }
  }
}

Matrix maybe_demean(const Matrix& z, const FitOptions& opts) {
  if (!opts.demean_columns) return z;
  Matrix out = z;
  out.rowwise() -= z.colwise().mean();
  return out;
}

void check_fit_args(const Matrix& z, int k) {
  require(k >= 0, "fit: k must be nonnegative");
  require(k <= std::min(z.rows(), z.cols()), "fit: k exceeds min(T, N)");
  require(z.allFinite(), "fit: input matrix must be finite");
}

void finalize_fit(FactorFit& fit, const Matrix& z, const Vector& all_eigs) {
  const double n = static_cast<double>(z.cols());
  if (fit.k > 0) {
    double lead = std::abs(fit.eigenvalues(0));
    double floor = 1e-12 * std::max(lead, 1.0);
    if (fit.eigenvalues(fit.k - 1) <= floor)
      throw NumericError("fit: rank of Z~ is below k");
    if (static_cast<Eigen::Index>(fit.k) < all_eigs.size()) {
      double gap = fit.eigenvalues(fit.k - 1) - all_eigs(fit.k);
      if (gap < 1e-12 * std::max(lead, 1e-300)) fit.subspace_only = true;
    }
  }
  double total = z.squaredNorm() / n;
  fit.explained_variance_ratio = Vector::Zero(fit.k);
  if (total > 0.0)
    for (int j = 0; j < fit.k; ++j) fit.explained_variance_ratio(j) = fit.eigenvalues(j) / total;
  fit.singular_values = (fit.eigenvalues.array().max(0.0) * n).sqrt();
}

}  // namespace

FactorFit fit_attention_pca(const Matrix& z_tilde, int k, const FitOptions& opts) {
  check_fit_args(z_tilde, k);
  Matrix z = maybe_demean(z_tilde, opts);
  const Eigen::Index n = z.cols();
  Matrix second_moment = z.transpose() * z / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(second_moment);
  if (eig.info() != Eigen::Success) throw NumericError("fit_attention_pca: eigensolver failed");

  // Eigen returns ascending order; flip to nonincreasing.
  Vector all_eigs = eig.eigenvalues().reverse();
  FactorFit fit;
  fit.k = k;
  fit.eigenvalues = all_eigs.head(k);
  fit.loadings = Matrix::Zero(n, k);
  for (int j = 0; j < k; ++j)
    fit.loadings.col(j) = eig.eigenvectors().col(n - 1 - j) * std::sqrt(static_cast<double>(n));
  fix_column_signs(fit.loadings, nullptr);
  // Factors by regressing Z~ on the loadings; the normalization makes
  // loadings^T loadings = N I_k, so this is Z~ loadings / N up to rounding.
  if (k > 0) {
    Matrix gram = fit.loadings.transpose() * fit.loadings;
    fit.factors = z * fit.loadings * gram.inverse();
  } else {
    fit.factors = Matrix::Zero(z.rows(), 0);
  }
  finalize_fit(fit, z, all_eigs);
  return fit;
}

FactorFit svd_fit(const Matrix& z_tilde, int k, const FitOptions& opts) {
  check_fit_args(z_tilde, k);
  Matrix z = maybe_demean(z_tilde, opts);
  const double n = static_cast<double>(z.cols());
  Eigen::BDCSVD<Matrix> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector s = svd.singularValues();
  FactorFit fit;
  fit.k = k;
  fit.loadings = svd.matrixV().leftCols(k) * std::sqrt(n);
  fit.factors = svd.matrixU().leftCols(k) * s.head(k).asDiagonal() / std::sqrt(n);
  fix_column_signs(fit.loadings, &fit.factors);
  fit.eigenvalues = s.head(k).array().square() / n;
  Vector all_eigs = s.array().square() / n;
  finalize_fit(fit, z, all_eigs);
  return fit;
}

Matrix common_component(const FactorFit& fit) {
  if (fit.k == 0) return Matrix::Zero(fit.factors.rows(), fit.loadings.rows());
  return fit.factors * fit.loadings.transpose();
}

RotationAlignment align_rotation(const Matrix& estimated, const Matrix& truth,
                                 bool allow_invertible) {
  require(estimated.rows() == truth.rows() && estimated.cols() == truth.cols(),
          "align_rotation: shape mismatch");
  RotationAlignment out;
  Matrix cross = truth.transpose() * estimated;
  if (allow_invertible) {
    // Unrestricted least-squares alignment: estimated ~ truth * H^T.
    Matrix gram = truth.transpose() * truth;
    Eigen::FullPivLU<Matrix> lu(gram);
    if (!lu.isInvertible()) throw NumericError("align_rotation: truth is rank deficient");
    out.h = (lu.solve(cross)).transpose();
    out.orthogonal = false;
  } else {
    Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    double tol = 1e-13 * std::max(1.0, svd.singularValues()(0));
    if (svd.singularValues().minCoeff() <= tol)
      throw NumericError("align_rotation: degenerate cross-product, subspaces not identified");
    // min_H || estimated - truth H^T ||_F over orthogonal H.
    out.h = svd.matrixV() * svd.matrixU().transpose();
  }
  out.residual = (estimated - truth * out.h.transpose()).norm();
  return out;
}

double loading_mse(const Matrix& estimated, const Matrix& truth, const RotationAlignment& h) {
  require(estimated.rows() == truth.rows() && estimated.cols() == truth.cols(),
          "loading_mse: shape mismatch");
  return (estimated - truth * h.h.transpose()).squaredNorm() /
         static_cast<double>(estimated.rows());
}

double factor_mse(const Matrix& estimated, const Matrix& truth, const RotationAlignment& h) {
  require(estimated.rows() == truth.rows() && estimated.cols() == truth.cols(),
          "factor_mse: shape mismatch");
  Matrix rot = h.orthogonal ? Matrix(h.h) : Matrix(h.h.transpose().inverse());
  return (estimated - truth * rot.transpose()).squaredNorm() /
         static_cast<double>(estimated.rows());
}

double autoencoder_loss(const Matrix& z_tilde, const LinearAutoencoderFit& fit) {
  const Eigen::Index t = z_tilde.rows();
  Matrix encoded = z_tilde * fit.w0.transpose();
  encoded.rowwise() += fit.b0.transpose();
  Matrix recon = encoded * fit.w1.transpose();
  recon.rowwise() += fit.b1.transpose();
  (void)t;
  return (z_tilde - recon).squaredNorm();
}

LinearAutoencoderFit fit_linear_autoencoder(const Matrix& z_tilde, int k, AutoencoderMode mode,
                                            const GradientOptions& opts) {
  require(k >= 1 && k <= std::min(z_tilde.rows(), z_tilde.cols()),
          "fit_linear_autoencoder: k out of range");
  const Eigen::Index n = z_tilde.cols();
  Vector z_bar = z_tilde.colwise().mean();

  auto closed_form = [&]() {
    Eigen::BDCSVD<Matrix> svd(z_tilde, Eigen::ComputeThinU | Eigen::ComputeThinV);
    LinearAutoencoderFit fit;
    fit.w1 = svd.matrixV().leftCols(k);
    fit.w0 = fit.w1.transpose();
    fit.b0 = Vector::Zero(k);
    fit.b1 = z_bar - fit.w1 * (fit.b0 + fit.w0 * z_bar);
    fit.final_loss = autoencoder_loss(z_tilde, fit);
    return fit;
  };

  if (mode == AutoencoderMode::ClosedForm) return closed_form();

  LinearAutoencoderFit fit;
  if (opts.init_closed_form) {
    fit = closed_form();
  } else {
    Rng rng(opts.seed);
    double scale = 1.0 / std::sqrt(static_cast<double>(n));
    fit.w0 = Matrix::Zero(k, n);
    fit.w1 = Matrix::Zero(n, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < n; ++j) fit.w0(i, j) = rng.uniform(-scale, scale);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < k; ++j) fit.w1(i, j) = rng.uniform(-scale, scale);
    fit.b0 = Vector::Zero(k);
    fit.b1 = Vector::Zero(n);
  }

  double lr = opts.lr;
  if (lr <= 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(z_tilde.transpose() * z_tilde);
    lr = 0.5 / std::max(eig.eigenvalues().maxCoeff(), 1e-12);
  }

  const Eigen::Index t = z_tilde.rows();
  double prev_loss = autoencoder_loss(z_tilde, fit);
  int bad_steps = 0;
  for (int it = 0; it < opts.max_iter; ++it) {
    Matrix encoded = z_tilde * fit.w0.transpose();
    encoded.rowwise() += fit.b0.transpose();
    Matrix recon = encoded * fit.w1.transpose();
    recon.rowwise() += fit.b1.transpose();
    Matrix resid = recon - z_tilde;  // T x N

    Matrix g_w1 = 2.0 * resid.transpose() * encoded;
    Vector g_b1 = 2.0 * resid.colwise().sum();
    Matrix g_enc = 2.0 * resid * fit.w1;  // T x k
    Matrix g_w0 = g_enc.transpose() * z_tilde;
    Vector g_b0 = g_enc.colwise().sum();

    fit.w1 -= lr * g_w1;
    fit.b1 -= lr * g_b1;
    fit.w0 -= lr * g_w0;
    fit.b0 -= lr * g_b0;
    fit.iterations = it + 1;

    double loss = autoencoder_loss(z_tilde, fit);
    if (!std::isfinite(loss)) throw NumericError("fit_linear_autoencoder: loss diverged");
    if (loss > prev_loss) {
      if (++bad_steps >= 10)
        throw NumericError("fit_linear_autoencoder: loss increased for 10 consecutive steps");
    } else {
      bad_steps = 0;
    }
    double denom = std::max(prev_loss, 1e-300);
    bool converged = std::abs(prev_loss - loss) / denom < opts.tol;
    prev_loss = loss;
    if (converged) break;
  }
  (void)t;
  fit.final_loss = prev_loss;
  return fit;
}

double largest_principal_angle(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "principal angle: column counts differ");
  Eigen::HouseholderQR<Matrix> qa(a), qb(b);
  Matrix q1 = qa.householderQ() * Matrix::Identity(a.rows(), a.cols());
  Matrix q2 = qb.householderQ() * Matrix::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Matrix> svd(q1.transpose() * q2);
  double smin = svd.singularValues().minCoeff();
  return std::acos(std::clamp(smin, -1.0, 1.0));
}

double autoencoder_pca_subspace_distance(const LinearAutoencoderFit& ae, const FactorFit& pca) {
  require(ae.w1.cols() == pca.k, "subspace distance: latent dimensions differ");
  Eigen::ColPivHouseholderQR<Matrix> qr(ae.w1);
  if (qr.rank() < ae.w1.cols())
    throw NumericError("autoencoder_pca_subspace_distance: W1 is rank deficient");
  // pca.loadings = sqrt(N) Q_hat shares the span of Q_hat.
  return largest_principal_angle(ae.w1, pca.loadings);
}

void save_factor_fit(const std::filesystem::path& dir, const FactorFit& fit) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(dir / "loadings.csv", fit.loadings);
  write_matrix_csv(dir / "factors.csv", fit.factors);
  write_matrix_csv(dir / "eigenvalues.csv", fit.eigenvalues);
  nlohmann::json j{{"k", fit.k},
                   {"subspace_only", fit.subspace_only},
                   {"singular_values", std::vector<double>(fit.singular_values.data(),
                                                           fit.singular_values.data() + fit.k)},
                   {"explained_variance_ratio",
                    std::vector<double>(fit.explained_variance_ratio.data(),
                                        fit.explained_variance_ratio.data() + fit.k)}};
  write_json_file(dir / "fit.json", j);
}

FactorFit load_factor_fit(const std::filesystem::path& dir) {
  FactorFit fit;
  nlohmann::json j = read_json_file(dir / "fit.json");
  fit.k = j.at("k").get<int>();
  fit.subspace_only = j.at("subspace_only").get<bool>();
  fit.loadings = read_matrix_csv(dir / "loadings.csv", false);
  fit.factors = read_matrix_csv(dir / "factors.csv", false);
  Matrix eig = read_matrix_csv(dir / "eigenvalues.csv", false);
  fit.eigenvalues = eig.col(0);
  auto sv = j.at("singular_values").get<std::vector<double>>();
  auto ev = j.at("explained_variance_ratio").get<std::vector<double>>();
  fit.singular_values = Eigen::Map<Vector>(sv.data(), sv.size());
  fit.explained_variance_ratio = Eigen::Map<Vector>(ev.data(), ev.size());
  return fit;
}

}  // namespace attnfactor::mpte
