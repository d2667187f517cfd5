#include "attnfactor/attention.hpp"

#include <cmath>

namespace attnfactor::attn {

Matrix identity_attention(int n) {
  require(n >= 1, "identity_attention: n must be >= 1");
  return Matrix::Identity(n, n);
}

CrossSectionAttention target_pca_attention(int n_x, int n_y, double gamma) {
  require(n_x >= 0 && n_y >= 0 && n_x + n_y >= 1, "target_pca_attention: empty panel");
  require(gamma > 0.0, "target_pca_attention: gamma must be positive");
  CrossSectionAttention a;
  a.matrix = Matrix::Identity(n_x + n_y, n_x + n_y);
  for (int j = n_x; j < n_x + n_y; ++j) a.matrix(j, j) = std::sqrt(gamma);
  a.block_split = {n_x, n_y};
  a.variant = "target_pca";
  return a;
}

Matrix softmax_similarity_attention(const Matrix& z, SoftmaxAxis axis, double temperature) {
  require(temperature > 0.0, "softmax_similarity_attention: temperature must be positive");
  require(z.allFinite(), "softmax_similarity_attention: input must be finite");
  Matrix scores = (axis == SoftmaxAxis::Temporal) ? Matrix(z * z.transpose())
                                                  : Matrix(z.transpose() * z);
  scores /= temperature;
  Matrix out(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    double m = scores.row(i).maxCoeff();
    Vector e = (scores.row(i).array() - m).exp();
    out.row(i) = e.transpose() / e.sum();
  }
  return out;
}

CrossSectionAttention diffuse_attention(int n, DiffuseVariant variant) {
  require(n >= 1, "diffuse_attention: n must be >= 1");
  CrossSectionAttention a;
  if (variant == DiffuseVariant::Diagonal) {
    a.matrix = Matrix::Identity(n, n) / std::sqrt(static_cast<double>(n));
    a.variant = "diffuse_diagonal";
  } else {
    a.matrix = Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
    a.variant = "diffuse_dense";
  }
  return a;
}

CrossSectionAttention sparse_attention(int n, int m) {
  require(n >= 1, "sparse_attention: n must be >= 1");
  require(m >= 1 && m <= n, "sparse_attention: need 1 <= m <= n");
  CrossSectionAttention a;
  a.matrix = Matrix::Zero(n, n);
  for (int j = 0; j < m; ++j) a.matrix(j, j) = 1.0;
  a.variant = "sparse";
  return a;
}

AttentionDiagnostics attention_diagnostics(const CrossSectionAttention& a,
                                           const TemporalAttention& b, int t) {
  require(a.matrix.rows() == a.matrix.cols(), "attention_diagnostics: A_z must be square");
  require(b.matrix.rows() == b.matrix.cols() && b.matrix.rows() == t,
          "attention_diagnostics: B must be t x t");
  const Eigen::Index n = a.matrix.rows();
  AttentionDiagnostics d;
  Matrix ata = a.matrix.transpose() * a.matrix;
  d.trace_ata = ata.trace();
  d.frob_sq_ata = ata.squaredNorm();
  d.n_eff = a.matrix.squaredNorm();  // == trace_ata
  if (a.block_split) {
    auto [n_x, n_y] = *a.block_split;
    require(n_x + n_y == n, "attention_diagnostics: block split does not match A_z size");
    d.n_x_eff = a.matrix.topRows(n_x).squaredNorm();   // ||P_x A_z||_F^2
    d.n_y_eff = a.matrix.bottomRows(n_y).squaredNorm();
  } else {
    d.n_x_eff = d.n_eff;
    d.n_y_eff = 0.0;
  }
  double b_frob_sq = b.matrix.squaredNorm();
  double temporal = (b_frob_sq * b_frob_sq) / (static_cast<double>(t) * t);
  d.bar_alpha = d.trace_ata * d.frob_sq_ata / static_cast<double>(n) * temporal;
  return d;
}

Matrix apply_attention(const Matrix& b, const Matrix& z, const Matrix& a) {
  require(b.cols() == z.rows(), "apply_attention: B and [X Y] are not conformable");
  require(z.cols() == a.rows(), "apply_attention: [X Y] and A_z are not conformable");
  return b * z * a;
}

Matrix apply_attention(const TemporalAttention& b, const panels::Panel& x,
                       const panels::Panel& y, const CrossSectionAttention& a) {
  require(x.rows() == y.rows(), "apply_attention: panels are not on a common clock");
  require(x.timestamps == y.timestamps, "apply_attention: panel timestamps differ");
  require(!x.has_missing() && !y.has_missing(),
          "apply_attention: panels must be fully observed");
  Matrix z(x.rows(), x.cols() + y.cols());
  z << x.values, y.values;
  require(a.matrix.rows() == z.cols(), "apply_attention: A_z has wrong dimension");
  if (a.block_split) {
    auto [n_x, n_y] = *a.block_split;
    require(n_x == x.cols() && n_y == y.cols(),
            "apply_attention: A_z block split does not match panel widths");
  }
  return apply_attention(b.matrix, z, a.matrix);
}

}  // namespace attnfactor::attn
