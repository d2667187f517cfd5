#ifndef ATTNFACTOR_ATTENTION_HPP
#define ATTNFACTOR_ATTENTION_HPP

#include <optional>
#include <string>
#include <utility>

#include "attnfactor/common.hpp"
#include "attnfactor/panels.hpp"

namespace attnfactor::attn {

// Temporal attention operator, a T x T matrix applied from the left.
struct TemporalAttention {
  Matrix matrix;
  double frob_sq_over_t() const {
    return matrix.rows() == 0 ? 0.0 : matrix.squaredNorm() / static_cast<double>(matrix.rows());
  }
};

// Cross-sectional attention operator, an N x N matrix applied from the right.
// When the panel splits into an X block followed by a Y block, block_split
// records (N_x, N_y).
struct CrossSectionAttention {
  Matrix matrix;
  std::optional<std::pair<int, int>> block_split;
  std::string variant;  // which construction produced the matrix
};

struct AttentionDiagnostics {
  double trace_ata = 0.0;
  double frob_sq_ata = 0.0;
  double n_eff = 0.0;
  double n_x_eff = 0.0;
  double n_y_eff = 0.0;
  double bar_alpha = 0.0;
};

Matrix identity_attention(int n);

// Block-diagonal diag(I_nx, sqrt(gamma) * I_ny): the Y block receives
// second-moment weight gamma, so PCA on the attended panel coincides with
// PCA on [X sqrt(gamma) Y].
CrossSectionAttention target_pca_attention(int n_x, int n_y, double gamma);

enum class SoftmaxAxis { Temporal, CrossSectional };

// Row-stochastic softmax similarity: softmax(Z Z^T / temperature) for the
// temporal axis, softmax(Z^T Z / temperature) cross-sectionally. Provided for
// experimentation; outputs are frozen before being handed to the estimator.
Matrix softmax_similarity_attention(const Matrix& z, SoftmaxAxis axis, double temperature);

enum class DiffuseVariant { Diagonal, Dense };

// Every column has squared norm exactly 1/n. The diagonal variant
// (1/sqrt(n)) I is the default since it keeps block structure identifiable;
// Dense uses the uniform matrix (1/n) J.
CrossSectionAttention diffuse_attention(int n, DiffuseVariant variant = DiffuseVariant::Diagonal);

// First m columns are unit basis vectors, the rest zero.
CrossSectionAttention sparse_attention(int n, int m);

// Exact spectral diagnostics of the pair (A_z, B):
//   n_eff       = tr(A^T A)
//   bar_alpha   = tr(A^T A) ||A^T A||_F^2 / N * ||B||_F^4 / T^2
// with the block-resolved effective sizes when block_split is present.
AttentionDiagnostics attention_diagnostics(const CrossSectionAttention& a,
                                           const TemporalAttention& b, int t);

// Z_tilde = B [X Y] A_z. Panels must share the clock and have no masked cells.
Matrix apply_attention(const TemporalAttention& b, const panels::Panel& x,
                       const panels::Panel& y, const CrossSectionAttention& a);

// Raw-matrix variant used by the simulation studies.
Matrix apply_attention(const Matrix& b, const Matrix& z, const Matrix& a);

}  // namespace attnfactor::attn

#endif
