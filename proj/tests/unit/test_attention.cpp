#include <doctest.h>

#include <cmath>

#include "attnfactor/attention.hpp"
#include "attnfactor/rng.hpp"

using namespace attnfactor;
using namespace attnfactor::attn;

namespace {

panels::Panel panel_from(const Matrix& values, int id_offset, panels::Frequency freq) {
  panels::Panel p;
  p.values = values;
  p.missing_mask = BoolMatrix::Constant(values.rows(), values.cols(), false);
  for (Eigen::Index t = 0; t < values.rows(); ++t) p.timestamps.push_back(t);
  for (Eigen::Index j = 0; j < values.cols(); ++j)
    p.meta.push_back(
        panels::SeriesMeta{id_offset + static_cast<int>(j), "s" + std::to_string(id_offset + j),
                           freq, ""});
  return p;
}

TemporalAttention identity_b(int t) { return TemporalAttention{Matrix::Identity(t, t)}; }

}  // namespace

TEST_CASE("identity_attention basics") {
  Matrix id = identity_attention(3);
  CHECK(id == Matrix::Identity(3, 3));
  CHECK_THROWS_AS(identity_attention(0), ArgumentError);

  CrossSectionAttention a;
  a.matrix = id;
  auto d = attention_diagnostics(a, identity_b(4), 4);
  CHECK(d.trace_ata == doctest::Approx(3.0));
  CHECK(d.frob_sq_ata == doctest::Approx(3.0));
  CHECK(d.n_eff == doctest::Approx(3.0));
  CHECK(d.bar_alpha == doctest::Approx(3.0));  // (3*3/3) * (16/16)

  Rng rng(1);
  Matrix z(4, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  CHECK((apply_attention(Matrix::Identity(4, 4), z, id) - z).norm() == 0.0);
}

TEST_CASE("target_pca_attention: gamma scaling of the Y block") {
  CrossSectionAttention gamma1 = target_pca_attention(2, 2, 1.0);
  CHECK((gamma1.matrix - Matrix::Identity(4, 4)).norm() == 0.0);

  CrossSectionAttention a = target_pca_attention(2, 1, 4.0);
  Matrix expected = Matrix::Identity(3, 3);
  expected(2, 2) = 2.0;  // sqrt(4)
  CHECK((a.matrix - expected).norm() == 0.0);
  CHECK_THROWS_AS(target_pca_attention(2, 1, 0.0), ArgumentError);
  CHECK_THROWS_AS(target_pca_attention(2, 1, -1.0), ArgumentError);

  auto d = attention_diagnostics(a, identity_b(5), 5);
  CHECK(d.n_x_eff == doctest::Approx(2.0));
  CHECK(d.n_y_eff == doctest::Approx(4.0));  // gamma * n_y
  CHECK(d.n_eff == doctest::Approx(d.n_x_eff + d.n_y_eff));
}

TEST_CASE("apply_attention: Z-tilde equals [X sqrt(gamma) Y] under target PCA weighting") {
  Rng rng(2);
  Matrix xv(6, 2), yv(6, 1);
  for (Eigen::Index i = 0; i < xv.size(); ++i) xv.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < yv.size(); ++i) yv.data()[i] = rng.normal();
  auto x = panel_from(xv, 0, panels::Frequency::High);
  auto y = panel_from(yv, 2, panels::Frequency::Low);

  CrossSectionAttention id;
  id.matrix = identity_attention(3);
  Matrix z = apply_attention(identity_b(6), x, y, id);
  CHECK((z.leftCols(2) - xv).norm() == 0.0);
  CHECK((z.rightCols(1) - yv).norm() == 0.0);

  double gamma = 2.7;
  Matrix zg = apply_attention(identity_b(6), x, y, target_pca_attention(2, 1, gamma));
  CHECK((zg.leftCols(2) - xv).norm() == 0.0);
  CHECK((zg.rightCols(1) - std::sqrt(gamma) * yv).norm() < 1e-14);
}

TEST_CASE("apply_attention: 2x2 hand case with a row-swap B") {
  Matrix b(2, 2);
  b << 0, 1, 1, 0;
  Matrix x(2, 1), y(2, 1);
  x << 1, 2;
  y << 3, 4;
  Matrix z(2, 2);
  z << x, y;
  Matrix out = apply_attention(b, z, Matrix::Identity(2, 2));
  Matrix expected(2, 2);
  expected << 2, 4, 1, 3;
  CHECK((out - expected).norm() == 0.0);
}

TEST_CASE("softmax_similarity_attention: stochastic rows, symmetry, scalar oracle") {
  Matrix z(3, 2);
  z << 1.0, -0.5, 1.0, -0.5, 1.0, -0.5;  // identical rows
  Matrix a = softmax_similarity_attention(z, SoftmaxAxis::Temporal, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(a(i, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Matrix z2(2, 1);
  z2 << 0.0, 1.0;
  Matrix a2 = softmax_similarity_attention(z2, SoftmaxAxis::Temporal, 1.0);
  CHECK(std::abs(a2.row(0).sum() - 1.0) < 1e-15);
  CHECK(std::abs(a2.row(1).sum() - 1.0) < 1e-15);
  double sigmoid = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(a2(1, 1) == doctest::Approx(sigmoid).epsilon(1e-12));       // sigma(+1)
  CHECK(a2(1, 0) == doctest::Approx(1.0 - sigmoid).epsilon(1e-12)); // sigma(-1)

  // Temperature -> infinity approaches the uniform matrix.
  Rng rng(5);
  Matrix z3(4, 3);
  for (Eigen::Index i = 0; i < z3.size(); ++i) z3.data()[i] = rng.normal();
  Matrix hot = softmax_similarity_attention(z3, SoftmaxAxis::Temporal, 1e6);
  CHECK((hot.array() - 0.25).abs().maxCoeff() < 1e-4);

  Matrix bad = z3;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(softmax_similarity_attention(bad, SoftmaxAxis::Temporal, 1.0), ArgumentError);
  CHECK_THROWS_AS(softmax_similarity_attention(z3, SoftmaxAxis::Temporal, 0.0), ArgumentError);
}

TEST_CASE("softmax rows sum to one and stay strictly positive (random inputs)") {
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix z(5, 4);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal(0.0, 3.0);
    for (auto axis : {SoftmaxAxis::Temporal, SoftmaxAxis::CrossSectional}) {
      Matrix a = softmax_similarity_attention(z, axis, 1.0);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);
        CHECK(a.row(i).minCoeff() > 0.0);
      }
    }
  }
}

TEST_CASE("diffuse_attention: column norms, diagnostics and the N^-2 rate") {
  CrossSectionAttention diag4 = diffuse_attention(4);
  CHECK((diag4.matrix - 0.5 * Matrix::Identity(4, 4)).norm() == 0.0);
  auto d = attention_diagnostics(diag4, identity_b(10), 10);
  CHECK(d.trace_ata == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.frob_sq_ata == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(d.bar_alpha == doctest::Approx(1.0 / 16).epsilon(1e-12));  // 1/n^2

  for (auto variant : {DiffuseVariant::Diagonal, DiffuseVariant::Dense}) {
    double reference = 0.0;
    for (int n : {8, 16, 32, 64}) {
      CrossSectionAttention a = diffuse_attention(n, variant);
      for (int j = 0; j < n; ++j)
        CHECK(a.matrix.col(j).squaredNorm() == doctest::Approx(1.0 / n).epsilon(1e-12));
      double scaled = attention_diagnostics(a, identity_b(7), 7).bar_alpha * n * n;
      if (reference == 0.0) reference = scaled;
      CHECK(std::abs(scaled - reference) < 1e-10);  // bar_alpha * n^2 constant
    }
  }
}

TEST_CASE("sparse_attention: m unit columns, rest zero") {
  CrossSectionAttention a = sparse_attention(5, 2);
  auto d = attention_diagnostics(a, identity_b(3), 3);
  CHECK(d.trace_ata == doctest::Approx(2.0));
  CHECK(d.frob_sq_ata == doctest::Approx(2.0));
  CHECK((sparse_attention(4, 4).matrix - Matrix::Identity(4, 4)).norm() == 0.0);
  CHECK_THROWS_AS(sparse_attention(5, 0), ArgumentError);

  CrossSectionAttention zero;
  zero.matrix = Matrix::Zero(3, 3);
  auto dz = attention_diagnostics(zero, identity_b(2), 2);
  CHECK(dz.trace_ata == 0.0);
  CHECK(dz.frob_sq_ata == 0.0);
  CHECK(dz.bar_alpha == 0.0);
}

TEST_CASE("apply_attention is linear in each argument; diagnostics recompute exactly") {
  Rng rng(13);
  Matrix b(5, 5), z(5, 4), a(4, 4);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  double alpha = 1.7;
  CHECK((apply_attention(alpha * b, z, a) - alpha * apply_attention(b, z, a)).norm() < 1e-12);
  CHECK((apply_attention(b, alpha * z, a) - alpha * apply_attention(b, z, a)).norm() < 1e-12);
  CHECK((apply_attention(b, z, alpha * a) - alpha * apply_attention(b, z, a)).norm() < 1e-12);

  CrossSectionAttention ca;
  ca.matrix = a;
  ca.block_split = {3, 1};
  TemporalAttention tb{b};
  auto d = attention_diagnostics(ca, tb, 5);
  Matrix ata = a.transpose() * a;
  double bar = ata.trace() * ata.squaredNorm() / 4.0 * std::pow(b.squaredNorm(), 2) / 25.0;
  CHECK(d.bar_alpha == doctest::Approx(bar).epsilon(1e-12));
  CHECK(d.n_eff == doctest::Approx(d.n_x_eff + d.n_y_eff).epsilon(1e-12));
}

TEST_CASE("apply_attention rejects masked panels and shape mismatches") {
  Rng rng(3);
  Matrix xv(4, 2), yv(4, 1);
  for (Eigen::Index i = 0; i < xv.size(); ++i) xv.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < yv.size(); ++i) yv.data()[i] = rng.normal();
  auto x = panel_from(xv, 0, panels::Frequency::High);
  auto y = panel_from(yv, 2, panels::Frequency::Low);
  CrossSectionAttention wrong;
  wrong.matrix = identity_attention(5);
  CHECK_THROWS_AS(apply_attention(identity_b(4), x, y, wrong), ArgumentError);
  x.missing_mask(0, 0) = true;
  CrossSectionAttention ok;
  ok.matrix = identity_attention(3);
  CHECK_THROWS_AS(apply_attention(identity_b(4), x, y, ok), ArgumentError);
}
