// Timing harness comparing the serial reference path against the OpenMP
// path for the two replication-parallel kernels: Monte Carlo PCA fits and
// batched attention transforms. Outputs must be bitwise identical across
// worker counts; the run aborts if they are not.

#include <omp.h>

#include <Eigen/Core>
#include <chrono>
#include <cstdio>
#include <vector>

#include "attnfactor/attention.hpp"
#include "attnfactor/mc.hpp"
#include "attnfactor/mpte.hpp"
#include "attnfactor/parallel.hpp"
#include "attnfactor/rng.hpp"

using namespace attnfactor;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<double> mc_pca_kernel(int reps, int n, int t) {
  std::vector<double> out(reps);
  parallel_for_indexed(reps, [&](std::size_t rep) {
    Rng rng(derive_seed(42, rep));
    Matrix f(t, 3), lambda(n, 3), e(t, n);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < lambda.size(); ++i) lambda.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
    Matrix z = f * lambda.transpose() + e;
    mpte::FactorFit fit = mpte::fit_attention_pca(z, 3);
    out[rep] = fit.eigenvalues.sum();
  });
  return out;
}

std::vector<double> attention_kernel(int reps, int n, int t) {
  std::vector<double> out(reps);
  attn::CrossSectionAttention a = attn::diffuse_attention(n);
  parallel_for_indexed(reps, [&](std::size_t rep) {
    Rng rng(derive_seed(7, rep));
    Matrix z(t, n);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    Matrix b = Matrix::Identity(t, t);
    Matrix z_tilde = attn::apply_attention(b, z, a.matrix);
    out[rep] = z_tilde.squaredNorm();
  });
  return out;
}

template <typename Kernel>
void bench(const char* name, Kernel&& kernel) {
  set_workers(1);
  double t0 = now_ms();
  auto serial = kernel();
  double serial_ms = now_ms() - t0;

  int max_workers = omp_get_max_threads();
  set_workers(max_workers);
  t0 = now_ms();
  auto parallel = kernel();
  double parallel_ms = now_ms() - t0;

  bool identical = serial == parallel;
  std::printf("%-20s serial %8.1f ms   omp(%d) %8.1f ms   speedup %.2fx   identical %s\n", name,
              serial_ms, max_workers, parallel_ms, serial_ms / parallel_ms,
              identical ? "yes" : "NO");
  if (!identical) std::exit(1);
}

}  // namespace

int main() {
  Eigen::setNbThreads(1);
  std::printf("kernel benchmark: serial reference vs OpenMP (%d threads)\n",
              omp_get_max_threads());
  bench("mc_pca", [] { return mc_pca_kernel(64, 150, 300); });
  bench("attention_apply", [] { return attention_kernel(64, 200, 400); });
  return 0;
}
