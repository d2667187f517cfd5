#ifndef ATTNFACTOR_RNG_HPP
#define ATTNFACTOR_RNG_HPP

#include <cstdint>
#include <random>

namespace attnfactor {

// splitmix64 step; the basis of the documented seed-derivation rule.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for stream `index` of a master seed. Replications, cells and
// workers all derive their streams through this, so results do not depend
// on scheduling or worker count.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 1));
}

// Thin deterministic wrapper around mt19937_64. One instance per logical
// stream; never shared across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(gen_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  // Student-t with nu dof, rescaled to unit variance (requires nu > 2).
  double student_t_unit(double nu) {
    double draw = std::student_t_distribution<double>(nu)(gen_);
    return draw * std::sqrt((nu - 2.0) / nu);
  }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace attnfactor

#endif
