#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mortvi/math.hpp"

namespace mortvi {

// Deterministic RNG. The engine is the standard-specified mt19937_64 and all
// variate transforms are written out here, so a given seed yields the same
// stream on every platform. A normal consumes exactly two engine draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_pos() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

  // Box-Muller, cosine branch only.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  std::vector<double> normals(std::size_t n) {
    std::vector<double> z(n);
    for (auto& v : z) v = normal();
    return z;
  }

  // Exact Poisson sampling: Knuth's product method for small rates, Hormann's
  // PTRS transformed rejection otherwise.
  long long poisson(double lambda) {
    if (!(lambda >= 0.0)) throw DomainError("poisson sampling requires lambda >= 0");
    if (lambda == 0.0) return 0;
    if (lambda < 10.0) {
      const double limit = std::exp(-lambda);
      long long k = 0;
      double prod = uniform_pos();
      while (prod > limit) {
        ++k;
        prod *= uniform_pos();
      }
      return k;
    }
    const double b = 0.931 + 2.53 * std::sqrt(lambda);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_lambda = std::log(lambda);
    for (;;) {
      double u = uniform() - 0.5;
      double v = uniform_pos();
      double us = 0.5 - std::fabs(u);
      double kf = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
      if (us >= 0.07 && v <= v_r) return static_cast<long long>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
          kf * log_lambda - lambda - log_gamma(kf + 1.0))
        return static_cast<long long>(kf);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mortvi
