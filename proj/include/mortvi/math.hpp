#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mortvi/error.hpp"

namespace mortvi {

inline constexpr double half_log_two_pi = 0.9189385332046727417803297;
inline constexpr double neg_infinity = -std::numeric_limits<double>::infinity();

// Largest log-rate accepted by the Poisson terms: exp(x) stays below 1e300.
inline constexpr double max_log_rate = 690.77552789821368;

// Log-gamma via the g=7, n=9 Lanczos approximation. Relative error is below
// 1e-13 for arguments >= 1, which is the only range the Poisson terms need
// (counts enter as k+1). Unlike std::lgamma this has no global state.
inline double log_gamma(double x) {
  static constexpr double coef[9] = {
      0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
  if (!(x > 0.0)) throw DomainError("log_gamma requires a positive argument");
  if (x < 0.5) {
    // Reflection; not hit by count data but keeps the function total on (0, inf).
    const double pi = 3.14159265358979323846;
    return std::log(pi / std::sin(pi * x)) - log_gamma(1.0 - x);
  }
  const double z = x - 1.0;
  double acc = coef[0];
  for (int i = 1; i < 9; ++i) acc += coef[i] / (z + static_cast<double>(i));
  const double t = z + 7.5;
  return half_log_two_pi + (z + 0.5) * std::log(t) - t + std::log(acc);
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Inverse of softplus; argument must be positive.
inline double softplus_inv(double y) {
  if (!(y > 0.0)) throw DomainError("softplus_inv requires a positive argument");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

inline double logistic(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("logit requires p in (0,1)");
  return std::log(p / (1.0 - p));
}

inline double log1p_exp(double x) { return softplus(x); }

inline double square(double x) { return x * x; }

inline double primal_value(double x) { return x; }

inline double dot(std::span<const double> a, std::span<const double> b, double c0 = 0.0) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  double acc = c0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double weighted_sum(std::span<const double> xs, std::span<const double> ws,
                           double c0 = 0.0) {
  if (xs.size() != ws.size()) throw ShapeError("weighted_sum: size mismatch");
  double acc = c0;
  for (std::size_t i = 0; i < xs.size(); ++i) acc += ws[i] * xs[i];
  return acc;
}

inline double logsumexp(std::span<const double> xs) {
  double m = neg_infinity;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

// log N(x; mean, sd^2). Differentiable in all three arguments when any of
// them is a tape variable; the sd must have a positive (primal) value.
template <class A, class B, class C>
auto gaussian_logpdf(const A& x, const B& mean, const C& sd) {
  using std::log;
  if (!(primal_value(sd) > 0.0)) throw DomainError("gaussian_logpdf requires sd > 0");
  auto z = (x - mean) / sd;
  return -half_log_two_pi - log(sd) - 0.5 * square(z);
}

// log Poisson(k; rate) = k log(rate) - rate - log Gamma(k+1). The count k is
// data (HMD deaths may be fractional); the rate may be a tape variable.
template <class R>
auto poisson_logpmf(double k, const R& rate) {
  using std::log;
  if (!(k >= 0.0) || !std::isfinite(k)) throw DomainError("poisson_logpmf requires k >= 0");
  if (!(primal_value(rate) > 0.0)) throw DomainError("poisson_logpmf requires rate > 0");
  if (k == 0.0) return 0.0 * rate - rate;  // avoid 0 * log(rate) at tiny rates
  return k * log(rate) - rate - log_gamma(k + 1.0);
}

// Same pmf parameterized by log(rate); the form every likelihood term uses.
template <class R>
auto poisson_logpmf_from_log(double k, const R& log_rate) {
  using std::exp;
  if (!(k >= 0.0) || !std::isfinite(k)) throw DomainError("poisson_logpmf requires k >= 0");
  if (primal_value(log_rate) > max_log_rate)
    throw EvalError("poisson rate overflow: log-rate " +
                    std::to_string(primal_value(log_rate)) + " exceeds " +
                    std::to_string(max_log_rate));
  return k * log_rate - exp(log_rate) - log_gamma(k + 1.0);
}

}  // namespace mortvi
