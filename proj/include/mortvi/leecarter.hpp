#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mortvi/error.hpp"
#include "mortvi/forecast.hpp"
#include "mortvi/math.hpp"
#include "mortvi/panel.hpp"
#include "mortvi/rng.hpp"

namespace mortvi {

// eta_{a,t} = alpha_a + beta_a kappa_t, normalized to sum(beta) = 1 and
// sum(kappa) = 0; kappa extrapolates as a random walk with drift.
struct LeeCarterParams {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> kappa;
  double drift = 0.0;
  double rw_sd = 0.0;

  int n_ages() const { return static_cast<int>(alpha.size()); }
  int n_years() const { return static_cast<int>(kappa.size()); }
};

inline double lee_carter_loglik(const MortalityPanel& panel, const LeeCarterParams& p) {
  double acc = 0.0;
  for (int a = 0; a < panel.n_ages(); ++a)
    for (int t = 0; t < panel.n_years(); ++t) {
      if (!panel.included(a, t)) continue;
      const double eta = p.alpha[a] + p.beta[a] * p.kappa[t];
      const double lam = panel.exposures(a, t) * std::exp(eta);
      acc += panel.deaths(a, t) * std::log(lam) - lam - log_gamma(panel.deaths(a, t) + 1.0);
    }
  return acc;
}

// Rescales to the identification constraints sum(beta) = 1, sum(kappa) = 0.
// The fitted rates eta_{a,t} are unchanged: the kappa mean moves into alpha
// and the beta scale moves into kappa.
inline void normalize_lee_carter(LeeCarterParams& p) {
  const int A = p.n_ages(), T = p.n_years();
  double bsum = 0.0;
  for (double b : p.beta) bsum += b;
  if (std::abs(bsum) < 1e-10) throw FitError("Lee-Carter loadings collapsed to zero", -1, {});
  double kmean = 0.0;
  for (double k : p.kappa) kmean += k;
  kmean /= T;
  for (int a = 0; a < A; ++a) {
    p.alpha[a] += p.beta[a] * kmean;
    p.beta[a] /= bsum;
  }
  for (double& k : p.kappa) k = (k - kmean) * bsum;
}

// Poisson maximum likelihood via alternating unidimensional Newton updates on
// alpha, kappa, beta, iterated until the relative log-likelihood change drops
// below tol. Ages with no training deaths are pinned (shrunk intercept, zero
// loading) since their intercept MLE diverges.
inline LeeCarterParams fit_lee_carter(const MortalityPanel& train, int max_iter = 500,
                                      double tol = 1e-10) {
  const int A = train.n_ages(), T = train.n_years();
  if (T < 2) throw ConfigError("Lee-Carter needs at least 2 training years");

  std::vector<double> dsum(A, 0.0), esum(A, 0.0);
  for (int a = 0; a < A; ++a)
    for (int t = 0; t < T; ++t) {
      dsum[a] += train.deaths(a, t);
      esum[a] += train.exposures(a, t);
    }
  for (int a = 0; a < A; ++a)
    if (esum[a] == 0.0)
      throw DataError("age " + std::to_string(a) + " has no exposure in the training window");

  LeeCarterParams p;
  p.alpha.assign(A, 0.0);
  p.beta.assign(A, 1.0 / A);
  p.kappa.assign(T, 0.0);
  std::vector<bool> active(A, true);
  for (int a = 0; a < A; ++a) {
    if (dsum[a] == 0.0) {
      active[a] = false;
      p.alpha[a] = std::log(0.5 / (esum[a] + 0.5));
      p.beta[a] = 0.0;
    } else {
      p.alpha[a] = std::log(dsum[a] / esum[a]);
    }
  }
  // kappa starts at the per-year average log-rate deviation so the beta
  // update's curvature is nonzero from the first sweep.
  for (int t = 0; t < T; ++t) {
    double acc = 0.0;
    int n = 0;
    for (int a = 0; a < A; ++a) {
      if (!active[a] || !train.included(a, t)) continue;
      acc += std::log((train.deaths(a, t) + 0.5) / train.exposures(a, t)) - p.alpha[a];
      ++n;
    }
    p.kappa[t] = n > 0 ? acc / n : 0.0;
  }

  Matrix lam(A, T);
  auto refresh = [&](int a) {
    for (int t = 0; t < T; ++t)
      lam(a, t) = train.included(a, t)
                      ? train.exposures(a, t) * std::exp(p.alpha[a] + p.beta[a] * p.kappa[t])
                      : 0.0;
  };
  for (int a = 0; a < A; ++a) refresh(a);

  double last = lee_carter_loglik(train, p);
  bool converged = false;
  for (int iter = 0; iter < max_iter && !converged; ++iter) {
    for (int a = 0; a < A; ++a) {
      if (!active[a]) continue;
      double num = 0.0, den = 0.0;
      for (int t = 0; t < T; ++t) {
        num += train.deaths(a, t) - lam(a, t);
        den += lam(a, t);
      }
      if (den > 0.0) {
        p.alpha[a] += num / den;
        refresh(a);
      }
    }
    for (int t = 0; t < T; ++t) {
      double num = 0.0, den = 0.0;
      for (int a = 0; a < A; ++a) {
        if (!active[a]) continue;
        num += p.beta[a] * (train.deaths(a, t) - lam(a, t));
        den += p.beta[a] * p.beta[a] * lam(a, t);
      }
      if (den > 0.0) {
        const double dk = num / den;
        p.kappa[t] += dk;
        for (int a = 0; a < A; ++a)
          if (active[a] && train.included(a, t)) lam(a, t) *= std::exp(p.beta[a] * dk);
      }
    }
    for (int a = 0; a < A; ++a) {
      if (!active[a]) continue;
      double num = 0.0, den = 0.0;
      for (int t = 0; t < T; ++t) {
        num += p.kappa[t] * (train.deaths(a, t) - lam(a, t));
        den += p.kappa[t] * p.kappa[t] * lam(a, t);
      }
      if (den > 1e-12) {
        p.beta[a] += num / den;
        refresh(a);
      }
    }
    const double ll = lee_carter_loglik(train, p);
    if (std::abs(ll - last) < tol * (1.0 + std::abs(ll))) converged = true;
    last = ll;
  }
  if (!converged)
    throw FitError("Lee-Carter did not converge; last log-likelihood " + std::to_string(last),
                   max_iter, {});

  normalize_lee_carter(p);

  p.drift = (p.kappa[T - 1] - p.kappa[0]) / static_cast<double>(T - 1);
  double ssq = 0.0;
  for (int t = 1; t < T; ++t) ssq += square(p.kappa[t] - p.kappa[t - 1] - p.drift);
  p.rw_sd = std::sqrt(ssq / static_cast<double>(T - 1));
  return p;
}

// Random-walk-with-drift extrapolation of kappa, pushed through the same
// Poisson-mixture predictive machinery as the latent-factor models. Each of
// the M samples walks one full kappa path across all horizons.
inline PredictiveDeaths forecast_lee_carter(const LeeCarterParams& p, int horizon, int M,
                                            std::uint64_t seed, const Matrix& exposures) {
  if (horizon < 1) throw ConfigError("forecast horizon must be >= 1");
  if (M < 1) throw ConfigError("forecast needs M >= 1 samples");
  if (exposures.rows != p.n_ages()) throw ShapeError("exposure rows != age count");
  if (exposures.cols != horizon) throw ShapeError("exposure columns != horizon");

  const int A = p.n_ages();
  PredictiveDeaths out;
  out.n_ages = A;
  out.horizon = horizon;
  out.n_samples = M;
  out.log_rates.assign(static_cast<std::size_t>(horizon) * M * A, neg_infinity);
  out.present.assign(static_cast<std::size_t>(horizon) * A, 0);
  for (int h = 0; h < horizon; ++h)
    for (int a = 0; a < A; ++a)
      out.present[static_cast<std::size_t>(h) * A + a] = exposures(a, h) > 0.0 ? 1 : 0;

  Rng rng(seed);
  for (int m = 0; m < M; ++m) {
    double kappa = p.kappa[p.n_years() - 1];
    for (int h = 0; h < horizon; ++h) {
      kappa += p.drift + p.rw_sd * rng.normal();
      double* row = out.log_rates.data() + (static_cast<std::size_t>(h) * M + m) * A;
      for (int a = 0; a < A; ++a) {
        if (!out.included(a, h)) continue;
        const double lr = std::log(exposures(a, h)) + p.alpha[a] + p.beta[a] * kappa;
        if (lr > max_log_rate) throw EvalError("forecast rate overflows");
        row[a] = lr;
      }
    }
  }
  return out;
}

}  // namespace mortvi
