#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mortvi/error.hpp"
#include "mortvi/guide.hpp"
#include "mortvi/math.hpp"
#include "mortvi/model.hpp"
#include "mortvi/panel.hpp"
#include "mortvi/rng.hpp"

namespace mortvi {

// Per-factor Gaussian marginals of the latent state at horizons 0..horizon,
// h = 0 being the fitted final year. The dynamics are kept alongside so
// predictive sampling can walk full joint paths instead of stitching
// independent per-horizon draws.
struct LatentForecast {
  int n_factors = 0;
  int horizon = 0;
  std::vector<Gaussian2> marginals;  // (horizon+1) x n_factors, horizon-major
  DynParams dyn;                     // unconstrained, as fitted

  const Gaussian2& at(int h, int i) const {
    return marginals[static_cast<std::size_t>(h) * n_factors + i];
  }
};

// Closed-form moment propagation through the linear-Gaussian system
//   X' = X + K + U,  K' = mu + phi (K - mu) + V.
inline LatentForecast forecast_latent(std::span<const Gaussian2> final_state,
                                      const DynParams& dyn, int horizon) {
  const int d = dyn.n_factors();
  if (horizon < 1) throw ConfigError("forecast horizon must be >= 1");
  if (static_cast<int>(final_state.size()) != d)
    throw ShapeError("final state factor count does not match dynamics");

  LatentForecast out;
  out.n_factors = d;
  out.horizon = horizon;
  out.dyn = dyn;
  out.marginals.resize(static_cast<std::size_t>(horizon + 1) * d);
  for (int i = 0; i < d; ++i) out.marginals[i] = final_state[i];

  for (int i = 0; i < d; ++i) {
    const double mu = dyn.mu[i];
    const double phi = logistic(dyn.phi_u[i]);
    const double vx = square(softplus(dyn.sx_u[i]));
    const double vk = square(softplus(dyn.sk_u[i]));
    double mx = final_state[i].mean_x, mk = final_state[i].mean_k;
    double vxx = final_state[i].var_x(), vkk = final_state[i].var_k();
    double vxk = final_state[i].cov_xk();
    for (int h = 1; h <= horizon; ++h) {
      const double nmx = mx + mk;
      const double nmk = mu + phi * (mk - mu);
      const double nvxx = vxx + 2.0 * vxk + vkk + vx;
      const double nvxk = phi * (vxk + vkk);
      const double nvkk = phi * phi * vkk + vk;
      mx = nmx;
      mk = nmk;
      vxx = nvxx;
      vxk = nvxk;
      vkk = nvkk;
      auto& g = out.marginals[static_cast<std::size_t>(h) * d + i];
      g.mean_x = mx;
      g.mean_k = mk;
      g.sd_x = std::sqrt(vxx);
      g.sd_k = std::sqrt(vkk);
      g.corr = (g.sd_x > 0.0 && g.sd_k > 0.0) ? vxk / (g.sd_x * g.sd_k) : 0.0;
    }
  }
  return out;
}

// Mixture-of-Poissons predictive for death counts: M sampled rate surfaces,
// one per latent sample path. Cells are indexed by age a and 0-based horizon
// column h (calendar horizon h+1). Zero-exposure cells are point masses at 0.
struct PredictiveDeaths {
  int n_ages = 0;
  int horizon = 0;    // number of forecast years
  int n_samples = 0;  // M
  std::vector<double> log_rates;       // [(h*M + m)*n_ages + a]
  std::vector<unsigned char> present;  // per (h*n_ages + a): exposure > 0

  bool included(int age, int h) const {
    return present[static_cast<std::size_t>(h) * n_ages + age] != 0;
  }

  std::span<const double> sample_log_rates(int h, int m) const {
    return {log_rates.data() + (static_cast<std::size_t>(h) * n_samples + m) * n_ages,
            static_cast<std::size_t>(n_ages)};
  }

  // log P(D = k) under the equally-weighted Poisson mixture.
  double logpmf(int age, int h, double k) const {
    if (!(k >= 0.0)) throw DomainError("predictive logpmf requires k >= 0");
    if (!included(age, h)) return k == 0.0 ? 0.0 : neg_infinity;
    const double lg = log_gamma(k + 1.0);
    double m = neg_infinity;
    std::vector<double> terms(static_cast<std::size_t>(n_samples));
    for (int s = 0; s < n_samples; ++s) {
      const double lr = log_rates[(static_cast<std::size_t>(h) * n_samples + s) * n_ages + age];
      terms[s] = k * lr - std::exp(lr) - lg;
      m = std::max(m, terms[s]);
    }
    if (m == neg_infinity) return neg_infinity;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - m);
    return m + std::log(acc) - std::log(static_cast<double>(n_samples));
  }

  // Predictive mean deaths: the mixture mean (1/M) sum_m rate.
  double mean_deaths(int age, int h) const {
    if (!included(age, h)) return 0.0;
    double acc = 0.0;
    for (int s = 0; s < n_samples; ++s)
      acc += std::exp(log_rates[(static_cast<std::size_t>(h) * n_samples + s) * n_ages + age]);
    return acc / static_cast<double>(n_samples);
  }
};

// Draws M full latent paths (start state then a joint walk over all horizons,
// preserving temporal dependence within each sample), maps them through the
// emission, and fills the rate grid. Deterministic given the seed: per sample,
// the start draws come factor-by-factor, then each horizon draws U before V.
inline PredictiveDeaths forecast_deaths(const LatentForecast& fc, const Emission& emission,
                                        const Matrix& exposures, int M, std::uint64_t seed) {
  validate_emission(emission);
  if (M < 1) throw ConfigError("forecast needs M >= 1 samples");
  if (exposures.rows != emission.n_ages) throw ShapeError("exposure rows != emission ages");
  if (exposures.cols != fc.horizon) throw ShapeError("exposure columns != forecast horizon");
  if (fc.n_factors != emission.n_factors) throw ShapeError("forecast/emission factor mismatch");

  const int d = fc.n_factors, H = fc.horizon, A = emission.n_ages;
  PredictiveDeaths out;
  out.n_ages = A;
  out.horizon = H;
  out.n_samples = M;
  out.log_rates.assign(static_cast<std::size_t>(H) * M * A, neg_infinity);
  out.present.assign(static_cast<std::size_t>(H) * A, 0);
  for (int h = 0; h < H; ++h)
    for (int a = 0; a < A; ++a)
      out.present[static_cast<std::size_t>(h) * A + a] = exposures(a, h) > 0.0 ? 1 : 0;

  std::vector<double> phi(d), sx(d), sk(d);
  for (int i = 0; i < d; ++i) {
    phi[i] = logistic(fc.dyn.phi_u[i]);
    sx[i] = softplus(fc.dyn.sx_u[i]);
    sk[i] = softplus(fc.dyn.sk_u[i]);
  }

  const auto L = emission_loadings(emission);
  Rng rng(seed);
  std::vector<double> x(d), k(d);
  for (int m = 0; m < M; ++m) {
    for (int i = 0; i < d; ++i) {
      const Gaussian2& g = fc.at(0, i);
      const double z1 = rng.normal(), z2 = rng.normal();
      x[i] = g.mean_x + g.sd_x * z1;
      const double c = std::clamp(g.corr, -1.0, 1.0);
      k[i] = g.mean_k + g.sd_k * (c * z1 + std::sqrt(1.0 - c * c) * z2);
    }
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < d; ++i) {
        const double nx = x[i] + k[i] + sx[i] * rng.normal();
        const double nk = fc.dyn.mu[i] + phi[i] * (k[i] - fc.dyn.mu[i]) + sk[i] * rng.normal();
        x[i] = nx;
        k[i] = nk;
      }
      const auto f = log_rates_at(L, std::span<const double>(x));
      double* row = out.log_rates.data() + (static_cast<std::size_t>(h) * M + m) * A;
      for (int a = 0; a < A; ++a) {
        if (!out.included(a, h)) continue;
        const double lr = std::log(exposures(a, h)) + f[a];
        if (lr > max_log_rate) throw EvalError("forecast rate overflows");
        row[a] = lr;
      }
    }
  }
  return out;
}

// Realized-rate summary per cell: mean, sd, and optional quantiles of
// deaths/exposure with deaths drawn from each sampled rate, plus the exact
// mixture mean of deaths. Matches the predictive-deaths sampling stream for
// the rates and uses a derived stream for the Poisson draws.
struct RateForecast {
  int n_ages = 0;
  int horizon = 0;
  std::vector<double> mean_rate;        // per (h*n_ages + a)
  std::vector<double> sd_rate;
  std::vector<double> mean_deaths;
  std::vector<double> quantile_probs;
  std::vector<double> quantiles;        // [(h*n_ages + a)*nq + q]

  double at(const std::vector<double>& v, int age, int h) const {
    return v[static_cast<std::size_t>(h) * n_ages + age];
  }
};

inline RateForecast forecast_rates(const LatentForecast& fc, const Emission& emission,
                                   const Matrix& exposures, int M, std::uint64_t seed,
                                   std::span<const double> quantile_probs = {}) {
  for (double p : quantile_probs)
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("quantile probabilities must lie in (0, 1)");
  const PredictiveDeaths pred = forecast_deaths(fc, emission, exposures, M, seed);
  const int A = pred.n_ages, H = pred.horizon;

  RateForecast out;
  out.n_ages = A;
  out.horizon = H;
  out.mean_rate.assign(static_cast<std::size_t>(H) * A, 0.0);
  out.sd_rate.assign(static_cast<std::size_t>(H) * A, 0.0);
  out.mean_deaths.assign(static_cast<std::size_t>(H) * A, 0.0);
  out.quantile_probs.assign(quantile_probs.begin(), quantile_probs.end());
  out.quantiles.assign(static_cast<std::size_t>(H) * A * quantile_probs.size(), 0.0);

  Rng rng(seed + 1);  // forecast_deaths consumed Rng(seed)
  std::vector<double> draws(M);
  for (int h = 0; h < H; ++h)
    for (int a = 0; a < A; ++a) {
      const std::size_t cell = static_cast<std::size_t>(h) * A + a;
      if (!pred.included(a, h)) continue;
      const double e = exposures(a, h);
      double sum = 0.0, sumsq = 0.0, rates = 0.0;
      for (int m = 0; m < M; ++m) {
        const double lam =
            std::exp(pred.log_rates[(static_cast<std::size_t>(h) * M + m) * A + a]);
        rates += lam;
        const double r = static_cast<double>(rng.poisson(lam)) / e;
        draws[m] = r;
        sum += r;
        sumsq += r * r;
      }
      out.mean_rate[cell] = sum / M;
      out.mean_deaths[cell] = rates / M;
      if (M > 1) {
        const double var = std::max(0.0, (sumsq - sum * sum / M) / (M - 1));
        out.sd_rate[cell] = std::sqrt(var);
      }
      if (!quantile_probs.empty()) {
        std::sort(draws.begin(), draws.end());
        for (std::size_t q = 0; q < quantile_probs.size(); ++q) {
          // nearest-rank quantile on the sorted draws
          const double pos = quantile_probs[q] * (M - 1);
          const std::size_t lo = static_cast<std::size_t>(pos);
          const double frac = pos - static_cast<double>(lo);
          const double val = lo + 1 < static_cast<std::size_t>(M)
                                 ? draws[lo] * (1.0 - frac) + draws[lo + 1] * frac
                                 : draws[lo];
          out.quantiles[cell * quantile_probs.size() + q] = val;
        }
      }
    }
  return out;
}

}  // namespace mortvi
