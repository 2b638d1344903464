#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mortvi/error.hpp"
#include "mortvi/math.hpp"
#include "mortvi/model.hpp"
#include "mortvi/panel.hpp"
#include "mortvi/tape.hpp"

namespace mortvi {

// Autoregressive Gaussian posterior over the latent path:
//   X~_{i,t} = mu_x_{i,t} + alpha_{i,t} X~_{i,t-1} + sx_i z
//   K~_{i,t} = mu_k_{i,t} + beta_{i,t} K~_{i,t-1} + rho_{i,t} X~_{i,t-1} + sk_i z'
// with the lag terms dropped at t = 0. The innovation sds are per factor only
// (time-invariant) and stored pre-softplus. Time-indexed arrays are
// factor-major: entry (i, t) sits at [i*n_steps + t].
template <class S>
struct GuideParamsT {
  int n_factors = 0;
  int n_steps = 0;
  std::vector<S> mu_x;   // d x T
  std::vector<S> alpha;  // d x T
  std::vector<S> mu_k;   // d x T
  std::vector<S> beta;   // d x T
  std::vector<S> rho;    // d x T
  std::vector<S> sx_u;   // d, pre-softplus
  std::vector<S> sk_u;   // d, pre-softplus

  std::size_t at(int i, int t) const { return static_cast<std::size_t>(i) * n_steps + t; }
};

using GuideParams = GuideParamsT<double>;

template <class S>
inline void validate_guide(const GuideParamsT<S>& g) {
  const auto dt = static_cast<std::size_t>(g.n_factors) * g.n_steps;
  if (g.n_factors < 1 || g.n_steps < 1) throw ShapeError("guide needs n_factors >= 1, n_steps >= 1");
  if (g.mu_x.size() != dt || g.alpha.size() != dt || g.mu_k.size() != dt || g.beta.size() != dt ||
      g.rho.size() != dt)
    throw ShapeError("guide time-indexed array size mismatch");
  if (g.sx_u.size() != static_cast<std::size_t>(g.n_factors) ||
      g.sk_u.size() != static_cast<std::size_t>(g.n_factors))
    throw ShapeError("guide sd vector size mismatch");
}

// Exact log q(path): the product of the per-step Gaussian conditionals from
// the recursion above.
template <class S>
S path_logdensity(const GuideParamsT<S>& g, const PathT<S>& path) {
  validate_guide(g);
  if (path.n_factors != g.n_factors || path.n_steps != g.n_steps)
    throw ShapeError("path shape does not match guide");

  std::vector<S> terms;
  terms.reserve(static_cast<std::size_t>(2) * g.n_factors * g.n_steps);
  for (int i = 0; i < g.n_factors; ++i) {
    const auto sx = softplus(g.sx_u[i]);
    const auto sk = softplus(g.sk_u[i]);
    for (int t = 0; t < g.n_steps; ++t) {
      const auto j = g.at(i, t);
      S mean_x = g.mu_x[j];
      S mean_k = g.mu_k[j];
      if (t > 0) {
        mean_x = g.mu_x[j] + g.alpha[j] * path.x(i, t - 1);
        mean_k = g.mu_k[j] + g.beta[j] * path.k(i, t - 1) + g.rho[j] * path.x(i, t - 1);
      }
      terms.push_back(gaussian_logpdf(path.x(i, t), mean_x, sx));
      terms.push_back(gaussian_logpdf(path.k(i, t), mean_k, sk));
    }
  }
  return detail::sum_all(std::span<const S>(terms));
}

template <class S>
struct GuideSample {
  PathT<S> path;
  S logq;
};

// Reparameterized draw: the noise layout is z_X at [i*n_steps + t] followed by
// z_K in the same layout, 2*d*n_steps entries total. logq is computed by
// path_logdensity on the produced path, so the two agree bit-exactly.
template <class S>
GuideSample<S> sample_path(const GuideParamsT<S>& g, std::span<const S> noise) {
  validate_guide(g);
  const int d = g.n_factors;
  const int T = g.n_steps;
  if (noise.size() != static_cast<std::size_t>(2) * d * T)
    throw ShapeError("noise must hold 2*n_factors*n_steps entries");

  GuideSample<S> out;
  out.path = PathT<S>(d, T);
  const std::size_t koff = static_cast<std::size_t>(d) * T;
  for (int i = 0; i < d; ++i) {
    const auto sx = softplus(g.sx_u[i]);
    const auto sk = softplus(g.sk_u[i]);
    for (int t = 0; t < T; ++t) {
      const auto j = g.at(i, t);
      if (t == 0) {
        out.path.x(i, t) = g.mu_x[j] + sx * noise[j];
        out.path.k(i, t) = g.mu_k[j] + sk * noise[koff + j];
      } else {
        out.path.x(i, t) = g.mu_x[j] + g.alpha[j] * out.path.x(i, t - 1) + sx * noise[j];
        out.path.k(i, t) = g.mu_k[j] + g.beta[j] * out.path.k(i, t - 1) +
                           g.rho[j] * out.path.x(i, t - 1) + sk * noise[koff + j];
      }
    }
  }
  out.logq = path_logdensity(g, out.path);
  return out;
}

// The final time-slice of one factor: marginally Gaussian under the guide.
struct Gaussian2 {
  double mean_x = 0.0;
  double mean_k = 0.0;
  double sd_x = 0.0;
  double sd_k = 0.0;
  double corr = 0.0;

  double var_x() const { return sd_x * sd_x; }
  double var_k() const { return sd_k * sd_k; }
  double cov_xk() const { return corr * sd_x * sd_k; }
};

// Exact marginal of (X~_{i,T-1}, K~_{i,T-1}) per factor: the recursion is
// linear-Gaussian, so means and 2x2 covariances propagate in closed form.
inline std::vector<Gaussian2> final_state_distribution(const GuideParams& g) {
  validate_guide(g);
  std::vector<Gaussian2> out(g.n_factors);
  for (int i = 0; i < g.n_factors; ++i) {
    const double sx = softplus(g.sx_u[i]);
    const double sk = softplus(g.sk_u[i]);
    double mx = g.mu_x[g.at(i, 0)];
    double mk = g.mu_k[g.at(i, 0)];
    double vxx = sx * sx, vkk = sk * sk, vxk = 0.0;
    for (int t = 1; t < g.n_steps; ++t) {
      const auto j = g.at(i, t);
      const double a = g.alpha[j], b = g.beta[j], r = g.rho[j];
      const double nmx = g.mu_x[j] + a * mx;
      const double nmk = g.mu_k[j] + b * mk + r * mx;
      const double nvxx = a * a * vxx + sx * sx;
      const double nvxk = a * (r * vxx + b * vxk);
      const double nvkk = r * r * vxx + 2.0 * b * r * vxk + b * b * vkk + sk * sk;
      mx = nmx;
      mk = nmk;
      vxx = nvxx;
      vxk = nvxk;
      vkk = nvkk;
    }
    out[i].mean_x = mx;
    out[i].mean_k = mk;
    out[i].sd_x = std::sqrt(vxx);
    out[i].sd_k = std::sqrt(vkk);
    out[i].corr = vxk / (out[i].sd_x * out[i].sd_k);
  }
  return out;
}

// ---- Parameter plumbing ----------------------------------------------------

template <class S, class F>
void for_each_guide_vector(GuideParamsT<S>& g, F&& f) {
  f(g.mu_x);
  f(g.alpha);
  f(g.mu_k);
  f(g.beta);
  f(g.rho);
  f(g.sx_u);
  f(g.sk_u);
}

template <class S, class F>
void for_each_guide_vector(const GuideParamsT<S>& g, F&& f) {
  for_each_guide_vector(const_cast<GuideParamsT<S>&>(g), [&](auto& v) { f(std::as_const(v)); });
}

inline std::size_t guide_param_count(const GuideParams& g) {
  std::size_t n = 0;
  for_each_guide_vector(g, [&](const std::vector<double>& v) { n += v.size(); });
  return n;
}

inline std::vector<double> flatten_guide(const GuideParams& g) {
  std::vector<double> out;
  out.reserve(guide_param_count(g));
  for_each_guide_vector(g, [&](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); });
  return out;
}

inline void unflatten_guide(GuideParams& g, std::span<const double> flat) {
  std::size_t at = 0;
  for_each_guide_vector(g, [&](std::vector<double>& v) {
    if (at + v.size() > flat.size()) throw ShapeError("flat guide vector too short");
    std::copy(flat.begin() + at, flat.begin() + at + v.size(), v.begin());
    at += v.size();
  });
  if (at != flat.size()) throw ShapeError("flat guide vector too long");
}

inline GuideParamsT<Var> lift_guide(Tape& tape, const GuideParams& g) {
  GuideParamsT<Var> out;
  out.n_factors = g.n_factors;
  out.n_steps = g.n_steps;
  std::vector<const std::vector<double>*> src;
  for_each_guide_vector(g, [&](const std::vector<double>& v) { src.push_back(&v); });
  std::size_t which = 0;
  for_each_guide_vector(out, [&](std::vector<Var>& v) {
    const auto& s = *src[which++];
    v.resize(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) v[j] = tape.leaf(s[j]);
  });
  return out;
}

namespace detail {

// First principal component scores of the age-by-year matrix, via power
// iteration on the age-loading vector. Rows are centered first.
inline std::vector<double> first_pc_scores(const Matrix& y) {
  const int A = y.rows, T = y.cols;
  Matrix c = y;
  for (int a = 0; a < A; ++a) {
    double m = 0.0;
    for (int t = 0; t < T; ++t) m += c(a, t);
    m /= T;
    for (int t = 0; t < T; ++t) c(a, t) -= m;
  }

  std::vector<double> u(A, 1.0 / std::sqrt(static_cast<double>(A)));
  std::vector<double> s(T, 0.0);
  for (int iter = 0; iter < 50; ++iter) {
    for (int t = 0; t < T; ++t) {
      double acc = 0.0;
      for (int a = 0; a < A; ++a) acc += c(a, t) * u[a];
      s[t] = acc;
    }
    double norm = 0.0;
    std::vector<double> nu(A, 0.0);
    for (int a = 0; a < A; ++a) {
      double acc = 0.0;
      for (int t = 0; t < T; ++t) acc += c(a, t) * s[t];
      nu[a] = acc;
      norm += acc * acc;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) return std::vector<double>(T, 0.0);  // centered data is flat
    for (int a = 0; a < A; ++a) u[a] = nu[a] / norm;
  }
  // Fix the sign so the largest-magnitude loading is positive.
  int arg = 0;
  for (int a = 1; a < A; ++a)
    if (std::abs(u[a]) > std::abs(u[arg])) arg = a;
  const double sign = u[arg] < 0.0 ? -1.0 : 1.0;
  for (int t = 0; t < T; ++t) {
    double acc = 0.0;
    for (int a = 0; a < A; ++a) acc += c(a, t) * u[a];
    s[t] = sign * acc;
  }
  return s;
}

}  // namespace detail

// Start the guide from a crude signal: factor 0's level offsets follow the
// first principal component of the smoothed empirical log-rates, AR
// coefficients start at 0 and sds at 0.1.
inline GuideParams init_guide_params(int n_factors, const MortalityPanel& train) {
  if (n_factors < 1) throw ConfigError("latent dimension must be >= 1");
  GuideParams g;
  g.n_factors = n_factors;
  g.n_steps = train.n_years();
  const auto dt = static_cast<std::size_t>(n_factors) * g.n_steps;
  g.mu_x.assign(dt, 0.0);
  g.alpha.assign(dt, 0.0);
  g.mu_k.assign(dt, 0.0);
  g.beta.assign(dt, 0.0);
  g.rho.assign(dt, 0.0);
  g.sx_u.assign(n_factors, softplus_inv(0.1));
  g.sk_u.assign(n_factors, softplus_inv(0.1));

  Matrix y(train.n_ages(), train.n_years());
  for (int a = 0; a < train.n_ages(); ++a)
    for (int t = 0; t < train.n_years(); ++t)
      y(a, t) = std::log((train.deaths(a, t) + 0.5) / (train.exposures(a, t) + 0.5));
  const auto scores = detail::first_pc_scores(y);
  for (int t = 0; t < g.n_steps; ++t) g.mu_x[g.at(0, t)] = scores[t];
  return g;
}

}  // namespace mortvi
