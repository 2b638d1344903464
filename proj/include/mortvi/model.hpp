#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mortvi/error.hpp"
#include "mortvi/math.hpp"
#include "mortvi/panel.hpp"
#include "mortvi/rng.hpp"
#include "mortvi/tape.hpp"

namespace mortvi {

// Diffuse prior sd for the initial latent state (X_0, K_0).
inline constexpr double init_prior_sd = 10.0;

enum class EmissionKind { affine, rbf };

inline EmissionKind parse_emission_kind(std::string_view s) {
  if (s == "affine") return EmissionKind::affine;
  if (s == "rbf") return EmissionKind::rbf;
  throw ConfigError("unknown emission kind: " + std::string(s));
}

inline const char* emission_kind_name(EmissionKind k) {
  return k == EmissionKind::affine ? "affine" : "rbf";
}

// Latent dynamics, one entry per factor, stored unconstrained:
//   persistence phi = logistic(phi_u) in (0,1), noise sds = softplus(s*_u).
template <class S>
struct DynParamsT {
  std::vector<S> mu;     // trend long-run mean, per year
  std::vector<S> phi_u;  // persistence, pre-logistic
  std::vector<S> sx_u;   // level innovation sd, pre-softplus
  std::vector<S> sk_u;   // trend innovation sd, pre-softplus

  int n_factors() const { return static_cast<int>(mu.size()); }
};

using DynParams = DynParamsT<double>;

// Map from latent factors to per-age log-rates. Affine stores the loading
// matrix directly; the radial-basis variant parameterizes the age loadings
// through n_basis bumps with trainable weights and centers and a fixed width.
template <class S>
struct EmissionT {
  EmissionKind kind = EmissionKind::affine;
  int n_ages = 0;
  int n_factors = 0;
  int n_basis = 0;    // radial-basis count, 0 for affine
  double tau = 10.0;  // kernel width scale, not trainable

  std::vector<S> A;        // affine loadings, n_ages x n_factors row-major
  std::vector<S> w;        // basis weights, n_basis x n_factors row-major
  std::vector<S> centers;  // basis centers in age units, n_basis
  std::vector<S> b;        // per-age intercept, n_ages
};

using Emission = EmissionT<double>;

template <class S>
inline void validate_emission(const EmissionT<S>& e) {
  if (e.n_ages < 1 || e.n_factors < 1) throw ShapeError("emission needs n_ages >= 1, n_factors >= 1");
  if (e.b.size() != static_cast<std::size_t>(e.n_ages)) throw ShapeError("emission intercept size mismatch");
  if (e.kind == EmissionKind::affine) {
    if (e.A.size() != static_cast<std::size_t>(e.n_ages) * e.n_factors)
      throw ShapeError("affine loading matrix size mismatch");
  } else {
    if (e.n_basis < 1) throw ConfigError("radial-basis emission needs n_basis >= 1");
    if (!(e.tau > 0.0)) throw ConfigError("kernel width tau must be positive");
    if (e.w.size() != static_cast<std::size_t>(e.n_basis) * e.n_factors)
      throw ShapeError("basis weight matrix size mismatch");
    if (e.centers.size() != static_cast<std::size_t>(e.n_basis))
      throw ShapeError("basis center vector size mismatch");
  }
}

template <class S>
struct ParamsT {
  EmissionT<S> emission;
  DynParamsT<S> dyn;
};

using Params = ParamsT<double>;

// Latent level/trend path, factor-major: entry (i, t) sits at [i*n_steps + t].
template <class S>
struct PathT {
  int n_factors = 0;
  int n_steps = 0;  // number of time points, t = 0..n_steps-1
  std::vector<S> X;
  std::vector<S> K;

  PathT() = default;
  PathT(int d, int steps)
      : n_factors(d),
        n_steps(steps),
        X(static_cast<std::size_t>(d) * steps),
        K(static_cast<std::size_t>(d) * steps) {}

  S& x(int i, int t) { return X[static_cast<std::size_t>(i) * n_steps + t]; }
  const S& x(int i, int t) const { return X[static_cast<std::size_t>(i) * n_steps + t]; }
  S& k(int i, int t) { return K[static_cast<std::size_t>(i) * n_steps + t]; }
  const S& k(int i, int t) const { return K[static_cast<std::size_t>(i) * n_steps + t]; }
};

using Path = PathT<double>;

namespace detail {

inline double sum_all(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc;
}

inline Var sum_all(std::span<const Var> xs) { return xs.front().tape()->sum(xs); }

}  // namespace detail

// Effective per-age loadings: log-rate_a = dot(A_eff row a, x) + b_a. For the
// affine kind this is the stored matrix; for radial basis it is assembled from
// the kernel grid once and reused across time steps.
template <class S>
struct EmissionLoadings {
  int n_ages = 0;
  int n_factors = 0;
  std::vector<S> A;  // n_ages x n_factors row-major
  std::vector<S> b;  // n_ages
};

template <class S>
EmissionLoadings<S> emission_loadings(const EmissionT<S>& e) {
  validate_emission(e);
  EmissionLoadings<S> out;
  out.n_ages = e.n_ages;
  out.n_factors = e.n_factors;
  out.b = e.b;
  if (e.kind == EmissionKind::affine) {
    out.A = e.A;
    return out;
  }

  using std::exp;
  const int p = e.n_basis;
  const int d = e.n_factors;
  const double scale = e.tau / static_cast<double>(e.n_ages);

  // w columns gathered once; w is basis-major so columns are strided.
  std::vector<std::vector<S>> wcol(d);
  for (int j = 0; j < d; ++j) {
    wcol[j].reserve(p);
    for (int i = 0; i < p; ++i) wcol[j].push_back(e.w[static_cast<std::size_t>(i) * d + j]);
  }

  out.A.reserve(static_cast<std::size_t>(e.n_ages) * d);
  std::vector<S> kern(p, e.centers[0]);
  for (int a = 0; a < e.n_ages; ++a) {
    for (int i = 0; i < p; ++i) {
      auto u = (static_cast<double>(a) - e.centers[i]) * scale;
      kern[i] = exp(-square(u));
    }
    for (int j = 0; j < d; ++j)
      out.A.push_back(dot(std::span<const S>(kern), std::span<const S>(wcol[j])));
  }
  return out;
}

template <class S>
std::vector<S> log_rates_at(const EmissionLoadings<S>& L, std::span<const S> x) {
  if (static_cast<int>(x.size()) != L.n_factors) throw ShapeError("factor vector length mismatch");
  std::vector<S> out;
  out.reserve(L.n_ages);
  for (int a = 0; a < L.n_ages; ++a) {
    std::span<const S> row(L.A.data() + static_cast<std::size_t>(a) * L.n_factors, L.n_factors);
    out.push_back(dot(row, x) + L.b[a]);
  }
  return out;
}

template <class S>
std::vector<S> emission_apply(std::span<const S> x, const EmissionT<S>& e) {
  return log_rates_at(emission_loadings(e), x);
}

template <class S>
std::vector<S> emission_affine(std::span<const S> x, const EmissionT<S>& e) {
  if (e.kind != EmissionKind::affine) throw ConfigError("emission is not affine");
  return emission_apply(x, e);
}

template <class S>
std::vector<S> emission_rbf(std::span<const S> x, const EmissionT<S>& e) {
  if (e.kind != EmissionKind::rbf) throw ConfigError("emission is not radial-basis");
  return emission_apply(x, e);
}

// log p(path | dyn): diffuse Gaussian prior on (X_0, K_0), then
//   X_t ~ N(X_{t-1} + K_{t-1}, sx^2),  K_t ~ N(mu + phi (K_{t-1} - mu), sk^2).
template <class S>
S transition_logdensity(const PathT<S>& path, const DynParamsT<S>& dyn,
                        double init_sd = init_prior_sd) {
  const int d = path.n_factors;
  const int T = path.n_steps;
  if (d < 1 || T < 1) throw ShapeError("path must hold at least one factor and time point");
  if (dyn.n_factors() != d || static_cast<int>(dyn.phi_u.size()) != d ||
      static_cast<int>(dyn.sx_u.size()) != d || static_cast<int>(dyn.sk_u.size()) != d)
    throw ShapeError("dynamics parameter count does not match path factors");

  std::vector<S> terms;
  terms.reserve(static_cast<std::size_t>(2) * d * T);
  for (int i = 0; i < d; ++i) {
    const auto phi = logistic(dyn.phi_u[i]);
    const auto sx = softplus(dyn.sx_u[i]);
    const auto sk = softplus(dyn.sk_u[i]);
    terms.push_back(gaussian_logpdf(path.x(i, 0), 0.0, init_sd));
    terms.push_back(gaussian_logpdf(path.k(i, 0), 0.0, init_sd));
    for (int t = 1; t < T; ++t) {
      terms.push_back(gaussian_logpdf(path.x(i, t), path.x(i, t - 1) + path.k(i, t - 1), sx));
      terms.push_back(
          gaussian_logpdf(path.k(i, t), dyn.mu[i] + phi * (path.k(i, t - 1) - dyn.mu[i]), sk));
    }
  }
  return detail::sum_all(std::span<const S>(terms));
}

// log p(deaths | path): independent Poisson cells with rate E exp(f(X_t));
// zero-exposure cells carry no term. Returns 0 only when some cell exists.
template <class S>
S observation_logdensity(const PathT<S>& path, const EmissionT<S>& emission,
                         const MortalityPanel& panel) {
  if (emission.n_ages != panel.n_ages()) throw ShapeError("emission/panel age count mismatch");
  if (path.n_steps != panel.n_years()) throw ShapeError("path/panel year count mismatch");
  if (path.n_factors != emission.n_factors) throw ShapeError("path/emission factor mismatch");

  const auto L = emission_loadings(emission);
  const int d = path.n_factors;
  std::vector<S> terms;
  terms.reserve(static_cast<std::size_t>(panel.n_ages()) * panel.n_years());
  std::vector<S> xcol(d, path.X[0]);
  for (int t = 0; t < panel.n_years(); ++t) {
    for (int i = 0; i < d; ++i) xcol[i] = path.x(i, t);
    for (int a = 0; a < panel.n_ages(); ++a) {
      if (!panel.included(a, t)) continue;
      std::span<const S> row(L.A.data() + static_cast<std::size_t>(a) * d, d);
      auto log_rate = dot(row, std::span<const S>(xcol), std::log(panel.exposures(a, t))) + L.b[a];
      terms.push_back(poisson_logpmf_from_log(panel.deaths(a, t), log_rate));
    }
  }
  if (terms.empty()) {
    if constexpr (std::is_same_v<S, double>) return 0.0;
    else return path.X[0].tape()->constant(0.0);
  }
  return detail::sum_all(std::span<const S>(terms));
}

template <class S>
S joint_logdensity(const PathT<S>& path, const ParamsT<S>& params, const MortalityPanel& panel,
                   double init_sd = init_prior_sd) {
  return transition_logdensity(path, params.dyn, init_sd) +
         observation_logdensity(path, params.emission, panel);
}

// ---- Simulation ------------------------------------------------------------

struct SimOutput {
  Path path;
  Matrix deaths;
};

// Runs the generative model forward. Empty x0/k0 draw the initial state from
// the diffuse prior; otherwise the given values are used exactly. Draw order
// is fixed (init states, then per-step U before V, then deaths year-major) so
// a seed pins the whole output.
inline SimOutput simulate(const Params& params, const Matrix& exposures, std::uint64_t seed,
                          std::span<const double> x0 = {}, std::span<const double> k0 = {}) {
  validate_emission(params.emission);
  const int d = params.dyn.n_factors();
  const int T = exposures.cols;
  const int n_ages = exposures.rows;
  if (n_ages != params.emission.n_ages) throw ShapeError("exposure rows != emission ages");
  if (d != params.emission.n_factors) throw ShapeError("dynamics/emission factor mismatch");
  if (!x0.empty() && static_cast<int>(x0.size()) != d) throw ShapeError("x0 length mismatch");
  if (!k0.empty() && static_cast<int>(k0.size()) != d) throw ShapeError("k0 length mismatch");

  Rng rng(seed);
  SimOutput out;
  out.path = Path(d, T);
  out.deaths = Matrix(n_ages, T);

  std::vector<double> phi(d), sx(d), sk(d);
  for (int i = 0; i < d; ++i) {
    phi[i] = logistic(params.dyn.phi_u[i]);
    sx[i] = softplus(params.dyn.sx_u[i]);
    sk[i] = softplus(params.dyn.sk_u[i]);
  }

  for (int i = 0; i < d; ++i) {
    out.path.x(i, 0) = x0.empty() ? init_prior_sd * rng.normal() : x0[i];
    out.path.k(i, 0) = k0.empty() ? init_prior_sd * rng.normal() : k0[i];
  }
  for (int t = 1; t < T; ++t)
    for (int i = 0; i < d; ++i) {
      out.path.x(i, t) = out.path.x(i, t - 1) + out.path.k(i, t - 1) + sx[i] * rng.normal();
      out.path.k(i, t) =
          params.dyn.mu[i] + phi[i] * (out.path.k(i, t - 1) - params.dyn.mu[i]) + sk[i] * rng.normal();
    }

  const auto L = emission_loadings(params.emission);
  std::vector<double> xcol(d);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < d; ++i) xcol[i] = out.path.x(i, t);
    const auto f = log_rates_at(L, std::span<const double>(xcol));
    for (int a = 0; a < n_ages; ++a) {
      const double e = exposures(a, t);
      if (e <= 0.0) continue;  // excluded cell, no deaths
      const double log_rate = std::log(e) + f[a];
      if (log_rate > max_log_rate) throw EvalError("simulated rate overflows");
      out.deaths(a, t) = static_cast<double>(rng.poisson(std::exp(log_rate)));
    }
  }
  return out;
}

// ---- Parameter plumbing ----------------------------------------------------

struct ModelSpec {
  EmissionKind kind = EmissionKind::affine;
  int n_ages = 0;
  int n_factors = 1;
  int n_basis = 0;
  double tau = 10.0;
};

inline void validate_model_spec(const ModelSpec& spec) {
  if (spec.n_ages < 1) throw ConfigError("model needs n_ages >= 1");
  if (spec.n_factors < 1) throw ConfigError("latent dimension must be >= 1");
  if (spec.kind == EmissionKind::rbf && spec.n_basis < 1)
    throw ConfigError("radial-basis emission needs a positive basis count");
  if (spec.kind == EmissionKind::rbf && !(spec.tau > 0.0))
    throw ConfigError("kernel width tau must be positive");
}

// Visits every trainable parameter vector in a fixed order; flatten/unflatten
// and the tape-leaf layout all derive from this single traversal.
template <class S, class F>
void for_each_param_vector(ParamsT<S>& p, F&& f) {
  if (p.emission.kind == EmissionKind::affine) {
    f(p.emission.A);
  } else {
    f(p.emission.w);
    f(p.emission.centers);
  }
  f(p.emission.b);
  f(p.dyn.mu);
  f(p.dyn.phi_u);
  f(p.dyn.sx_u);
  f(p.dyn.sk_u);
}

template <class S, class F>
void for_each_param_vector(const ParamsT<S>& p, F&& f) {
  for_each_param_vector(const_cast<ParamsT<S>&>(p), [&](auto& v) { f(std::as_const(v)); });
}

inline std::size_t param_count(const Params& p) {
  std::size_t n = 0;
  for_each_param_vector(p, [&](const std::vector<double>& v) { n += v.size(); });
  return n;
}

inline std::vector<double> flatten(const Params& p) {
  std::vector<double> out;
  out.reserve(param_count(p));
  for_each_param_vector(p, [&](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); });
  return out;
}

inline void unflatten(Params& p, std::span<const double> flat) {
  std::size_t at = 0;
  for_each_param_vector(p, [&](std::vector<double>& v) {
    if (at + v.size() > flat.size()) throw ShapeError("flat parameter vector too short");
    std::copy(flat.begin() + at, flat.begin() + at + v.size(), v.begin());
    at += v.size();
  });
  if (at != flat.size()) throw ShapeError("flat parameter vector too long");
}

// Lifts parameters onto a tape as leaves, in flatten order.
inline ParamsT<Var> lift_params(Tape& tape, const Params& p) {
  ParamsT<Var> out;
  out.emission.kind = p.emission.kind;
  out.emission.n_ages = p.emission.n_ages;
  out.emission.n_factors = p.emission.n_factors;
  out.emission.n_basis = p.emission.n_basis;
  out.emission.tau = p.emission.tau;
  auto copy_shape = [](const std::vector<double>& src, std::vector<Var>& dst) {
    dst.resize(src.size());
  };
  copy_shape(p.emission.A, out.emission.A);
  copy_shape(p.emission.w, out.emission.w);
  copy_shape(p.emission.centers, out.emission.centers);
  copy_shape(p.emission.b, out.emission.b);
  copy_shape(p.dyn.mu, out.dyn.mu);
  copy_shape(p.dyn.phi_u, out.dyn.phi_u);
  copy_shape(p.dyn.sx_u, out.dyn.sx_u);
  copy_shape(p.dyn.sk_u, out.dyn.sk_u);

  std::vector<const std::vector<double>*> src;
  for_each_param_vector(p, [&](const std::vector<double>& v) { src.push_back(&v); });
  std::size_t which = 0;
  for_each_param_vector(out, [&](std::vector<Var>& v) {
    const auto& s = *src[which++];
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = tape.leaf(s[j]);
  });
  return out;
}

inline PathT<Var> lift_path(Tape& tape, const Path& path) {
  PathT<Var> out(path.n_factors, path.n_steps);
  for (std::size_t j = 0; j < path.X.size(); ++j) out.X[j] = tape.leaf(path.X[j]);
  for (std::size_t j = 0; j < path.K.size(); ++j) out.K[j] = tape.leaf(path.K[j]);
  return out;
}

// Deterministic initialization: intercepts at empirical mean log-rates,
// loadings/weights at small seeded noise to break factor symmetry, centers
// spread evenly over the age axis, mean-reverting mid-range dynamics.
inline Params init_model_params(const ModelSpec& spec, const MortalityPanel& train,
                                std::uint64_t seed) {
  validate_model_spec(spec);
  if (spec.n_ages != train.n_ages()) throw ShapeError("model spec ages != panel ages");

  Params p;
  p.emission.kind = spec.kind;
  p.emission.n_ages = spec.n_ages;
  p.emission.n_factors = spec.n_factors;
  p.emission.n_basis = spec.kind == EmissionKind::rbf ? spec.n_basis : 0;
  p.emission.tau = spec.tau;

  p.emission.b.resize(spec.n_ages);
  for (int a = 0; a < spec.n_ages; ++a) {
    double dsum = 0.0, esum = 0.0;
    for (int t = 0; t < train.n_years(); ++t) {
      dsum += train.deaths(a, t);
      esum += train.exposures(a, t);
    }
    p.emission.b[a] = std::log((dsum + 0.5) / (esum + 0.5));
  }

  Rng rng(seed);
  if (spec.kind == EmissionKind::affine) {
    p.emission.A.resize(static_cast<std::size_t>(spec.n_ages) * spec.n_factors);
    for (auto& v : p.emission.A) v = 0.1 * rng.normal();
  } else {
    p.emission.w.resize(static_cast<std::size_t>(spec.n_basis) * spec.n_factors);
    for (auto& v : p.emission.w) v = 0.1 * rng.normal();
    p.emission.centers.resize(spec.n_basis);
    const double top = static_cast<double>(spec.n_ages - 1);
    for (int i = 0; i < spec.n_basis; ++i)
      p.emission.centers[i] =
          spec.n_basis == 1 ? top / 2.0 : top * static_cast<double>(i) / (spec.n_basis - 1);
  }

  p.dyn.mu.assign(spec.n_factors, 0.0);
  p.dyn.phi_u.assign(spec.n_factors, 0.0);                       // phi = 0.5
  p.dyn.sx_u.assign(spec.n_factors, softplus_inv(0.1));
  p.dyn.sk_u.assign(spec.n_factors, softplus_inv(0.1));
  return p;
}

}  // namespace mortvi
