#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <span>
#include <vector>

#include "mortvi/model.hpp"
#include "mortvi/rng.hpp"
#include "support/oracles.hpp"

using namespace mortvi;

namespace {

Emission random_affine(int n_ages, int d, std::uint64_t seed) {
  Emission e;
  e.kind = EmissionKind::affine;
  e.n_ages = n_ages;
  e.n_factors = d;
  Rng rng(seed);
  e.A.resize(static_cast<std::size_t>(n_ages) * d);
  e.b.resize(n_ages);
  for (auto& v : e.A) v = rng.normal();
  for (auto& v : e.b) v = rng.normal() - 3.0;
  return e;
}

Emission random_rbf(int n_ages, int d, int p, std::uint64_t seed) {
  Emission e;
  e.kind = EmissionKind::rbf;
  e.n_ages = n_ages;
  e.n_factors = d;
  e.n_basis = p;
  e.tau = 10.0;
  Rng rng(seed);
  e.w.resize(static_cast<std::size_t>(p) * d);
  e.b.resize(n_ages);
  e.centers.resize(p);
  for (auto& v : e.w) v = rng.normal();
  for (auto& v : e.b) v = rng.normal() - 3.0;
  for (int i = 0; i < p; ++i) e.centers[i] = (n_ages - 1.0) * i / std::max(1, p - 1);
  return e;
}

DynParams random_dyn(int d, std::uint64_t seed) {
  DynParams dyn;
  Rng rng(seed);
  dyn.mu.resize(d);
  dyn.phi_u.resize(d);
  dyn.sx_u.resize(d);
  dyn.sk_u.resize(d);
  for (auto& v : dyn.mu) v = 0.3 * rng.normal();
  for (auto& v : dyn.phi_u) v = rng.normal();
  for (auto& v : dyn.sx_u) v = softplus_inv(0.1 + std::abs(rng.normal()));
  for (auto& v : dyn.sk_u) v = softplus_inv(0.1 + std::abs(rng.normal()));
  return dyn;
}

Path random_path(int d, int T, std::uint64_t seed) {
  Path path(d, T);
  Rng rng(seed);
  for (auto& v : path.X) v = rng.normal();
  for (auto& v : path.K) v = 0.3 * rng.normal();
  return path;
}

MortalityPanel random_panel(int n_ages, int T, std::uint64_t seed) {
  MortalityPanel panel;
  panel.first_year = 1990;
  panel.deaths = Matrix(n_ages, T);
  panel.exposures = Matrix(n_ages, T);
  Rng rng(seed);
  for (int a = 0; a < n_ages; ++a)
    for (int t = 0; t < T; ++t) {
      panel.exposures(a, t) = 500.0 + 100.0 * rng.uniform();
      panel.deaths(a, t) = static_cast<double>(rng.poisson(5.0 + a));
    }
  return panel;
}

}  // namespace

TEST_CASE("affine emission", "[model]") {
  auto e = random_affine(6, 2, 1);
  const std::vector<double> x{0.4, -1.2};

  // Zero loadings pass the intercept through.
  auto zero = e;
  for (auto& v : zero.A) v = 0.0;
  CHECK(emission_affine(std::span<const double>(x), zero) == zero.b);

  // Unit column broadcasts the single factor.
  Emission ones;
  ones.kind = EmissionKind::affine;
  ones.n_ages = 4;
  ones.n_factors = 1;
  ones.A.assign(4, 1.0);
  ones.b.assign(4, 0.0);
  const std::vector<double> two{2.0};
  for (double r : emission_affine(std::span<const double>(two), ones)) CHECK(r == 2.0);

  // Random case against a naive loop.
  const auto got = emission_affine(std::span<const double>(x), e);
  for (int a = 0; a < e.n_ages; ++a) {
    double want = e.b[a];
    for (int j = 0; j < e.n_factors; ++j) want += e.A[a * e.n_factors + j] * x[j];
    CHECK(got[a] == Catch::Approx(want).epsilon(1e-12).margin(1e-12));
  }

  CHECK_THROWS_AS(emission_rbf(std::span<const double>(x), e), ConfigError);
  const std::vector<double> wrong{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(emission_affine(std::span<const double>(wrong), e), ShapeError);
}

TEST_CASE("radial basis emission", "[model]") {
  auto e = random_rbf(9, 2, 3, 2);
  const std::vector<double> x{0.7, -0.3};

  auto zero = e;
  for (auto& v : zero.w) v = 0.0;
  CHECK(emission_rbf(std::span<const double>(x), zero) == zero.b);

  // A single basis centered on an integer age: the kernel peak is exactly 1.
  Emission peak = random_rbf(9, 2, 1, 3);
  peak.centers[0] = 4.0;
  const auto at_peak = emission_rbf(std::span<const double>(x), peak);
  double want = peak.b[4];
  for (int j = 0; j < 2; ++j) want += peak.w[j] * x[j];
  CHECK(at_peak[4] == Catch::Approx(want).epsilon(1e-12).margin(1e-12));

  // Random case against the double loop.
  const auto got = emission_rbf(std::span<const double>(x), e);
  const double scale = e.tau / e.n_ages;
  for (int a = 0; a < e.n_ages; ++a) {
    double acc = e.b[a];
    for (int j = 0; j < e.n_factors; ++j) {
      double load = 0.0;
      for (int i = 0; i < e.n_basis; ++i)
        load += e.w[i * e.n_factors + j] * std::exp(-square((a - e.centers[i]) * scale));
      acc += load * x[j];
    }
    CHECK(got[a] == Catch::Approx(acc).epsilon(1e-12).margin(1e-12));
  }

  auto bad = e;
  bad.n_basis = 0;
  bad.w.clear();
  bad.centers.clear();
  CHECK_THROWS_AS(emission_rbf(std::span<const double>(x), bad), Error);
}

TEST_CASE("transition log-density", "[model]") {
  // Four standard-normal terms at their means when everything is 0/1.
  DynParams unit;
  unit.mu = {0.0};
  unit.phi_u = {logit(0.5)};  // phi value irrelevant at the zero path
  unit.sx_u = {softplus_inv(1.0)};
  unit.sk_u = {softplus_inv(1.0)};
  Path zero(1, 2);
  CHECK(transition_logdensity(zero, unit, 1.0) ==
        Catch::Approx(-4.0 * half_log_two_pi).epsilon(1e-12));

  // phi -> 1 removes mu from the K-transition mean.
  auto d1 = random_dyn(1, 5);
  d1.phi_u = {40.0};  // logistic(40) ~ 1
  auto d2 = d1;
  d2.mu = {7.5};
  const auto path = random_path(1, 4, 6);
  CHECK(transition_logdensity(path, d1) ==
        Catch::Approx(transition_logdensity(path, d2)).epsilon(1e-9));

  // Random instance against a term-by-term oracle.
  const auto dyn = random_dyn(2, 7);
  const auto p2 = random_path(2, 5, 8);
  double want = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double phi = logistic(dyn.phi_u[i]);
    const double sx = softplus(dyn.sx_u[i]);
    const double sk = softplus(dyn.sk_u[i]);
    want += gaussian_logpdf(p2.x(i, 0), 0.0, init_prior_sd);
    want += gaussian_logpdf(p2.k(i, 0), 0.0, init_prior_sd);
    for (int t = 1; t < 5; ++t) {
      want += gaussian_logpdf(p2.x(i, t), p2.x(i, t - 1) + p2.k(i, t - 1), sx);
      want += gaussian_logpdf(p2.k(i, t), dyn.mu[i] + phi * (p2.k(i, t - 1) - dyn.mu[i]), sk);
    }
  }
  CHECK(transition_logdensity(p2, dyn) == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("observation log-density", "[model]") {
  // Single cell, f = 0, E = 1, d = 0: Poisson(1) at zero.
  Emission flat;
  flat.kind = EmissionKind::affine;
  flat.n_ages = 1;
  flat.n_factors = 1;
  flat.A = {0.0};
  flat.b = {0.0};
  MortalityPanel one;
  one.first_year = 2000;
  one.deaths = Matrix(1, 1);
  one.exposures = Matrix(1, 1, 1.0);
  Path zero(1, 1);
  CHECK(observation_logdensity(zero, flat, one) == Catch::Approx(-1.0).epsilon(1e-14));

  // An excluded cell contributes exactly nothing.
  const auto e = random_affine(3, 1, 11);
  auto panel = random_panel(3, 2, 12);
  const auto path = random_path(1, 2, 13);
  const double full = observation_logdensity(path, e, panel);
  const double cell = poisson_logpmf(
      panel.deaths(1, 0),
      panel.exposures(1, 0) *
          std::exp(e.A[1] * path.x(0, 0) + e.b[1]));
  auto cut = panel;
  cut.deaths(1, 0) = 0.0;
  cut.exposures(1, 0) = 0.0;
  CHECK(observation_logdensity(path, e, cut) == Catch::Approx(full - cell).epsilon(1e-10));

  // Random instance against the cell loop.
  const auto e2 = random_affine(3, 2, 14);
  const auto panel2 = random_panel(3, 2, 15);
  const auto path2 = random_path(2, 2, 16);
  double want = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int t = 0; t < 2; ++t) {
      double f = e2.b[a];
      for (int j = 0; j < 2; ++j) f += e2.A[a * 2 + j] * path2.x(j, t);
      want += poisson_logpmf(panel2.deaths(a, t), panel2.exposures(a, t) * std::exp(f));
    }
  CHECK(observation_logdensity(path2, e2, panel2) == Catch::Approx(want).epsilon(1e-12));

  // Overflowing rates are reported, not clamped.
  auto hot = flat;
  hot.b = {800.0};
  CHECK_THROWS_AS(observation_logdensity(zero, hot, one), EvalError);
}

TEST_CASE("joint density is the sum of its parts", "[model]") {
  Params p;
  p.emission = random_affine(4, 2, 21);
  p.dyn = random_dyn(2, 22);
  const auto panel = random_panel(4, 3, 23);
  const auto path = random_path(2, 3, 24);
  CHECK(joint_logdensity(path, p, panel) ==
        transition_logdensity(path, p.dyn) + observation_logdensity(path, p.emission, panel));

  // Zero observed cells: the joint reduces to the transition term.
  MortalityPanel empty;
  empty.first_year = 2000;
  empty.deaths = Matrix(4, 3);
  empty.exposures = Matrix(4, 3);
  CHECK(joint_logdensity(path, p, empty) == transition_logdensity(path, p.dyn));
}

TEST_CASE("taped joint density is bit-identical to the double path", "[model]") {
  Params p;
  p.emission = random_rbf(5, 2, 3, 31);
  p.dyn = random_dyn(2, 32);
  const auto panel = random_panel(5, 4, 33);
  const auto path = random_path(2, 4, 34);

  Tape tape;
  auto vp = lift_params(tape, p);
  auto vpath = lift_path(tape, path);
  auto root = joint_logdensity(vpath, vp, panel);
  CHECK(root.value() == joint_logdensity(path, p, panel));

  // Gradient w.r.t. the path matches finite differences.
  std::vector<Var> leaves;
  leaves.insert(leaves.end(), vpath.X.begin(), vpath.X.end());
  leaves.insert(leaves.end(), vpath.K.begin(), vpath.K.end());
  auto grad = tape.gradient(root, leaves);
  std::vector<double> flat_path;
  flat_path.insert(flat_path.end(), path.X.begin(), path.X.end());
  flat_path.insert(flat_path.end(), path.K.begin(), path.K.end());
  auto fd = testsupport::fd_gradient(
      [&](std::span<const double> v) {
        Path q(2, 4);
        std::copy(v.begin(), v.begin() + q.X.size(), q.X.begin());
        std::copy(v.begin() + q.X.size(), v.end(), q.K.begin());
        return joint_logdensity(q, p, panel);
      },
      flat_path);
  CHECK(testsupport::max_rel_err(grad, fd) < 1e-4);
}

TEST_CASE("simulation follows the generative equations", "[model]") {
  // Noise-free ramp: X_t = kappa * t when sds ~ 0 and phi = 1.
  Params p;
  p.emission = random_affine(2, 1, 41);
  p.emission.b = {-3.0, -3.0};
  p.dyn.mu = {0.0};
  p.dyn.phi_u = {40.0};
  p.dyn.sx_u = {softplus_inv(1e-12)};
  p.dyn.sk_u = {softplus_inv(1e-12)};
  Matrix expos(2, 5, 1000.0);
  const double kappa = 0.25;
  const std::vector<double> x0{0.0}, k0{kappa};
  const auto sim = simulate(p, expos, 7, x0, k0);
  for (int t = 0; t < 5; ++t)
    CHECK(sim.path.x(0, t) == Catch::Approx(kappa * t).margin(1e-8));

  // Determinism and exposure-zero cells.
  Matrix mixed(2, 3, 500.0);
  mixed(1, 2) = 0.0;
  auto pr = p;
  pr.dyn = random_dyn(1, 42);
  const auto s1 = simulate(pr, mixed, 9, x0, k0);
  const auto s2 = simulate(pr, mixed, 9, x0, k0);
  CHECK(s1.deaths.v == s2.deaths.v);
  CHECK(s1.path.X == s2.path.X);
  CHECK(s1.deaths(1, 2) == 0.0);
  CHECK(simulate(pr, mixed, 10, x0, k0).path.X != s1.path.X);

  // Monte-Carlo mean of a single fixed-latent cell.
  Params fixed;
  fixed.emission = random_affine(1, 1, 43);
  fixed.emission.A = {1.0};
  fixed.emission.b = {-2.0};
  fixed.dyn.mu = {0.0};
  fixed.dyn.phi_u = {0.0};
  fixed.dyn.sx_u = {softplus_inv(1e-12)};
  fixed.dyn.sk_u = {softplus_inv(1e-12)};
  Matrix cell(1, 1, 50.0);
  const std::vector<double> xa{0.4}, ka{0.0};
  const double lambda = 50.0 * std::exp(0.4 - 2.0);
  testsupport::MeanVar mv;
  for (int r = 0; r < 10000; ++r)
    mv.push(simulate(fixed, cell, 100 + r, xa, ka).deaths(0, 0));
  CHECK(std::abs(mv.mean - lambda) < 3.0 * std::sqrt(lambda / 10000.0));
}

TEST_CASE("parameter flattening round-trips", "[model]") {
  for (int variant = 0; variant < 2; ++variant) {
    Params p;
    p.emission = variant == 0 ? random_affine(5, 3, 51) : random_rbf(5, 3, 4, 52);
    p.dyn = random_dyn(3, 53);
    const auto flat = flatten(p);
    CHECK(flat.size() == param_count(p));

    Params q = p;
    std::vector<double> zeros(flat.size(), 0.0);
    unflatten(q, zeros);
    CHECK(flatten(q) == zeros);
    unflatten(q, flat);
    CHECK(flatten(q) == flat);

    std::vector<double> wrong(flat.size() + 1, 0.0);
    CHECK_THROWS_AS(unflatten(q, wrong), ShapeError);
  }
}

TEST_CASE("initialization is data-anchored and deterministic", "[model]") {
  const auto panel = random_panel(6, 8, 61);
  ModelSpec spec;
  spec.kind = EmissionKind::rbf;
  spec.n_ages = 6;
  spec.n_factors = 2;
  spec.n_basis = 3;
  const auto p = init_model_params(spec, panel, 77);
  const auto q = init_model_params(spec, panel, 77);
  CHECK(flatten(p) == flatten(q));

  for (int a = 0; a < 6; ++a) {
    double dsum = 0.0, esum = 0.0;
    for (int t = 0; t < 8; ++t) {
      dsum += panel.deaths(a, t);
      esum += panel.exposures(a, t);
    }
    CHECK(p.emission.b[a] == Catch::Approx(std::log((dsum + 0.5) / (esum + 0.5))).epsilon(1e-12));
  }
  CHECK(p.emission.centers.front() == 0.0);
  CHECK(p.emission.centers.back() == 5.0);
  CHECK(logistic(p.dyn.phi_u[0]) == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(softplus(p.dyn.sx_u[0]) == Catch::Approx(0.1).epsilon(1e-9));

  ModelSpec bad = spec;
  bad.n_basis = 0;
  CHECK_THROWS_AS(init_model_params(bad, panel, 1), ConfigError);
}
