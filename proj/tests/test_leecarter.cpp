#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <span>
#include <vector>

#include "mortvi/leecarter.hpp"
#include "mortvi/rng.hpp"
#include "support/oracles.hpp"

using namespace mortvi;

namespace {

// Exactly factorizable intensities: deaths are set to their own means, so the
// maximum-likelihood surface peaks at the constructed parameters.
MortalityPanel rank_one_panel(const std::vector<double>& alpha, const std::vector<double>& beta,
                              const std::vector<double>& kappa, double E) {
  const int A = static_cast<int>(alpha.size()), T = static_cast<int>(kappa.size());
  MortalityPanel panel;
  panel.first_year = 1960;
  panel.deaths = Matrix(A, T);
  panel.exposures = Matrix(A, T, E);
  for (int a = 0; a < A; ++a)
    for (int t = 0; t < T; ++t)
      panel.deaths(a, t) = E * std::exp(alpha[a] + beta[a] * kappa[t]);
  return panel;
}

MortalityPanel poisson_lc_panel(int A, int T, double E, std::uint64_t seed) {
  MortalityPanel panel;
  panel.first_year = 1970;
  panel.deaths = Matrix(A, T);
  panel.exposures = Matrix(A, T, E);
  Rng rng(seed);
  for (int a = 0; a < A; ++a)
    for (int t = 0; t < T; ++t) {
      const double eta = -4.0 + 0.25 * a - 0.04 * t * (1.0 + 0.3 * a);
      panel.deaths(a, t) = static_cast<double>(rng.poisson(E * std::exp(eta)));
    }
  return panel;
}

// Profile coordinates for a 3-age, 4-year instance: the identification
// constraints absorb one beta and one kappa.
LeeCarterParams from_profile(std::span<const double> v) {
  LeeCarterParams p;
  p.alpha = {v[0], v[1], v[2]};
  p.beta = {v[3], v[4], 1.0 - v[3] - v[4]};
  p.kappa = {v[5], v[6], v[7], -v[5] - v[6] - v[7]};
  return p;
}

std::vector<double> to_profile(const LeeCarterParams& p) {
  return {p.alpha[0], p.alpha[1], p.alpha[2], p.beta[0], p.beta[1],
          p.kappa[0], p.kappa[1], p.kappa[2]};
}

}  // namespace

TEST_CASE("exactly factorizable data is recovered", "[leecarter]") {
  const std::vector<double> alpha{-4.0, -3.8, -3.6, -3.4, -3.2};
  const std::vector<double> beta{0.1, 0.15, 0.2, 0.25, 0.3};  // sums to 1
  std::vector<double> kappa(12);
  for (int t = 0; t < 12; ++t) kappa[t] = 0.1 * (5.5 - t);  // sums to 0
  const auto panel = rank_one_panel(alpha, beta, kappa, 50000.0);
  const auto p = fit_lee_carter(panel);

  for (int a = 0; a < 5; ++a) {
    CHECK(p.alpha[a] == Catch::Approx(alpha[a]).margin(1e-4));
    CHECK(p.beta[a] == Catch::Approx(beta[a]).margin(1e-4));
  }
  for (int t = 0; t < 12; ++t) CHECK(p.kappa[t] == Catch::Approx(kappa[t]).margin(1e-3));
  for (int a = 0; a < 5; ++a)
    for (int t = 0; t < 12; ++t)
      CHECK(p.alpha[a] + p.beta[a] * p.kappa[t] ==
            Catch::Approx(alpha[a] + beta[a] * kappa[t]).margin(1e-4));

  // The constructed kappa is a perfect line: drift recovers its slope and the
  // residual random-walk noise vanishes.
  CHECK(p.drift == Catch::Approx(-0.1).margin(1e-4));
  CHECK(p.rw_sd < 1e-4);

  // The likelihood itself reaches the ceiling attainable for these counts.
  double ceiling = 0.0;
  for (int a = 0; a < 5; ++a)
    for (int t = 0; t < 12; ++t) {
      const double d = panel.deaths(a, t);
      ceiling += d * std::log(d) - d - log_gamma(d + 1.0);
    }
  CHECK(lee_carter_loglik(panel, p) == Catch::Approx(ceiling).margin(1e-5));
}

TEST_CASE("time-constant data yields a flat period index", "[leecarter]") {
  std::vector<double> alpha{-4.0, -3.5, -3.0};
  const auto panel = rank_one_panel(alpha, {0.3, 0.3, 0.4}, std::vector<double>(8, 0.0), 20000.0);
  const auto p = fit_lee_carter(panel);
  for (int t = 0; t < 8; ++t) CHECK(std::abs(p.kappa[t]) < 1e-5);
  CHECK(std::abs(p.drift) < 1e-6);
  CHECK(p.rw_sd < 1e-6);
  for (int a = 0; a < 3; ++a) CHECK(p.alpha[a] == Catch::Approx(alpha[a]).margin(1e-6));
}

TEST_CASE("alternating updates reach the generic-optimizer maximum", "[leecarter]") {
  const auto panel = poisson_lc_panel(3, 4, 2000.0, 7);
  const auto p = fit_lee_carter(panel);
  const double ll = lee_carter_loglik(panel, p);

  const auto neg_profile_ll = [&](std::span<const double> v) {
    return -lee_carter_loglik(panel, from_profile(v));
  };

  // From a crude start, the generic optimizer must not find anything better.
  std::vector<double> crude(8, 0.0);
  for (int a = 0; a < 3; ++a) {
    double dsum = 0.0, esum = 0.0;
    for (int t = 0; t < 4; ++t) {
      dsum += panel.deaths(a, t);
      esum += panel.exposures(a, t);
    }
    crude[a] = std::log(dsum / esum);
  }
  crude[3] = crude[4] = 1.0 / 3.0;
  const auto from_crude = testsupport::nelder_mead(neg_profile_ll, crude, 0.1, 6000);
  CHECK(ll >= -from_crude.value - 1e-4);

  // Started at the alternating solution, it cannot improve it materially.
  const auto refine = testsupport::nelder_mead(neg_profile_ll, to_profile(p), 0.05, 6000);
  CHECK(-refine.value <= ll + 1e-6);
  CHECK(std::abs(-refine.value - ll) < 1e-4);
}

TEST_CASE("identification constraints do not move the fitted surface", "[leecarter]") {
  const auto panel = poisson_lc_panel(3, 5, 3000.0, 9);
  const auto p = fit_lee_carter(panel);
  // Fitted output satisfies the constraints.
  double bsum = 0.0, ksum = 0.0;
  for (double b : p.beta) bsum += b;
  for (double k : p.kappa) ksum += k;
  CHECK(bsum == Catch::Approx(1.0).margin(1e-10));
  CHECK(ksum == Catch::Approx(0.0).margin(1e-8));

  // Rescale + shift along the unidentified directions, then renormalize.
  const double c = 2.5, shift = 3.0;
  LeeCarterParams q = p;
  for (int a = 0; a < q.n_ages(); ++a) {
    q.alpha[a] = p.alpha[a] - p.beta[a] * c * shift;
    q.beta[a] = p.beta[a] * c;
  }
  for (int t = 0; t < q.n_years(); ++t) q.kappa[t] = p.kappa[t] / c + shift;
  CHECK(lee_carter_loglik(panel, q) == Catch::Approx(lee_carter_loglik(panel, p)).margin(1e-8));

  normalize_lee_carter(q);
  for (int a = 0; a < q.n_ages(); ++a) {
    CHECK(q.alpha[a] == Catch::Approx(p.alpha[a]).margin(1e-10));
    CHECK(q.beta[a] == Catch::Approx(p.beta[a]).margin(1e-10));
  }
  for (int t = 0; t < q.n_years(); ++t)
    CHECK(q.kappa[t] == Catch::Approx(p.kappa[t]).margin(1e-10));

  LeeCarterParams collapsed = p;
  for (auto& b : collapsed.beta) b = 0.0;
  CHECK_THROWS_AS(normalize_lee_carter(collapsed), FitError);
}

TEST_CASE("stationarity of the fit: per-age and weighted per-year totals", "[leecarter]") {
  const auto panel = poisson_lc_panel(4, 6, 2500.0, 11);
  const auto p = fit_lee_carter(panel);
  Matrix lam(4, 6);
  for (int a = 0; a < 4; ++a)
    for (int t = 0; t < 6; ++t)
      lam(a, t) = panel.exposures(a, t) * std::exp(p.alpha[a] + p.beta[a] * p.kappa[t]);

  for (int a = 0; a < 4; ++a) {
    double dsum = 0.0, lsum = 0.0;
    for (int t = 0; t < 6; ++t) {
      dsum += panel.deaths(a, t);
      lsum += lam(a, t);
    }
    CHECK(lsum == Catch::Approx(dsum).epsilon(1e-6));
  }
  for (int t = 0; t < 6; ++t) {
    double resid = 0.0, scale = 0.0;
    for (int a = 0; a < 4; ++a) {
      resid += p.beta[a] * (panel.deaths(a, t) - lam(a, t));
      scale += panel.deaths(a, t);
    }
    CHECK(std::abs(resid) < 1e-6 * scale);
  }
}

TEST_CASE("ages with no deaths are pinned, not divergent", "[leecarter]") {
  auto panel = poisson_lc_panel(3, 6, 2000.0, 13);
  for (int t = 0; t < 6; ++t) panel.deaths(1, t) = 0.0;
  const auto p = fit_lee_carter(panel);
  CHECK(p.beta[1] == 0.0);
  CHECK(p.alpha[1] == Catch::Approx(std::log(0.5 / (6.0 * 2000.0 + 0.5))).epsilon(1e-12));
  CHECK(std::isfinite(lee_carter_loglik(panel, p)));

  // The surviving ages still carry the time signal.
  CHECK(p.beta[0] != 0.0);
  CHECK(p.beta[2] != 0.0);
}

TEST_CASE("degenerate inputs are rejected", "[leecarter]") {
  auto panel = poisson_lc_panel(3, 6, 2000.0, 15);
  for (int t = 0; t < 6; ++t) {
    panel.exposures(2, t) = 0.0;
    panel.deaths(2, t) = 0.0;
  }
  CHECK_THROWS_AS(fit_lee_carter(panel), DataError);

  MortalityPanel one;
  one.first_year = 2000;
  one.deaths = Matrix(2, 1, 5.0);
  one.exposures = Matrix(2, 1, 100.0);
  CHECK_THROWS_AS(fit_lee_carter(one), ConfigError);

  const auto ok = poisson_lc_panel(3, 6, 2000.0, 15);
  CHECK_THROWS_AS(fit_lee_carter(ok, 1), FitError);
}

TEST_CASE("a noiseless period walk forecasts single Poissons", "[leecarter]") {
  LeeCarterParams p;
  p.alpha = {-3.0};
  p.beta = {1.0};
  p.kappa = {-0.1, 0.0, 0.1};
  p.drift = 0.1;
  p.rw_sd = 0.0;
  Matrix expos(1, 3, 4000.0);
  const auto pred = forecast_lee_carter(p, 3, 1, 21, expos);
  for (int h = 0; h < 3; ++h) {
    const double lam = 4000.0 * std::exp(-3.0 + (0.1 + 0.1 * (h + 1)));
    for (double k : {0.0, 150.0, 260.0})
      CHECK(pred.logpmf(0, h, k) == Catch::Approx(poisson_logpmf(k, lam)).epsilon(1e-10));
    CHECK(pred.mean_deaths(0, h) == Catch::Approx(lam).epsilon(1e-10));
  }

  CHECK_THROWS_AS(forecast_lee_carter(p, 0, 1, 1, expos), ConfigError);
  CHECK_THROWS_AS(forecast_lee_carter(p, 3, 0, 1, expos), ConfigError);
  Matrix wrong(1, 2, 100.0);
  CHECK_THROWS_AS(forecast_lee_carter(p, 3, 1, 1, wrong), ShapeError);
}

TEST_CASE("forecast uncertainty follows the square root of the horizon", "[leecarter]") {
  LeeCarterParams p;
  p.alpha = {-3.0};
  p.beta = {1.0};
  p.kappa = {0.0, 0.0};
  p.drift = 0.0;
  p.rw_sd = 0.05;
  const int H = 4, M = 40000;
  Matrix expos(1, H, 1000.0);
  const auto pred = forecast_lee_carter(p, H, M, 23, expos);

  std::vector<testsupport::MeanVar> mv(H);
  for (int h = 0; h < H; ++h)
    for (int m = 0; m < M; ++m) mv[h].push(pred.sample_log_rates(h, m)[0]);
  // sd at horizon h+1 is rw_sd * sqrt(h+1); the h=3 to h=0 ratio is exactly 2.
  const double ratio = mv[3].sd() / mv[0].sd();
  CHECK(ratio == Catch::Approx(2.0).margin(0.05));
  for (int h = 0; h < H; ++h)
    CHECK(mv[h].sd() == Catch::Approx(0.05 * std::sqrt(h + 1.0)).margin(0.002));
}

TEST_CASE("period-walk predictive matches quadrature", "[leecarter]") {
  LeeCarterParams p;
  p.alpha = {std::log(0.05)};
  p.beta = {1.0};
  p.kappa = {0.0, 0.0};
  p.drift = -0.02;
  p.rw_sd = 0.08;
  const double E = 1000.0;
  Matrix expos(1, 2, E);
  const int M = 500000;
  const auto pred = forecast_lee_carter(p, 2, M, 29, expos);

  const auto gh = testsupport::gauss_hermite(64);
  const int h = 1;  // second forecast year: kappa ~ N(-0.04, 0.08^2 * 2)
  const double mean_k = -0.04, sd_k = 0.08 * std::sqrt(2.0);
  for (double k : {42.0, 48.0, 54.0}) {
    const double want = testsupport::log_integral_gh(
        [&](double kap) {
          return poisson_logpmf(k, E * 0.05 * std::exp(kap)) +
                 gaussian_logpdf(kap, mean_k, sd_k);
        },
        mean_k, sd_k, gh);
    CHECK(pred.logpmf(0, h, k) == Catch::Approx(want).margin(0.01));
  }
}
