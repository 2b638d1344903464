#pragma once

#include <cstdint>

#include "mortvi/forecast.hpp"
#include "mortvi/inference.hpp"
#include "mortvi/leecarter.hpp"
#include "mortvi/scoring.hpp"

namespace mortvi {

// Keeps each window's forecast stream disjoint from its training streams
// (which use seed and seed+1).
inline constexpr std::uint64_t forecast_seed_mix = 0xda3e39cb94b95bdbULL;

struct VIWindowOptions {
  ModelSpec spec;  // n_ages is taken from each window's panel
  TrainConfig train;
  int predictive_samples = 1000;
};

// Fit on the training window, propagate the guide's final state, sample the
// predictive for every eval year.
inline PredictiveDeaths run_vi_window(const MortalityPanel& train_panel,
                                      const Matrix& eval_exposures, std::uint64_t seed,
                                      const VIWindowOptions& opt) {
  TrainConfig cfg = opt.train;
  cfg.seed = seed;
  const FitResult r = fit(train_panel, opt.spec, cfg);
  const auto final_state = final_state_distribution(r.guide_params);
  const LatentForecast fc =
      forecast_latent(final_state, r.model_params.dyn, eval_exposures.cols);
  return forecast_deaths(fc, r.model_params.emission, eval_exposures, opt.predictive_samples,
                         seed ^ forecast_seed_mix);
}

inline WindowModel make_vi_window_model(VIWindowOptions opt) {
  return [opt](const MortalityPanel& train, const Matrix& eval_exposures, std::uint64_t seed) {
    return run_vi_window(train, eval_exposures, seed, opt);
  };
}

struct LeeCarterWindowOptions {
  int max_iter = 500;
  double tol = 1e-10;
  int predictive_samples = 1000;
};

inline WindowModel make_lee_carter_window_model(LeeCarterWindowOptions opt = {}) {
  return [opt](const MortalityPanel& train, const Matrix& eval_exposures, std::uint64_t seed) {
    const LeeCarterParams p = fit_lee_carter(train, opt.max_iter, opt.tol);
    return forecast_lee_carter(p, eval_exposures.cols, opt.predictive_samples,
                               seed ^ forecast_seed_mix, eval_exposures);
  };
}

}  // namespace mortvi
