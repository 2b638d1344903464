#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mortvi/error.hpp"
#include "mortvi/forecast.hpp"
#include "mortvi/math.hpp"
#include "mortvi/panel.hpp"
#include "mortvi/text.hpp"

namespace mortvi {

// Observed deaths enter Poisson scores as integers; fractional inputs (HMD
// splits deaths of unknown age) are rounded to nearest and the rounding is
// counted rather than silently applied.
struct ScoreDiagnostics {
  long long rounded_cells = 0;
  long long excluded_ages = 0;
};

namespace detail {

inline double rounded_count(double d, ScoreDiagnostics* diag) {
  const double r = std::nearbyint(d);
  if (r != d && diag != nullptr) ++diag->rounded_cells;
  return r;
}

}  // namespace detail

// Per-year log-scores of a predictive against the realized eval window:
// entry t is sum_a log P_{a,t}(d_{a,t}). A realized count with no predictive
// mass makes that year's score -infinity (kept, never dropped).
inline std::vector<double> log_score(const PredictiveDeaths& pred, const MortalityPanel& eval,
                                     ScoreDiagnostics* diag = nullptr) {
  if (pred.n_ages != eval.n_ages() || pred.horizon != eval.n_years())
    throw ShapeError("predictive shape does not match eval panel");
  std::vector<double> out(eval.n_years(), 0.0);
  for (int t = 0; t < eval.n_years(); ++t)
    for (int a = 0; a < eval.n_ages(); ++a) {
      const double d = detail::rounded_count(eval.deaths(a, t), diag);
      if (!eval.included(a, t) && d == 0.0 && !pred.included(a, t)) continue;
      out[t] += pred.logpmf(a, t, d);
    }
  return out;
}

// Score ceiling: each cell predicted by a Poisson centered at its own count,
// with the d=0 cells contributing exactly 0 (the lambda -> 0 limit).
inline std::vector<double> saturated_score(const MortalityPanel& eval,
                                           ScoreDiagnostics* diag = nullptr) {
  std::vector<double> out(eval.n_years(), 0.0);
  for (int t = 0; t < eval.n_years(); ++t)
    for (int a = 0; a < eval.n_ages(); ++a) {
      const double d = detail::rounded_count(eval.deaths(a, t), diag);
      if (d == 0.0) continue;
      out[t] += poisson_logpmf(d, d);
    }
  return out;
}

// Per-age constant log-rates fitted on a training window by maximum
// likelihood, with a half-count shrink for ages that saw no deaths. Ages with
// no exposure at all are excluded (counted in the diagnostics).
inline std::vector<double> intercept_log_rates(const MortalityPanel& train,
                                               ScoreDiagnostics* diag = nullptr) {
  std::vector<double> alpha(train.n_ages(), neg_infinity);
  for (int a = 0; a < train.n_ages(); ++a) {
    double dsum = 0.0, esum = 0.0;
    for (int t = 0; t < train.n_years(); ++t) {
      dsum += train.deaths(a, t);
      esum += train.exposures(a, t);
    }
    if (esum == 0.0) {
      if (diag != nullptr) ++diag->excluded_ages;
      continue;  // marker stays -infinity
    }
    alpha[a] = dsum > 0.0 ? std::log(dsum / esum) : std::log((dsum + 0.5) / (esum + 0.5));
  }
  return alpha;
}

// Baseline floor: Poisson(E * exp(alpha_a)) per eval cell.
inline std::vector<double> intercept_score(const MortalityPanel& train, const MortalityPanel& eval,
                                           ScoreDiagnostics* diag = nullptr) {
  if (train.n_ages() != eval.n_ages()) throw ShapeError("train/eval age count mismatch");
  const auto alpha = intercept_log_rates(train, diag);
  std::vector<double> out(eval.n_years(), 0.0);
  for (int t = 0; t < eval.n_years(); ++t)
    for (int a = 0; a < eval.n_ages(); ++a) {
      const double d = detail::rounded_count(eval.deaths(a, t), diag);
      if (!eval.included(a, t)) continue;  // no exposure, d = 0 by panel invariant
      if (alpha[a] == neg_infinity) continue;  // age unusable from training
      out[t] += poisson_logpmf_from_log(d, std::log(eval.exposures(a, t)) + alpha[a]);
    }
  return out;
}

// Skill score against the intercept floor and saturated ceiling.
inline double r_squared(double model_score, double intercept, double saturated) {
  if (!(saturated > intercept))
    throw DomainError("r_squared undefined: saturated score must exceed intercept score");
  return (model_score - intercept) / (saturated - intercept);
}

// ---- Rolling-window harness -------------------------------------------------

// One model run on one window: fit on train, return the predictive for every
// eval year. Exposures for the eval window are supplied for rate scaling.
using WindowModel = std::function<PredictiveDeaths(
    const MortalityPanel& train, const Matrix& eval_exposures, std::uint64_t seed)>;

struct SweepSpec {
  int first_train_year_begin = 0;
  int first_train_year_end = 0;  // inclusive
  int train_len = 60;
  int eval_len = 10;
  std::uint64_t base_seed = 1;
  int jobs = 1;
  bool skip_failed = false;
};

struct WindowScores {
  int first_train_year = 0;
  std::vector<double> model;      // per eval year
  std::vector<double> saturated;  // per eval year
  std::vector<double> intercept;  // per eval year
  ScoreDiagnostics diag;
  bool failed = false;
  std::string error;
};

struct ScoreReport {
  std::string model_name;
  int eval_len = 0;
  std::vector<WindowScores> windows;

  int n_windows() const {
    int n = 0;
    for (const auto& w : windows)
      if (!w.failed) ++n;
    return n;
  }

  double mean_of(std::vector<double> WindowScores::* field) const {
    double acc = 0.0;
    long long n = 0;
    for (const auto& w : windows) {
      if (w.failed) continue;
      for (double s : w.*field) {
        acc += s;
        ++n;
      }
    }
    if (n == 0) throw RangeError("score report holds no successful windows");
    return acc / static_cast<double>(n);
  }

  double mean_log_score() const { return mean_of(&WindowScores::model); }
  double mean_saturated() const { return mean_of(&WindowScores::saturated); }
  double mean_intercept() const { return mean_of(&WindowScores::intercept); }
  double r2() const { return r_squared(mean_log_score(), mean_intercept(), mean_saturated()); }
};

// Runs the model over every train/eval split in the sweep. Window w uses seed
// base_seed + w, so the report is independent of scheduling; failures rethrow
// unless skip_failed, in which case they are recorded in the report.
inline ScoreReport rolling_evaluate(const MortalityPanel& panel, const std::string& model_name,
                                    const WindowModel& model, const SweepSpec& sweep) {
  if (sweep.first_train_year_end < sweep.first_train_year_begin)
    throw ConfigError("empty first-train-year sweep");
  if (sweep.jobs < 1) throw ConfigError("jobs must be >= 1");
  const int n = sweep.first_train_year_end - sweep.first_train_year_begin + 1;

  ScoreReport report;
  report.model_name = model_name;
  report.eval_len = sweep.eval_len;
  report.windows.resize(n);

  auto run_window = [&](int w) {
    WindowScores& out = report.windows[w];
    out.first_train_year = sweep.first_train_year_begin + w;
    try {
      WindowSpec ws{out.first_train_year, sweep.train_len, sweep.eval_len};
      auto [train, eval] = cut_window(panel, ws);
      const PredictiveDeaths pred = model(train, eval.exposures, sweep.base_seed + w);
      out.model = log_score(pred, eval, &out.diag);
      out.saturated = saturated_score(eval);
      out.intercept = intercept_score(train, eval);
    } catch (const std::exception& e) {
      out.failed = true;
      out.error = e.what();
    }
  };

  if (sweep.jobs == 1 || n == 1) {
    for (int w = 0; w < n; ++w) run_window(w);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int workers = std::min(sweep.jobs, n);
    for (int j = 0; j < workers; ++j)
      pool.emplace_back([&] {
        for (int w = next.fetch_add(1); w < n; w = next.fetch_add(1)) run_window(w);
      });
    for (auto& t : pool) t.join();
  }

  if (!sweep.skip_failed)
    for (const auto& w : report.windows)
      if (w.failed)
        throw FitError("window " + std::to_string(w.first_train_year) + " failed: " + w.error,
                       w.first_train_year, {});
  return report;
}

// ---- Report serialization ---------------------------------------------------

inline constexpr const char* report_csv_header = "model,first_train_year,horizon,log_score";

inline void write_report_rows(std::ostream& out, const ScoreReport& report) {
  for (const auto& w : report.windows) {
    if (w.failed) continue;
    for (std::size_t h = 0; h < w.model.size(); ++h)
      out << report.model_name << ',' << w.first_train_year << ',' << h + 1 << ','
          << format_double(w.model[h]) << '\n';
  }
}

inline void write_report_csv(std::ostream& out, const ScoreReport& report) {
  out << report_csv_header << '\n';
  write_report_rows(out, report);
}

inline std::string aggregate_json(const ScoreReport& report, const std::string& indent = "") {
  std::string s;
  s += indent + "{\n";
  s += indent + "  \"model\": \"" + report.model_name + "\",\n";
  s += indent + "  \"mean_log_score\": " + format_double(report.mean_log_score()) + ",\n";
  s += indent + "  \"r_squared\": " + format_double(report.r2()) + ",\n";
  s += indent + "  \"n_windows\": " + std::to_string(report.n_windows()) + "\n";
  s += indent + "}";
  return s;
}

inline void write_aggregate_json(std::ostream& out, const ScoreReport& report) {
  out << aggregate_json(report) << "\n";
}

}  // namespace mortvi
