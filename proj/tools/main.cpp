// mortvi: fit, forecast, and score latent-factor mortality models.
//
// Subcommands: ingest, fit, forecast, evaluate, compare. Every command writes
// a `<output>.meta.json` sidecar holding the effective options; rerunning the
// command with `--config <sidecar>` reproduces the outputs byte-identically.
// Option precedence is flag > config file > built-in default. Relative input
// paths are also tried under $MORTVI_DATA_DIR.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mortvi/mortvi.hpp"

namespace {

using nlohmann::json;

void require_set(const std::string& value, const std::string& flag) {
  if (value.empty()) throw mortvi::ConfigError(flag + " is required (flag or config file)");
}

std::string resolve_input(const std::string& path) {
  namespace fs = std::filesystem;
  if (path.empty() || fs::exists(path) || fs::path(path).is_absolute()) return path;
  if (const char* dir = std::getenv("MORTVI_DATA_DIR")) {
    const fs::path joined = fs::path(dir) / path;
    if (fs::exists(joined)) return joined.string();
  }
  return path;
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  const auto dot = path.find_last_of('.');
  const auto slash = path.find_last_of("/\\");
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? path.substr(0, dot) : path) + suffix;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mortvi::Error("cannot write " + path);
  out << content;
}

// Ties CLI options to config-file keys: a key is applied from the config file
// only when its flag was not given, and every key is echoed to the sidecar.
struct OptionSet {
  std::vector<std::function<void(const json&)>> appliers;
  std::vector<std::function<void(json&)>> captors;

  template <class T>
  CLI::Option* bind(CLI::App* cmd, const std::string& flag, T& value, const std::string& desc,
                    const std::string& key) {
    auto* opt = cmd->add_option(flag, value, desc);
    appliers.push_back([opt, key, &value](const json& cfg) {
      if (opt->count() == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
    });
    captors.push_back([key, &value](json& out) { out[key] = value; });
    return opt;
  }

  CLI::Option* bind_flag(CLI::App* cmd, const std::string& flag, bool& value,
                         const std::string& desc, const std::string& key) {
    auto* opt = cmd->add_flag(flag, value, desc);
    appliers.push_back([opt, key, &value](const json& cfg) {
      if (opt->count() == 0 && cfg.contains(key)) value = cfg.at(key).get<bool>();
    });
    captors.push_back([key, &value](json& out) { out[key] = value; });
    return opt;
  }

  void apply_config(const std::string& config_path, const std::string& command) const {
    if (config_path.empty()) return;
    std::ifstream in(resolve_input(config_path));
    if (!in) throw mortvi::ConfigError("cannot open config file " + config_path);
    json cfg;
    try {
      in >> cfg;
    } catch (const std::exception& e) {
      throw mortvi::ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (cfg.contains("command") && cfg.at("command") != command)
      throw mortvi::ConfigError("config file is for command '" +
                                cfg.at("command").get<std::string>() + "', not '" + command + "'");
    const json& options = cfg.contains("options") ? cfg.at("options") : cfg;
    for (const auto& apply : appliers) apply(options);
  }

  void write_sidecar(const std::string& primary_output, const std::string& command) const {
    json meta;
    meta["command"] = command;
    json options;
    for (const auto& capture : captors) capture(options);
    meta["options"] = options;
    write_file(primary_output + ".meta.json", meta.dump(2) + "\n");
  }
};

// ---- ingest -----------------------------------------------------------------

struct IngestOpts {
  std::string deaths, exposures, sex = "total", output = "panel.csv", config;
  int age_cap = 100, first_year = 0, last_year = 0;
};

void year_span(const mortvi::HmdTable& t, int& lo, int& hi) {
  lo = t.records.front().year;
  hi = lo;
  for (const auto& r : t.records) {
    lo = std::min(lo, r.year);
    hi = std::max(hi, r.year);
  }
}

int cmd_ingest(IngestOpts& o, OptionSet& opts) {
  require_set(o.deaths, "--deaths");
  require_set(o.exposures, "--exposures");
  const auto deaths = mortvi::parse_hmd_file(resolve_input(o.deaths), mortvi::parse_sex_column(o.sex));
  const auto expos = mortvi::parse_hmd_file(resolve_input(o.exposures), mortvi::parse_sex_column(o.sex));
  int dlo, dhi, elo, ehi;
  year_span(deaths, dlo, dhi);
  year_span(expos, elo, ehi);
  if (o.first_year == 0) o.first_year = std::max(dlo, elo);
  if (o.last_year == 0) o.last_year = std::min(dhi, ehi);

  const auto panel =
      mortvi::build_panel(deaths, expos, o.age_cap, o.first_year, o.last_year);
  std::ostringstream csv;
  mortvi::write_panel_csv(csv, panel);
  write_file(o.output, csv.str());
  opts.write_sidecar(o.output, "ingest");
  std::cerr << "wrote " << o.output << ": " << panel.n_ages() << " ages x " << panel.n_years()
            << " years (" << panel.first_year << "-" << panel.last_year() << ")\n";
  return 0;
}

// ---- fit --------------------------------------------------------------------

struct FitOpts {
  std::string panel, model = "affine", output = "checkpoint.json", trace, config;
  int latent_dim = 3, rbf_count = 15;
  double tau = 10.0;
  long long steps = 10000;
  double learning_rate = 0.01, lr_decay = 0.0;
  int mc_samples = 1, convergence_window = 500;
  unsigned long long seed = 1;
  int first_train_year = 0, train_len = 60;
};

mortvi::ModelSpec model_spec_of(const std::string& model, int latent_dim, int rbf_count,
                                double tau) {
  mortvi::ModelSpec spec;
  spec.kind = mortvi::parse_emission_kind(model);
  spec.n_factors = latent_dim;
  spec.n_basis = spec.kind == mortvi::EmissionKind::rbf ? rbf_count : 0;
  spec.tau = tau;
  return spec;
}

mortvi::TrainConfig train_config_of(const FitOpts& o) {
  mortvi::TrainConfig cfg;
  cfg.steps = o.steps;
  cfg.learning_rate = o.learning_rate;
  cfg.lr_decay = o.lr_decay;
  cfg.mc_samples = o.mc_samples;
  cfg.seed = o.seed;
  cfg.convergence_window = o.convergence_window;
  return cfg;
}

int cmd_fit(FitOpts& o, OptionSet& opts) {
  require_set(o.panel, "--panel");
  const auto panel = mortvi::read_panel_csv_file(resolve_input(o.panel));
  if (o.first_train_year == 0) o.first_train_year = panel.first_year;
  if (o.train_len == 0) o.train_len = panel.last_year() - o.first_train_year + 1;
  const auto train = mortvi::slice_years(panel, o.first_train_year, o.train_len);
  if (o.trace.empty()) o.trace = with_suffix(o.output, ".trace.csv");

  const auto spec = model_spec_of(o.model, o.latent_dim, o.rbf_count, o.tau);
  const auto result = mortvi::fit(train, spec, train_config_of(o));
  o.lr_decay = result.config.lr_decay;  // echo the effective schedule

  mortvi::CheckpointData ck{result.spec, result.model_params, result.guide_params, result.config,
                            o.first_train_year};
  std::ostringstream ck_text;
  mortvi::write_checkpoint(ck_text, ck);
  write_file(o.output, ck_text.str());

  std::string trace = "step,elbo\n";
  for (std::size_t i = 0; i < result.elbo_trace.size(); ++i)
    trace += std::to_string(i) + "," + mortvi::format_double(result.elbo_trace[i]) + "\n";
  write_file(o.trace, trace);

  opts.write_sidecar(o.output, "fit");
  if (!result.elbo_trace.empty())
    std::cerr << "final smoothed ELBO: "
              << mortvi::smoothed_elbo(result.elbo_trace, result.config.convergence_window)
              << "\n";
  return 0;
}

// ---- forecast ---------------------------------------------------------------

struct ForecastOpts {
  std::string checkpoint, panel, output = "forecast.csv", config;
  int horizon = 10, samples = 1000;
  unsigned long long seed = 0;  // 0: derived from the checkpoint seed
};

int cmd_forecast(ForecastOpts& o, OptionSet& opts) {
  require_set(o.checkpoint, "--checkpoint");
  require_set(o.panel, "--panel");
  std::ifstream ck_in(resolve_input(o.checkpoint));
  if (!ck_in) throw mortvi::Error("cannot open " + o.checkpoint);
  const auto ck = mortvi::read_checkpoint(ck_in);
  const auto panel = mortvi::read_panel_csv_file(resolve_input(o.panel));
  if (panel.n_ages() != ck.spec.n_ages)
    throw mortvi::ShapeError("panel age count does not match the checkpoint");
  if (o.horizon < 1) throw mortvi::ConfigError("horizon must be >= 1");
  if (o.seed == 0) o.seed = ck.config.seed ^ mortvi::forecast_seed_mix;

  const int last_train_year = ck.first_train_year + ck.guide.n_steps - 1;
  mortvi::Matrix exposures(panel.n_ages(), o.horizon);
  std::vector<int> carried;
  for (int h = 1; h <= o.horizon; ++h) {
    const int year = last_train_year + h;
    const int col = year <= panel.last_year() ? year - panel.first_year : panel.n_years() - 1;
    if (year > panel.last_year()) carried.push_back(year);
    for (int a = 0; a < panel.n_ages(); ++a) exposures(a, h - 1) = panel.exposures(a, col);
  }
  if (!carried.empty())
    std::cerr << "note: exposures carried forward from " << panel.last_year() << " for "
              << carried.size() << " forecast year(s)\n";

  const auto final_state = mortvi::final_state_distribution(ck.guide);
  const auto fc = mortvi::forecast_latent(final_state, ck.model.dyn, o.horizon);
  const auto rates =
      mortvi::forecast_rates(fc, ck.model.emission, exposures, o.samples, o.seed);

  std::string csv = "age,year,horizon,mean_rate,sd_rate,mean_deaths\n";
  for (int h = 0; h < o.horizon; ++h)
    for (int a = 0; a < panel.n_ages(); ++a)
      csv += std::to_string(a) + "," + std::to_string(last_train_year + h + 1) + "," +
             std::to_string(h + 1) + "," + mortvi::format_double(rates.at(rates.mean_rate, a, h)) +
             "," + mortvi::format_double(rates.at(rates.sd_rate, a, h)) + "," +
             mortvi::format_double(rates.at(rates.mean_deaths, a, h)) + "\n";
  write_file(o.output, csv);
  opts.write_sidecar(o.output, "forecast");
  return 0;
}

// ---- evaluate / compare -----------------------------------------------------

struct EvaluateOpts {
  std::string panel, model = "affine", output = "report.csv", aggregate, config;
  int latent_dim = 3, rbf_count = 15;
  double tau = 10.0;
  long long steps = 10000;
  double learning_rate = 0.01, lr_decay = 0.0;
  int mc_samples = 1, convergence_window = 500;
  int samples = 1000;
  int first_train_year_begin = 0, first_train_year_end = 0;
  int train_len = 60, eval_len = 10, jobs = 1;
  unsigned long long seed = 1;
  bool skip_failed = false;
};

struct NamedModel {
  std::string name;
  mortvi::WindowModel run;
};

NamedModel named_model(const std::string& model, int latent_dim, int rbf_count, double tau,
                       const mortvi::TrainConfig& train, int samples) {
  if (model == "lee-carter") {
    mortvi::LeeCarterWindowOptions lc;
    lc.predictive_samples = samples;
    return {"lee-carter", mortvi::make_lee_carter_window_model(lc)};
  }
  mortvi::VIWindowOptions vi;
  vi.spec = model_spec_of(model, latent_dim, rbf_count, tau);
  vi.train = train;
  vi.predictive_samples = samples;
  std::string name = model + "-d" + std::to_string(latent_dim);
  if (vi.spec.kind == mortvi::EmissionKind::rbf) name += "-p" + std::to_string(rbf_count);
  return {name, mortvi::make_vi_window_model(vi)};
}

mortvi::SweepSpec sweep_of(const EvaluateOpts& o) {
  if (o.first_train_year_begin == 0 || o.first_train_year_end == 0)
    throw mortvi::ConfigError("--first-train-year-begin and --first-train-year-end are required");
  mortvi::SweepSpec sweep;
  sweep.first_train_year_begin = o.first_train_year_begin;
  sweep.first_train_year_end = o.first_train_year_end;
  sweep.train_len = o.train_len;
  sweep.eval_len = o.eval_len;
  sweep.base_seed = o.seed;
  sweep.jobs = o.jobs;
  sweep.skip_failed = o.skip_failed;
  return sweep;
}

mortvi::TrainConfig train_config_of(const EvaluateOpts& o) {
  mortvi::TrainConfig cfg;
  cfg.steps = o.steps;
  cfg.learning_rate = o.learning_rate;
  cfg.lr_decay = o.lr_decay;
  cfg.mc_samples = o.mc_samples;
  cfg.convergence_window = o.convergence_window;
  return cfg;
}

void report_rounding(const mortvi::ScoreReport& report) {
  long long rounded = 0;
  for (const auto& w : report.windows) rounded += w.diag.rounded_cells;
  if (rounded > 0)
    std::cerr << "note: " << rounded << " fractional death counts rounded for scoring ("
              << report.model_name << ")\n";
}

int cmd_evaluate(EvaluateOpts& o, OptionSet& opts) {
  require_set(o.panel, "--panel");
  const auto panel = mortvi::read_panel_csv_file(resolve_input(o.panel));
  if (o.aggregate.empty()) o.aggregate = with_suffix(o.output, ".aggregate.json");
  const auto nm =
      named_model(o.model, o.latent_dim, o.rbf_count, o.tau, train_config_of(o), o.samples);
  const auto report = mortvi::rolling_evaluate(panel, nm.name, nm.run, sweep_of(o));
  report_rounding(report);

  std::ostringstream csv;
  mortvi::write_report_csv(csv, report);
  write_file(o.output, csv.str());
  std::ostringstream agg;
  mortvi::write_aggregate_json(agg, report);
  write_file(o.aggregate, agg.str());
  opts.write_sidecar(o.output, "evaluate");
  std::cerr << nm.name << ": mean log-score " << report.mean_log_score() << ", R^2 "
            << report.r2() << " over " << report.n_windows() << " windows\n";
  return 0;
}

struct CompareOpts {
  EvaluateOpts base;  // shared sweep/train options; model field unused
  std::vector<std::string> specs;
};

NamedModel parse_model_spec(const std::string& text, const EvaluateOpts& base) {
  const auto colon = text.find(':');
  const std::string model = text.substr(0, colon == std::string::npos ? text.size() : colon);
  int d = model == "rbf" ? 4 : 3;
  int p = 15;
  double tau = base.tau;
  if (colon != std::string::npos) {
    for (const auto part : mortvi::split_char(text.substr(colon + 1), ',')) {
      const auto eq = part.find('=');
      if (eq == std::string_view::npos)
        throw mortvi::ConfigError("bad model spec fragment '" + std::string(part) + "'");
      const auto key = part.substr(0, eq);
      const std::string val(part.substr(eq + 1));
      if (key == "d") d = std::stoi(val);
      else if (key == "p") p = std::stoi(val);
      else if (key == "tau") tau = std::stod(val);
      else throw mortvi::ConfigError("unknown model spec key '" + std::string(key) + "'");
    }
  }
  return named_model(model, d, p, tau, train_config_of(base), base.samples);
}

int cmd_compare(CompareOpts& o, OptionSet& opts) {
  require_set(o.base.panel, "--panel");
  const auto panel = mortvi::read_panel_csv_file(resolve_input(o.base.panel));
  if (o.base.aggregate.empty()) o.base.aggregate = with_suffix(o.base.output, ".aggregate.json");
  if (o.specs.empty()) o.specs = {"affine:d=3", "rbf:d=4,p=15", "lee-carter"};

  std::string csv = std::string(mortvi::report_csv_header) + "\n";
  std::string agg = "[\n";
  bool first = true;
  for (const auto& spec_text : o.specs) {
    const auto nm = parse_model_spec(spec_text, o.base);
    const auto report = mortvi::rolling_evaluate(panel, nm.name, nm.run, sweep_of(o.base));
    report_rounding(report);
    std::ostringstream rows;
    mortvi::write_report_rows(rows, report);
    csv += rows.str();
    if (!first) agg += ",\n";
    agg += mortvi::aggregate_json(report, "  ");
    first = false;
    std::cerr << nm.name << ": mean log-score " << report.mean_log_score() << ", R^2 "
              << report.r2() << "\n";
  }
  agg += "\n]\n";

  write_file(o.base.output, csv);
  write_file(o.base.aggregate, agg);
  opts.write_sidecar(o.base.output, "compare");
  return 0;
}

// ---- wiring -----------------------------------------------------------------

void add_train_options(OptionSet& opts, CLI::App* cmd, EvaluateOpts& o) {
  opts.bind(cmd, "--steps", o.steps, "optimization steps", "steps");
  opts.bind(cmd, "--learning-rate", o.learning_rate, "initial Adam step size", "learning_rate");
  opts.bind(cmd, "--lr-decay", o.lr_decay, "per-step learning rate factor (0 = auto)", "lr_decay");
  opts.bind(cmd, "--mc-samples", o.mc_samples, "ELBO samples per step", "mc_samples");
  opts.bind(cmd, "--convergence-window", o.convergence_window,
            "trailing steps for smoothed ELBO reporting", "convergence_window");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent-factor mortality model fitting, forecasting, and scoring"};
  app.require_subcommand(1);

  IngestOpts ingest;
  OptionSet ingest_opts;
  auto* cmd_in = app.add_subcommand("ingest", "convert HMD deaths/exposures text to a panel CSV");
  ingest_opts.bind(cmd_in, "--deaths", ingest.deaths, "HMD deaths file", "deaths");
  ingest_opts.bind(cmd_in, "--exposures", ingest.exposures, "HMD exposure-to-risk file", "exposures");
  ingest_opts.bind(cmd_in, "--sex", ingest.sex, "column: female, male, or total", "sex");
  ingest_opts.bind(cmd_in, "--age-cap", ingest.age_cap, "aggregate ages above this into one row",
                   "age_cap");
  ingest_opts.bind(cmd_in, "--first-year", ingest.first_year, "start year (0 = auto)", "first_year");
  ingest_opts.bind(cmd_in, "--last-year", ingest.last_year, "end year (0 = auto)", "last_year");
  ingest_opts.bind(cmd_in, "--output", ingest.output, "panel CSV path", "output");
  cmd_in->add_option("--config", ingest.config, "JSON config or sidecar to read options from");

  FitOpts fit;
  OptionSet fit_opts;
  auto* cmd_f = app.add_subcommand("fit", "fit a latent-factor model by variational inference");
  fit_opts.bind(cmd_f, "--panel", fit.panel, "panel CSV from ingest", "panel");
  fit_opts.bind(cmd_f, "--model", fit.model, "emission: affine or rbf", "model");
  fit_opts.bind(cmd_f, "--latent-dim", fit.latent_dim, "latent factor count", "latent_dim");
  fit_opts.bind(cmd_f, "--rbf-count", fit.rbf_count, "radial basis count (rbf only)", "rbf_count");
  fit_opts.bind(cmd_f, "--tau", fit.tau, "radial basis width parameter", "tau");
  fit_opts.bind(cmd_f, "--steps", fit.steps, "optimization steps", "steps");
  fit_opts.bind(cmd_f, "--learning-rate", fit.learning_rate, "initial Adam step size",
                "learning_rate");
  fit_opts.bind(cmd_f, "--lr-decay", fit.lr_decay, "per-step learning rate factor (0 = auto)",
                "lr_decay");
  fit_opts.bind(cmd_f, "--mc-samples", fit.mc_samples, "ELBO samples per step", "mc_samples");
  fit_opts.bind(cmd_f, "--convergence-window", fit.convergence_window,
                "trailing steps for smoothed ELBO reporting", "convergence_window");
  fit_opts.bind(cmd_f, "--seed", fit.seed, "RNG seed", "seed");
  fit_opts.bind(cmd_f, "--first-train-year", fit.first_train_year,
                "training window start (0 = panel start)", "first_train_year");
  fit_opts.bind(cmd_f, "--train-len", fit.train_len, "training window length in years (0 = to end)",
                "train_len");
  fit_opts.bind(cmd_f, "--output", fit.output, "checkpoint JSON path", "output");
  fit_opts.bind(cmd_f, "--trace", fit.trace, "ELBO trace CSV path (default derived from --output)",
                "trace");
  cmd_f->add_option("--config", fit.config, "JSON config or sidecar to read options from");

  ForecastOpts fc;
  OptionSet fc_opts;
  auto* cmd_fc = app.add_subcommand("forecast", "forecast rates and deaths from a checkpoint");
  fc_opts.bind(cmd_fc, "--checkpoint", fc.checkpoint, "checkpoint JSON from fit", "checkpoint");
  fc_opts.bind(cmd_fc, "--panel", fc.panel, "panel CSV supplying exposures", "panel");
  fc_opts.bind(cmd_fc, "--horizon", fc.horizon, "years ahead to forecast", "horizon");
  fc_opts.bind(cmd_fc, "--samples", fc.samples, "predictive sample paths", "samples");
  fc_opts.bind(cmd_fc, "--seed", fc.seed, "RNG seed (0 = derive from checkpoint)", "seed");
  fc_opts.bind(cmd_fc, "--output", fc.output, "forecast CSV path", "output");
  cmd_fc->add_option("--config", fc.config, "JSON config or sidecar to read options from");

  EvaluateOpts ev;
  OptionSet ev_opts;
  auto* cmd_ev = app.add_subcommand("evaluate", "rolling-window fit/forecast/score for one model");
  ev_opts.bind(cmd_ev, "--panel", ev.panel, "panel CSV from ingest", "panel");
  ev_opts.bind(cmd_ev, "--model", ev.model, "affine, rbf, or lee-carter", "model");
  ev_opts.bind(cmd_ev, "--latent-dim", ev.latent_dim, "latent factor count", "latent_dim");
  ev_opts.bind(cmd_ev, "--rbf-count", ev.rbf_count, "radial basis count (rbf only)", "rbf_count");
  ev_opts.bind(cmd_ev, "--tau", ev.tau, "radial basis width parameter", "tau");
  add_train_options(ev_opts, cmd_ev, ev);
  ev_opts.bind(cmd_ev, "--samples", ev.samples, "predictive sample paths", "samples");
  ev_opts.bind(cmd_ev, "--first-train-year-begin", ev.first_train_year_begin,
               "first window's training start year", "first_train_year_begin");
  ev_opts.bind(cmd_ev, "--first-train-year-end", ev.first_train_year_end,
               "last window's training start year (inclusive)", "first_train_year_end");
  ev_opts.bind(cmd_ev, "--train-len", ev.train_len, "training years per window", "train_len");
  ev_opts.bind(cmd_ev, "--eval-len", ev.eval_len, "evaluation years per window", "eval_len");
  ev_opts.bind(cmd_ev, "--seed", ev.seed, "base seed (window w uses seed + w)", "seed");
  ev_opts.bind(cmd_ev, "--jobs", ev.jobs, "windows to run in parallel", "jobs");
  ev_opts.bind_flag(cmd_ev, "--skip-failed", ev.skip_failed,
                    "record failed windows instead of aborting", "skip_failed");
  ev_opts.bind(cmd_ev, "--output", ev.output, "per-window report CSV path", "output");
  ev_opts.bind(cmd_ev, "--aggregate", ev.aggregate,
               "aggregate JSON path (default derived from --output)", "aggregate");
  cmd_ev->add_option("--config", ev.config, "JSON config or sidecar to read options from");

  CompareOpts cp;
  OptionSet cp_opts;
  auto* cmd_cp = app.add_subcommand("compare", "evaluate several models on the same windows");
  cp_opts.bind(cmd_cp, "--panel", cp.base.panel, "panel CSV from ingest", "panel");
  cp_opts.bind(cmd_cp, "--spec", cp.specs,
               "model spec, repeatable: affine[:d=3], rbf[:d=4,p=15], lee-carter", "specs");
  cp_opts.bind(cmd_cp, "--tau", cp.base.tau, "radial basis width parameter", "tau");
  add_train_options(cp_opts, cmd_cp, cp.base);
  cp_opts.bind(cmd_cp, "--samples", cp.base.samples, "predictive sample paths", "samples");
  cp_opts.bind(cmd_cp, "--first-train-year-begin", cp.base.first_train_year_begin,
               "first window's training start year", "first_train_year_begin");
  cp_opts.bind(cmd_cp, "--first-train-year-end", cp.base.first_train_year_end,
               "last window's training start year (inclusive)", "first_train_year_end");
  cp_opts.bind(cmd_cp, "--train-len", cp.base.train_len, "training years per window", "train_len");
  cp_opts.bind(cmd_cp, "--eval-len", cp.base.eval_len, "evaluation years per window", "eval_len");
  cp_opts.bind(cmd_cp, "--seed", cp.base.seed, "base seed (window w uses seed + w)", "seed");
  cp_opts.bind(cmd_cp, "--jobs", cp.base.jobs, "windows to run in parallel", "jobs");
  cp_opts.bind_flag(cmd_cp, "--skip-failed", cp.base.skip_failed,
                    "record failed windows instead of aborting", "skip_failed");
  cp_opts.bind(cmd_cp, "--output", cp.base.output, "combined report CSV path", "output");
  cp_opts.bind(cmd_cp, "--aggregate", cp.base.aggregate,
               "aggregate JSON path (default derived from --output)", "aggregate");
  cmd_cp->add_option("--config", cp.base.config, "JSON config or sidecar to read options from");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are configuration errors
  }

  try {
    if (cmd_in->parsed()) {
      ingest_opts.apply_config(ingest.config, "ingest");
      return cmd_ingest(ingest, ingest_opts);
    }
    if (cmd_f->parsed()) {
      fit_opts.apply_config(fit.config, "fit");
      return cmd_fit(fit, fit_opts);
    }
    if (cmd_fc->parsed()) {
      fc_opts.apply_config(fc.config, "forecast");
      return cmd_forecast(fc, fc_opts);
    }
    if (cmd_ev->parsed()) {
      ev_opts.apply_config(ev.config, "evaluate");
      return cmd_evaluate(ev, ev_opts);
    }
    if (cmd_cp->parsed()) {
      cp_opts.apply_config(cp.base.config, "compare");
      return cmd_compare(cp, cp_opts);
    }
  } catch (const mortvi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
