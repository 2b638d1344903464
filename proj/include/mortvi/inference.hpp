#pragma once

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
#include "mortvi/tape.hpp"

namespace mortvi {

struct TrainConfig {
  long long steps = 10000;
  double learning_rate = 0.01;
  // Per-step multiplicative factor in (0, 1]; 0 selects the default schedule,
  // which decays the rate by a factor of 10 over the run.
  double lr_decay = 0.0;
  int mc_samples = 1;
  std::uint64_t seed = 1;
  int convergence_window = 500;
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (cfg.lr_decay != 0.0 && !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0))
    throw ConfigError("lr_decay must lie in (0, 1], or 0 for the default schedule");
  if (cfg.mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
  if (cfg.convergence_window < 1) throw ConfigError("convergence_window must be >= 1");
}

inline double effective_lr_decay(const TrainConfig& cfg) {
  if (cfg.lr_decay != 0.0) return cfg.lr_decay;
  if (cfg.steps <= 1) return 1.0;
  return std::pow(0.1, 1.0 / static_cast<double>(cfg.steps));
}

// One ELBO Monte-Carlo term in plain double arithmetic.
namespace detail {

inline double elbo_term(const Params& model, const GuideParams& guide,
                        const MortalityPanel& panel, std::span<const double> noise) {
  const auto s = sample_path(guide, noise);
  return joint_logdensity(s.path, model, panel) - s.logq;
}

}  // namespace detail

// Mean of n one-sample ELBO terms, each from fresh reparameterized noise.
// Deterministic given the seed (a fixed draw order pins every term).
inline double elbo_estimate(const Params& model, const GuideParams& guide,
                            const MortalityPanel& panel, long long n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("elbo_estimate needs n >= 1");
  const std::size_t dim = static_cast<std::size_t>(2) * guide.n_factors * guide.n_steps;
  Rng rng(seed);
  std::vector<double> noise(dim);
  double acc = 0.0;
  for (long long k = 0; k < n; ++k) {
    for (auto& z : noise) z = rng.normal();
    const double term = detail::elbo_term(model, guide, panel, noise);
    if (!std::isfinite(term))
      throw EvalError("non-finite ELBO term at sample " + std::to_string(k));
    acc += term;
  }
  return acc / static_cast<double>(n);
}

// The ELBO estimator recorded once as a reusable expression graph. Leaves are
// the unconstrained model parameters, guide parameters, and the noise draws;
// each step writes new leaf values, replays the primals, and runs one backward
// sweep. The graph never needs re-recording because its structure depends only
// on shapes, not values.
class ElboGraph {
 public:
  ElboGraph(const Params& model_shape, const GuideParams& guide_shape,
            const MortalityPanel& panel, int n_samples) {
    if (n_samples < 1) throw ConfigError("ElboGraph needs n_samples >= 1");
    const ParamsT<Var> mv = lift_params(tape_, model_shape);
    for_each_param_vector(mv, [&](const std::vector<Var>& v) {
      model_leaves_.insert(model_leaves_.end(), v.begin(), v.end());
    });
    const GuideParamsT<Var> gv = lift_guide(tape_, guide_shape);
    for_each_guide_vector(gv, [&](const std::vector<Var>& v) {
      guide_leaves_.insert(guide_leaves_.end(), v.begin(), v.end());
    });

    const std::size_t per_sample =
        static_cast<std::size_t>(2) * guide_shape.n_factors * guide_shape.n_steps;
    noise_leaves_.reserve(per_sample * n_samples);
    std::vector<Var> terms;
    terms.reserve(n_samples);
    for (int k = 0; k < n_samples; ++k) {
      for (std::size_t j = 0; j < per_sample; ++j) noise_leaves_.push_back(tape_.leaf(0.0));
      const std::span<const Var> z(noise_leaves_.data() + k * per_sample, per_sample);
      const auto s = sample_path(gv, z);
      terms.push_back(joint_logdensity(s.path, mv, panel) - s.logq);
    }
    root_ = tape_.sum(std::span<const Var>(terms)) * (1.0 / n_samples);
  }

  std::size_t model_dim() const { return model_leaves_.size(); }
  std::size_t guide_dim() const { return guide_leaves_.size(); }
  std::size_t noise_dim() const { return noise_leaves_.size(); }
  std::size_t node_count() const { return tape_.size(); }

  double eval(std::span<const double> model_flat, std::span<const double> guide_flat,
              std::span<const double> noise) {
    set_inputs(model_flat, guide_flat, noise);
    tape_.replay();
    return root_.value();
  }

  // Returns the ELBO value and writes d(ELBO)/d(parameter) into the two grad
  // spans. Throws EvalError naming the first offending node if any primal is
  // non-finite.
  double eval_grad(std::span<const double> model_flat, std::span<const double> guide_flat,
                   std::span<const double> noise, std::span<double> grad_model,
                   std::span<double> grad_guide) {
    if (grad_model.size() != model_leaves_.size() || grad_guide.size() != guide_leaves_.size())
      throw ShapeError("gradient span size mismatch");
    set_inputs(model_flat, guide_flat, noise);
    tape_.replay();
    tape_.backward(root_);
    for (std::size_t j = 0; j < model_leaves_.size(); ++j)
      grad_model[j] = model_leaves_[j].adjoint();
    for (std::size_t j = 0; j < guide_leaves_.size(); ++j)
      grad_guide[j] = guide_leaves_[j].adjoint();
    return root_.value();
  }

 private:
  void set_inputs(std::span<const double> model_flat, std::span<const double> guide_flat,
                  std::span<const double> noise) {
    if (model_flat.size() != model_leaves_.size() || guide_flat.size() != guide_leaves_.size() ||
        noise.size() != noise_leaves_.size())
      throw ShapeError("input span size mismatch");
    for (std::size_t j = 0; j < model_flat.size(); ++j) tape_.set_leaf(model_leaves_[j], model_flat[j]);
    for (std::size_t j = 0; j < guide_flat.size(); ++j) tape_.set_leaf(guide_leaves_[j], guide_flat[j]);
    for (std::size_t j = 0; j < noise.size(); ++j) tape_.set_leaf(noise_leaves_[j], noise[j]);
  }

  Tape tape_;
  std::vector<Var> model_leaves_;
  std::vector<Var> guide_leaves_;
  std::vector<Var> noise_leaves_;
  Var root_;
};

struct ElboGrad {
  double elbo = 0.0;
  std::vector<double> grad_model;
  std::vector<double> grad_guide;
};

// Pathwise (reparameterized) gradient of the n-sample ELBO estimate. Uses the
// same noise stream as elbo_estimate, so the returned value matches it.
inline ElboGrad elbo_gradient(const Params& model, const GuideParams& guide,
                              const MortalityPanel& panel, long long n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("elbo_gradient needs n >= 1");
  ElboGraph graph(model, guide, panel, 1);
  const auto mflat = flatten(model);
  const auto gflat = flatten_guide(guide);

  ElboGrad out;
  out.grad_model.assign(graph.model_dim(), 0.0);
  out.grad_guide.assign(graph.guide_dim(), 0.0);
  std::vector<double> gm(graph.model_dim()), gg(graph.guide_dim()), noise(graph.noise_dim());
  Rng rng(seed);
  for (long long k = 0; k < n; ++k) {
    for (auto& z : noise) z = rng.normal();
    out.elbo += graph.eval_grad(mflat, gflat, noise, gm, gg);
    for (std::size_t j = 0; j < gm.size(); ++j) out.grad_model[j] += gm[j];
    for (std::size_t j = 0; j < gg.size(); ++j) out.grad_guide[j] += gg[j];
  }
  out.elbo /= static_cast<double>(n);
  for (auto& v : out.grad_model) v /= static_cast<double>(n);
  for (auto& v : out.grad_guide) v /= static_cast<double>(n);
  return out;
}

// Score-function (likelihood-ratio) gradient of the ELBO with respect to the
// guide parameters: mean over samples of (log p - log q) d(log q)/d(theta)
// with the sampled path held fixed. A statistical cross-check for the
// pathwise estimator, not a training path.
inline std::vector<double> score_function_gradient(const Params& model, const GuideParams& guide,
                                                   const MortalityPanel& panel, long long n,
                                                   std::uint64_t seed) {
  if (n < 1) throw ConfigError("score_function_gradient needs n >= 1");
  Tape tape;
  const GuideParamsT<Var> gv = lift_guide(tape, guide);
  std::vector<Var> guide_leaves;
  for_each_guide_vector(gv, [&](const std::vector<Var>& v) {
    guide_leaves.insert(guide_leaves.end(), v.begin(), v.end());
  });
  Path zero_path(guide.n_factors, guide.n_steps);
  PathT<Var> path_leaves = lift_path(tape, zero_path);
  const Var root = path_logdensity(gv, path_leaves);

  const std::size_t dim = static_cast<std::size_t>(2) * guide.n_factors * guide.n_steps;
  std::vector<double> grad(guide_leaves.size(), 0.0), noise(dim);
  Rng rng(seed);
  for (long long k = 0; k < n; ++k) {
    for (auto& z : noise) z = rng.normal();
    const auto s = sample_path(guide, std::span<const double>(noise));
    const double w = joint_logdensity(s.path, model, panel) - s.logq;
    if (!std::isfinite(w))
      throw EvalError("non-finite ELBO term at sample " + std::to_string(k));
    for (std::size_t j = 0; j < s.path.X.size(); ++j) tape.set_leaf(path_leaves.X[j], s.path.X[j]);
    for (std::size_t j = 0; j < s.path.K.size(); ++j) tape.set_leaf(path_leaves.K[j], s.path.K[j]);
    tape.replay();
    tape.backward(root);
    for (std::size_t j = 0; j < guide_leaves.size(); ++j) grad[j] += w * guide_leaves[j].adjoint();
  }
  for (auto& v : grad) v /= static_cast<double>(n);
  return grad;
}

// Adam with bias correction, run in ascent mode (the ELBO is maximized).
class Adam {
 public:
  explicit Adam(std::size_t dim, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps), m_(dim, 0.0), v_(dim, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw ShapeError("Adam dimension mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] += lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<double> m_, v_;
};

struct FitResult {
  ModelSpec spec;
  Params model_params;
  GuideParams guide_params;
  std::vector<double> elbo_trace;
  TrainConfig config;  // echoed with the effective lr_decay filled in
};

// Mean ELBO over the trailing `window` trace entries.
inline double smoothed_elbo(std::span<const double> trace, int window) {
  if (trace.empty()) throw RangeError("smoothed_elbo on an empty trace");
  const std::size_t n = std::min<std::size_t>(trace.size(), static_cast<std::size_t>(window));
  double acc = 0.0;
  for (std::size_t i = trace.size() - n; i < trace.size(); ++i) acc += trace[i];
  return acc / static_cast<double>(n);
}

// Single-loop stochastic gradient ascent on the ELBO from explicit starting
// values; model and guide parameters move jointly every step.
inline FitResult fit_from(const MortalityPanel& panel, const ModelSpec& spec, Params model,
                          GuideParams guide, const TrainConfig& cfg) {
  validate_train_config(cfg);
  FitResult out;
  out.spec = spec;
  out.config = cfg;
  out.config.lr_decay = effective_lr_decay(cfg);
  if (cfg.steps == 0) {
    out.model_params = std::move(model);
    out.guide_params = std::move(guide);
    return out;
  }

  ElboGraph graph(model, guide, panel, cfg.mc_samples);
  const std::size_t md = graph.model_dim(), gd = graph.guide_dim();
  std::vector<double> theta(md + gd), grad(md + gd), noise(graph.noise_dim());
  {
    const auto mflat = flatten(model);
    const auto gflat = flatten_guide(guide);
    std::copy(mflat.begin(), mflat.end(), theta.begin());
    std::copy(gflat.begin(), gflat.end(), theta.begin() + md);
  }
  const std::span<double> mspan(theta.data(), md), gspan(theta.data() + md, gd);
  const std::span<double> gm(grad.data(), md), gg(grad.data() + md, gd);

  Adam opt(theta.size());
  Rng noise_rng(cfg.seed + 1);  // model init consumes Rng(seed)
  double lr = cfg.learning_rate;
  out.elbo_trace.reserve(static_cast<std::size_t>(cfg.steps));
  for (long long step = 0; step < cfg.steps; ++step) {
    for (auto& z : noise) z = noise_rng.normal();
    double elbo;
    try {
      elbo = graph.eval_grad(mspan, gspan, noise, gm, gg);
    } catch (const EvalError& e) {
      throw FitError(e.what(), step, theta);
    }
    if (!std::isfinite(elbo)) throw FitError("non-finite ELBO estimate", step, theta);
    out.elbo_trace.push_back(elbo);
    opt.step(theta, grad, lr);
    lr *= out.config.lr_decay;
  }

  out.model_params = std::move(model);
  out.guide_params = std::move(guide);
  unflatten(out.model_params, mspan);
  unflatten_guide(out.guide_params, gspan);
  return out;
}

// Full pipeline: deterministic initialization from the training panel, then
// joint stochastic ascent. Bit-reproducible for a fixed config.
inline FitResult fit(const MortalityPanel& panel, const ModelSpec& spec, const TrainConfig& cfg) {
  ModelSpec full = spec;
  full.n_ages = panel.n_ages();
  validate_model_spec(full);
  Params model = init_model_params(full, panel, cfg.seed);
  GuideParams guide = init_guide_params(full.n_factors, panel);
  return fit_from(panel, full, std::move(model), std::move(guide), cfg);
}

}  // namespace mortvi
