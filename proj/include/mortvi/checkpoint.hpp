#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mortvi/error.hpp"
#include "mortvi/guide.hpp"
#include "mortvi/inference.hpp"
#include "mortvi/model.hpp"

namespace mortvi {

inline constexpr const char* checkpoint_format = "mortvi-checkpoint";
inline constexpr int checkpoint_version = 1;

// Everything needed to resume or forecast from a fit: the model variant and
// shapes, all unconstrained parameter values, the guide, the training config
// (seed included), and the training window's position in calendar time.
struct CheckpointData {
  ModelSpec spec;
  Params model;
  GuideParams guide;
  TrainConfig config;
  int first_train_year = 0;
};

namespace detail {

inline nlohmann::json vec_json(const std::vector<double>& v) { return nlohmann::json(v); }

inline std::vector<double> json_vec(const nlohmann::json& j, const char* key, std::size_t want) {
  if (!j.contains(key)) throw DataError(std::string("checkpoint missing field: ") + key);
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != want)
    throw DataError(std::string("checkpoint field ") + key + " has wrong length");
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const CheckpointData& c) {
  nlohmann::json j;
  j["format"] = checkpoint_format;
  j["version"] = checkpoint_version;
  j["first_train_year"] = c.first_train_year;

  nlohmann::json m;
  m["kind"] = emission_kind_name(c.spec.kind);
  m["n_ages"] = c.spec.n_ages;
  m["n_factors"] = c.spec.n_factors;
  m["n_basis"] = c.spec.n_basis;
  m["tau"] = c.spec.tau;
  if (c.spec.kind == EmissionKind::affine) {
    m["A"] = detail::vec_json(c.model.emission.A);
  } else {
    m["w"] = detail::vec_json(c.model.emission.w);
    m["centers"] = detail::vec_json(c.model.emission.centers);
  }
  m["b"] = detail::vec_json(c.model.emission.b);
  m["mu"] = detail::vec_json(c.model.dyn.mu);
  m["phi_u"] = detail::vec_json(c.model.dyn.phi_u);
  m["sx_u"] = detail::vec_json(c.model.dyn.sx_u);
  m["sk_u"] = detail::vec_json(c.model.dyn.sk_u);
  j["model"] = m;

  nlohmann::json g;
  g["n_factors"] = c.guide.n_factors;
  g["n_steps"] = c.guide.n_steps;
  g["mu_x"] = detail::vec_json(c.guide.mu_x);
  g["alpha"] = detail::vec_json(c.guide.alpha);
  g["mu_k"] = detail::vec_json(c.guide.mu_k);
  g["beta"] = detail::vec_json(c.guide.beta);
  g["rho"] = detail::vec_json(c.guide.rho);
  g["sx_u"] = detail::vec_json(c.guide.sx_u);
  g["sk_u"] = detail::vec_json(c.guide.sk_u);
  j["guide"] = g;

  nlohmann::json t;
  t["steps"] = c.config.steps;
  t["learning_rate"] = c.config.learning_rate;
  t["lr_decay"] = c.config.lr_decay;
  t["mc_samples"] = c.config.mc_samples;
  t["seed"] = c.config.seed;
  t["convergence_window"] = c.config.convergence_window;
  j["train"] = t;

  out << j.dump(2) << "\n";
}

inline CheckpointData read_checkpoint(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!j.contains("format") || j.at("format") != checkpoint_format)
    throw DataError("not a checkpoint file (format tag missing or wrong)");
  if (!j.contains("version") || j.at("version").get<int>() != checkpoint_version)
    throw DataError("unsupported checkpoint version");

  CheckpointData c;
  try {
    c.first_train_year = j.at("first_train_year").get<int>();

    const auto& m = j.at("model");
    c.spec.kind = parse_emission_kind(m.at("kind").get<std::string>());
    c.spec.n_ages = m.at("n_ages").get<int>();
    c.spec.n_factors = m.at("n_factors").get<int>();
    c.spec.n_basis = m.at("n_basis").get<int>();
    c.spec.tau = m.at("tau").get<double>();
    validate_model_spec(c.spec);

    const std::size_t A = static_cast<std::size_t>(c.spec.n_ages);
    const std::size_t d = static_cast<std::size_t>(c.spec.n_factors);
    c.model.emission.kind = c.spec.kind;
    c.model.emission.n_ages = c.spec.n_ages;
    c.model.emission.n_factors = c.spec.n_factors;
    c.model.emission.n_basis = c.spec.kind == EmissionKind::rbf ? c.spec.n_basis : 0;
    c.model.emission.tau = c.spec.tau;
    if (c.spec.kind == EmissionKind::affine) {
      c.model.emission.A = detail::json_vec(m, "A", A * d);
    } else {
      const std::size_t p = static_cast<std::size_t>(c.spec.n_basis);
      c.model.emission.w = detail::json_vec(m, "w", p * d);
      c.model.emission.centers = detail::json_vec(m, "centers", p);
    }
    c.model.emission.b = detail::json_vec(m, "b", A);
    c.model.dyn.mu = detail::json_vec(m, "mu", d);
    c.model.dyn.phi_u = detail::json_vec(m, "phi_u", d);
    c.model.dyn.sx_u = detail::json_vec(m, "sx_u", d);
    c.model.dyn.sk_u = detail::json_vec(m, "sk_u", d);
    validate_emission(c.model.emission);

    const auto& g = j.at("guide");
    c.guide.n_factors = g.at("n_factors").get<int>();
    c.guide.n_steps = g.at("n_steps").get<int>();
    if (c.guide.n_factors != c.spec.n_factors)
      throw DataError("checkpoint guide factor count does not match the model");
    const std::size_t dt = static_cast<std::size_t>(c.guide.n_factors) * c.guide.n_steps;
    c.guide.mu_x = detail::json_vec(g, "mu_x", dt);
    c.guide.alpha = detail::json_vec(g, "alpha", dt);
    c.guide.mu_k = detail::json_vec(g, "mu_k", dt);
    c.guide.beta = detail::json_vec(g, "beta", dt);
    c.guide.rho = detail::json_vec(g, "rho", dt);
    c.guide.sx_u = detail::json_vec(g, "sx_u", d);
    c.guide.sk_u = detail::json_vec(g, "sk_u", d);
    validate_guide(c.guide);

    const auto& t = j.at("train");
    c.config.steps = t.at("steps").get<long long>();
    c.config.learning_rate = t.at("learning_rate").get<double>();
    c.config.lr_decay = t.at("lr_decay").get<double>();
    c.config.mc_samples = t.at("mc_samples").get<int>();
    c.config.seed = t.at("seed").get<std::uint64_t>();
    c.config.convergence_window = t.at("convergence_window").get<int>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  return c;
}

}  // namespace mortvi
