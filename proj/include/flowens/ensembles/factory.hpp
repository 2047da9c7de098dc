#pragma once

#include "flowens/ensembles/flow_ensemble.hpp"
#include "flowens/ensembles/gaussian_nets.hpp"
#include "flowens/ensembles/gp.hpp"

namespace flowens::ensembles {

inline std::unique_ptr<DensityModel> make_model(const ModelConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::nflows:
    case ModelKind::nflows_out:
    case ModelKind::nflows_base:
      return std::make_unique<FlowEnsemble>(cfg);
    case ModelKind::pne:
    case ModelKind::mc_dropout:
      return std::make_unique<GaussianNetModel>(cfg);
    case ModelKind::gp:
      return std::make_unique<GpModel>(cfg);
    case ModelKind::fixed_mixture:
      break;
  }
  throw ConfigError("model kind " + to_string(cfg.kind) + " cannot be built from a config");
}

inline std::unique_ptr<DensityModel> load_model(const std::string& path) {
  const diff::Checkpoint ck = diff::load_checkpoint(path);
  const ModelConfig cfg = ModelConfig::from_fields(detail::decode_fields(detail::section(ck, detail::kConfigTag)));
  auto model = make_model(cfg);
  if (auto* f = dynamic_cast<FlowEnsemble*>(model.get())) {
    f->restore(ck);
  } else if (auto* g = dynamic_cast<GaussianNetModel*>(model.get())) {
    g->restore(ck);
  } else if (auto* gp = dynamic_cast<GpModel*>(model.get())) {
    gp->restore(ck);
  }
  return model;
}

/// Architecture per model kind and environment (hidden layers x units, number
/// of spline transforms), M = 5 and keep probability 0.5.
inline ModelConfig default_config(ModelKind kind, const std::string& env, std::size_t x_dim, std::size_t y_dim) {
  ModelConfig c;
  c.kind = kind;
  c.x_dim = x_dim;
  c.y_dim = y_dim;
  c.components = 5;
  c.keep_prob = 0.5;
  const bool pendulum = env == "pendulum";
  const bool small = env == "hetero";
  if (env != "hetero" && env != "bimodal" && env != "wetchicken" && env != "pendulum")
    throw ConfigError("unknown environment '" + env + "'");
  switch (kind) {
    case ModelKind::nflows:
      c.components = 1;
      c.keep_prob = 1.0;
      c.hidden_layers = pendulum ? 2 : 1;
      c.hidden_units = pendulum || small ? 10 : 100;
      c.transforms = pendulum ? 2 : 1;
      break;
    case ModelKind::nflows_out:
    case ModelKind::nflows_base:
      c.hidden_layers = pendulum ? 2 : 1;
      c.hidden_units = pendulum || small ? 20 : 200;
      c.transforms = pendulum ? 2 : 1;
      break;
    case ModelKind::pne:
      c.hidden_layers = 3;
      c.hidden_units = 50;
      break;
    case ModelKind::mc_dropout:
      c.hidden_layers = 5;
      c.hidden_units = 400;
      c.test_masks = 20;
      break;
    case ModelKind::gp:
      c.components = 1;
      break;
    case ModelKind::fixed_mixture:
      throw ConfigError("fixed mixtures have no defaults");
  }
  return c;
}

}  // namespace flowens::ensembles
