#pragma once

#include "flowens/environments/dataset_io.hpp"
#include "flowens/environments/environment.hpp"
#include "flowens/environments/mixture_noise.hpp"
#include "flowens/environments/pendulum.hpp"
#include "flowens/environments/wet_chicken.hpp"

namespace flowens::envs {

inline std::unique_ptr<Environment> make_environment(const std::string& tag) {
  if (tag == "hetero") return std::make_unique<Hetero>();
  if (tag == "bimodal") return std::make_unique<Bimodal>();
  if (tag == "wetchicken") return std::make_unique<WetChicken>();
  if (tag == "pendulum") return std::make_unique<Pendulum>();
  throw ConfigError("unknown environment '" + tag + "' (expected hetero, bimodal, wetchicken or pendulum)");
}

}  // namespace flowens::envs
