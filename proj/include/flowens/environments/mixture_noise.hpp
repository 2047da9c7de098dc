#pragma once

#include "flowens/core.hpp"

#include <array>
#include <random>

namespace flowens::envs {

/// 11-component Gaussian mixture pushed through the logistic function, used as
/// multi-modal action noise for the Pendulum.
class MixtureNoise {
public:
  static constexpr std::size_t kComponents = 11;

  MixtureNoise() {
    // The listed weights sum to 0.999; they are normalized here.
    double s = 0.0;
    for (double p : kWeights) s += p;
    for (std::size_t k = 0; k < kComponents; ++k) pi_[k] = kWeights[k] / s;
  }

  const std::array<double, kComponents>& weights() const { return pi_; }
  static constexpr const std::array<double, kComponents>& means() { return kMeans; }
  static constexpr const std::array<double, kComponents>& stds() { return kStds; }

  /// A draw before the logistic map.
  double sample_raw(Rng& rng) const {
    std::discrete_distribution<std::size_t> pick(pi_.begin(), pi_.end());
    const std::size_t k = pick(rng);
    return kMeans[k] + kStds[k] * std_normal(rng);
  }

  static double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

  /// A draw in (0, 1).
  double sample(Rng& rng) const { return logistic(sample_raw(rng)); }

private:
  static constexpr std::array<double, kComponents> kWeights{0.062, 0.128, 0.177, 0.001, 0.032, 0.273,
                                                            0.062, 0.033, 0.067, 0.022, 0.142};
  static constexpr std::array<double, kComponents> kMeans{0.508,  -2.059, 1.355,  -0.675, 0.504, 0.358,
                                                          -0.332, -0.647, 2.029,  -0.294, 0.868};
  static constexpr std::array<double, kComponents> kStds{0.274, 0.276, 0.067, 0.131, 0.028, 0.008,
                                                         0.024, 0.002, 0.008, 0.083, 0.574};
  std::array<double, kComponents> pi_{};
};

}  // namespace flowens::envs
