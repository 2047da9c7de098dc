#pragma once

#include "flowens/core.hpp"
#include "flowens/diffcore/tape.hpp"

#include <cmath>
#include <span>

namespace flowens::flows {

inline constexpr double kSigmaFloor = 1e-3;

/// sigma = softplus(s) + floor.
template <class T>
T sigma_from_raw(const T& s, double floor = kSigmaFloor) {
  return diff::softplus(s) + floor;
}

/// Raw value producing a given sigma.
inline double raw_from_sigma(double sigma, double floor = kSigmaFloor) {
  if (!(sigma > floor)) throw ConfigError("sigma must exceed the floor " + std::to_string(floor));
  return diff::softplus_inverse(sigma - floor);
}

/// log N(b; mu, sigma) for one coordinate.
template <class T>
T normal_log_prob(const T& b, const T& mu, const T& sigma) {
  const T z = (b - mu) / sigma;
  return -0.5 * kLog2Pi - diff::log(sigma) - 0.5 * z * z;
}

/// Diagonal Gaussian log-density.
inline double diag_gaussian_log_prob(std::span<const double> b, std::span<const double> mu,
                                     std::span<const double> sigma) {
  double lp = 0.0;
  for (std::size_t d = 0; d < b.size(); ++d) lp += normal_log_prob(b[d], mu[d], sigma[d]);
  return lp;
}

/// Differential entropy 0.5 * log det(2 pi e Sigma) of a diagonal Gaussian.
inline double diag_gaussian_entropy(std::span<const double> sigma) {
  double h = 0.0;
  for (double s : sigma) h += kStdNormalEntropy + std::log(s);
  return h;
}

}  // namespace flowens::flows
