#pragma once

#include "flowens/environments/environment.hpp"
#include "flowens/environments/mixture_noise.hpp"

namespace flowens::envs {

struct PendulumState {
  double theta = 0.0;  // 0 is upright
  double theta_dot = 0.0;
};

/// Classic-control pendulum whose applied torque is the commanded action plus
/// a_max * eps, eps drawn from MixtureNoise. Observations are
/// (cos theta, sin theta, theta_dot); inputs append the commanded action.
class Pendulum : public Environment {
public:
  static constexpr double kG = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kDt = 0.05;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;

  explicit Pendulum(std::size_t episode_length = 200) : episode_(episode_length) {
    if (episode_ == 0) throw ConfigError("episode length must be positive");
  }

  std::string tag() const override { return "pendulum"; }
  std::size_t x_dim() const override { return 4; }
  std::size_t y_dim() const override { return 3; }
  bool is_dynamics() const override { return true; }
  Policy test_policy() const override { return Policy::heuristic; }
  const MixtureNoise& noise() const { return noise_; }

  /// Deterministic update for commanded action a and noise value eps.
  static PendulumState step(PendulumState s, double a, double eps) {
    const double u = std::clamp(a + kMaxTorque * eps, -kMaxTorque, kMaxTorque);
    double thdot = s.theta_dot + (3.0 * kG / (2.0 * kLength) * std::sin(s.theta) + 3.0 / (kMass * kLength * kLength) * u) * kDt;
    thdot = std::clamp(thdot, -kMaxSpeed, kMaxSpeed);
    return {s.theta + thdot * kDt, thdot};
  }

  PendulumState step(PendulumState s, double a, Rng& rng) const { return step(s, a, noise_.sample(rng)); }

  static PendulumState from_observation(std::span<const double> obs) { return {std::atan2(obs[1], obs[0]), obs[2]}; }

  /// Energy-shaping swing-up with a PD catch near the top.
  static double heuristic_action(const PendulumState& s) {
    const double th = std::remainder(s.theta, 2.0 * M_PI);
    if (std::cos(th) > 0.85) return std::clamp(-(10.0 * th + 2.0 * s.theta_dot), -kMaxTorque, kMaxTorque);
    // Energy relative to upright rest (zero at the top).
    const double energy = 0.5 * s.theta_dot * s.theta_dot / 3.0 + 0.5 * kG / kLength * (std::cos(th) - 1.0);
    const double push = s.theta_dot >= 0.0 ? 1.0 : -1.0;
    return energy < 0.0 ? kMaxTorque * push : 0.0;
  }

  SampleMatrix truth(std::span<const double> x, std::size_t n, Rng& rng) const override {
    require_shape(x.size() == 4, "Pendulum input is (cos, sin, theta_dot, a)");
    const auto s0 = from_observation(x);
    SampleMatrix Y(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      const auto s = step(s0, x[3], rng);
      Y.row(i) << std::cos(s.theta), std::sin(s.theta), s.theta_dot;
    }
    return Y;
  }

  /// Episodes start at theta ~ U(-pi, pi), theta_dot ~ U(-1, 1).
  Dataset collect(Policy policy, std::size_t n, Rng& rng) const override {
    if (policy == Policy::uniform) throw ConfigError("Pendulum has no uniform policy");
    Dataset d{SampleMatrix(static_cast<Eigen::Index>(n), 4), SampleMatrix(static_cast<Eigen::Index>(n), 3), tag(),
              to_string(policy)};
    PendulumState s;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % episode_ == 0) s = {uniform(rng, -M_PI, M_PI), uniform(rng, -1.0, 1.0)};
      const double a = policy == Policy::random ? uniform(rng, -kMaxTorque, kMaxTorque) : heuristic_action(s);
      const auto r = static_cast<Eigen::Index>(i);
      d.X.row(r) << std::cos(s.theta), std::sin(s.theta), s.theta_dot, a;
      s = step(s, a, rng);
      d.Y.row(r) << std::cos(s.theta), std::sin(s.theta), s.theta_dot;
    }
    return d;
  }

private:
  std::size_t episode_;
  MixtureNoise noise_;
};

}  // namespace flowens::envs
