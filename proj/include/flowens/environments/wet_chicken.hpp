#pragma once

#include "flowens/environments/environment.hpp"

namespace flowens::envs {

struct WetChickenState {
  double x = 0.0;  // across the river, [0, w]
  double y = 0.0;  // downstream, [0, l]
};

/// Canoe on a river of length l and width w with a waterfall at y = l.
class WetChicken : public Environment {
public:
  static constexpr double kLength = 5.0;
  static constexpr double kWidth = 5.0;

  explicit WetChicken(std::size_t episode_length = 100) : episode_(episode_length) {
    if (episode_ == 0) throw ConfigError("episode length must be positive");
  }

  std::string tag() const override { return "wetchicken"; }
  std::size_t x_dim() const override { return 4; }
  std::size_t y_dim() const override { return 2; }
  bool is_dynamics() const override { return true; }
  Policy test_policy() const override { return Policy::heuristic; }

  /// One transition with the turbulence draw tau in [-1, 1] given.
  static WetChickenState step(WetChickenState s, double ax, double ay, double tau) {
    const double v = 3.0 * s.x / kWidth;
    const double turb = 3.5 - v;
    const double y_hat = s.y + (ay - 1.0) + v + turb * tau;
    WetChickenState n;
    if (s.x + ax < 0.0 || y_hat > kLength)
      n.x = 0.0;
    else if (s.x + ax > kWidth)
      n.x = kWidth;
    else
      n.x = s.x + ax;
    if (s.y + ay < 0.0 || y_hat > kLength)
      n.y = 0.0;
    else
      n.y = std::max(y_hat, 0.0);  // the printed cases leave y_hat < 0 open; held at the bank
    return n;
  }

  static WetChickenState step(WetChickenState s, double ax, double ay, Rng& rng) {
    if (std::abs(ax) > 1.0 || std::abs(ay) > 1.0) {
      warn("Wet Chicken action outside [-1, 1]^2 clamped");
      ax = std::clamp(ax, -1.0, 1.0);
      ay = std::clamp(ay, -1.0, 1.0);
    }
    return step(s, ax, ay, uniform(rng, -1.0, 1.0));
  }

  /// Scripted test policy: hold x near 1 (little drift, moderate turbulence)
  /// and paddle toward y = 3.5, with a little action noise.
  static std::pair<double, double> heuristic_action(const WetChickenState& s, Rng& rng) {
    const double ax = std::clamp(0.5 * (1.0 - s.x) + uniform(rng, -0.2, 0.2), -1.0, 1.0);
    const double ay = std::clamp(0.5 * (3.5 - s.y) + uniform(rng, -0.2, 0.2), -1.0, 1.0);
    return {ax, ay};
  }

  SampleMatrix truth(std::span<const double> x, std::size_t n, Rng& rng) const override {
    require_shape(x.size() == 4, "Wet Chicken input is (x, y, a_x, a_y)");
    SampleMatrix Y(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      const auto s = step(WetChickenState{x[0], x[1]}, x[2], x[3], rng);
      Y(i, 0) = s.x;
      Y(i, 1) = s.y;
    }
    return Y;
  }

  /// Episodes of fixed length from the origin.
  Dataset collect(Policy policy, std::size_t n, Rng& rng) const override {
    if (policy == Policy::uniform) throw ConfigError("Wet Chicken has no uniform policy");
    Dataset d{SampleMatrix(static_cast<Eigen::Index>(n), 4), SampleMatrix(static_cast<Eigen::Index>(n), 2), tag(),
              to_string(policy)};
    WetChickenState s;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % episode_ == 0) s = {};
      double ax, ay;
      if (policy == Policy::random) {
        ax = uniform(rng, -1.0, 1.0);
        ay = uniform(rng, -1.0, 1.0);
      } else {
        std::tie(ax, ay) = heuristic_action(s, rng);
      }
      const auto r = static_cast<Eigen::Index>(i);
      d.X.row(r) << s.x, s.y, ax, ay;
      s = step(s, ax, ay, rng);
      d.Y.row(r) << s.x, s.y;
    }
    return d;
  }

private:
  std::size_t episode_;
};

}  // namespace flowens::envs
