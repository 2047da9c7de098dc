#pragma once

#include "flowens/core.hpp"
#include "flowens/dataset.hpp"

#include <memory>
#include <span>

namespace flowens::envs {

/// Collection policies. 1D tasks: `random` is the generative recipe and
/// `uniform` draws x uniformly over the test range. Dynamics tasks: `random`
/// samples actions uniformly, `heuristic` is the scripted test policy.
enum class Policy { random, heuristic, uniform };

inline std::string to_string(Policy p) {
  switch (p) {
    case Policy::random: return "random";
    case Policy::heuristic: return "heuristic";
    case Policy::uniform: return "uniform";
  }
  return "?";
}

inline Policy parse_policy(const std::string& s) {
  if (s == "random") return Policy::random;
  if (s == "heuristic") return Policy::heuristic;
  if (s == "uniform") return Policy::uniform;
  throw ConfigError("unknown policy '" + s + "'");
}

/// A task with a ground-truth conditional p(y | x).
class Environment {
public:
  virtual ~Environment() = default;

  virtual std::string tag() const = 0;
  virtual std::size_t x_dim() const = 0;
  virtual std::size_t y_dim() const = 0;
  virtual bool is_dynamics() const = 0;

  /// n independent draws from p(y | x).
  virtual SampleMatrix truth(std::span<const double> x, std::size_t n, Rng& rng) const = 0;

  /// A dataset of n rows collected with `policy`.
  virtual Dataset collect(Policy policy, std::size_t n, Rng& rng) const = 0;

  /// Policy that gathers the held-out test set.
  virtual Policy test_policy() const = 0;

  /// Candidate inputs for acquisition, drawn like the training inputs.
  virtual SampleMatrix propose(std::size_t n, Rng& rng) const { return collect(Policy::random, n, rng).X; }

  /// One label per row of X from the truth.
  Dataset label(const SampleMatrix& X, Rng& rng) const {
    require_shape(static_cast<std::size_t>(X.cols()) == x_dim(), "inputs have wrong width");
    Dataset d{X, SampleMatrix(X.rows(), static_cast<Eigen::Index>(y_dim())), tag(), "acquired"};
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      d.Y.row(r) = truth(std::span<const double>(X.row(r).data(), x_dim()), 1, rng).row(0);
    return d;
  }
};

inline Dataset collect_transitions(const Environment& env, Policy policy, std::size_t n, Rng& rng) {
  if (n == 0) throw UsageError("collect needs n >= 1");
  return env.collect(policy, n, rng);
}

/// Shared machinery for x -> y tasks with a scalar input.
class OneDimEnvironment : public Environment {
public:
  std::size_t x_dim() const override { return 1; }
  std::size_t y_dim() const override { return 1; }
  bool is_dynamics() const override { return false; }
  Policy test_policy() const override { return Policy::uniform; }

  virtual double sample_x(Rng& rng) const = 0;
  virtual double sample_y(double x, Rng& rng) const = 0;
  /// Range of the uniform test inputs.
  virtual std::pair<double, double> test_range() const = 0;

  SampleMatrix truth(std::span<const double> x, std::size_t n, Rng& rng) const override {
    require_shape(x.size() == 1, "input has wrong length");
    SampleMatrix Y(static_cast<Eigen::Index>(n), 1);
    for (Eigen::Index i = 0; i < Y.rows(); ++i) Y(i, 0) = sample_y(x[0], rng);
    return Y;
  }

  Dataset collect(Policy policy, std::size_t n, Rng& rng) const override {
    if (policy == Policy::heuristic) throw ConfigError(tag() + " has no heuristic policy");
    Dataset d{SampleMatrix(static_cast<Eigen::Index>(n), 1), SampleMatrix(static_cast<Eigen::Index>(n), 1), tag(),
              to_string(policy)};
    const auto [lo, hi] = test_range();
    for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
      d.X(i, 0) = policy == Policy::uniform ? uniform(rng, lo, hi) : sample_x(rng);
      d.Y(i, 0) = sample_y(d.X(i, 0), rng);
    }
    return d;
  }
};

/// x from an equal-weight mixture of N(-4, 0.4), N(0, 0.9), N(4, 0.4);
/// y = 7 sin(x) + 3 z |cos(x/2)|.
class Hetero : public OneDimEnvironment {
public:
  std::string tag() const override { return "hetero"; }

  static double mean(double x) { return 7.0 * std::sin(x); }
  static double stddev(double x) { return 3.0 * std::abs(std::cos(x / 2.0)); }
  static double response(double x, double z) { return mean(x) + z * stddev(x); }

  double sample_x(Rng& rng) const override {
    static constexpr double mu[3] = {-4.0, 0.0, 4.0};
    static constexpr double sd[3] = {0.4, 0.9, 0.4};
    const std::size_t c = uniform_index(rng, 3);
    return mu[c] + sd[c] * std_normal(rng);
  }
  double sample_y(double x, Rng& rng) const override { return response(x, std_normal(rng)); }
  std::pair<double, double> test_range() const override { return {-5.0, 5.0}; }
};

/// x ~ Exponential(rate 2); with probability 1/2 y = 10 sin(x) + z, else
/// y = 10 cos(x) + z + 20 - x.
class Bimodal : public OneDimEnvironment {
public:
  std::string tag() const override { return "bimodal"; }

  static double branch(double x, int n, double z) {
    return n == 0 ? 10.0 * std::sin(x) + z : 10.0 * std::cos(x) + z + 20.0 - x;
  }

  double sample_x(Rng& rng) const override {
    std::exponential_distribution<double> e(2.0);
    return e(rng);
  }
  double sample_y(double x, Rng& rng) const override {
    const int n = uniform(rng, 0.0, 1.0) < 0.5 ? 0 : 1;
    return branch(x, n, std_normal(rng));
  }
  std::pair<double, double> test_range() const override { return {0.0, 2.0}; }
};

}  // namespace flowens::envs
