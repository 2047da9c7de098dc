#pragma once

// A DensityModel whose conditional at x is supplied by a callback.

#include "flowens/ensembles.hpp"

#include <functional>

namespace flowens::testing {

using ensembles::ConditionalDensity;
using ensembles::GaussianComponent;

/// Wraps a Gaussian mixture but hides the closed form, so the uncertainty
/// module treats it like a flow ensemble.
class OpaqueMixture : public ConditionalDensity {
public:
  explicit OpaqueMixture(std::vector<GaussianComponent> c) : inner_(std::move(c)) {}
  std::size_t components() const override { return inner_.components(); }
  std::size_t y_dim() const override { return inner_.y_dim(); }
  std::vector<double> component_log_prob(std::size_t w, const SampleMatrix& Y) const override {
    return inner_.component_log_prob(w, Y);
  }
  SampleMatrix component_sample(std::size_t w, std::size_t n, Rng& rng) const override {
    return inner_.component_sample(w, n, rng);
  }

private:
  ensembles::GaussianMixtureConditional inner_;
};

/// Point mass at f(x); log density is 0 on the atom and -inf elsewhere.
class PointMass : public ConditionalDensity {
public:
  explicit PointMass(std::vector<double> y) : y_(std::move(y)) {}
  std::size_t components() const override { return 1; }
  std::size_t y_dim() const override { return y_.size(); }
  std::vector<double> component_log_prob(std::size_t, const SampleMatrix& Y) const override {
    std::vector<double> out(static_cast<std::size_t>(Y.rows()));
    for (Eigen::Index r = 0; r < Y.rows(); ++r) {
      bool hit = true;
      for (std::size_t d = 0; d < y_.size(); ++d) hit = hit && Y(r, static_cast<Eigen::Index>(d)) == y_[d];
      out[static_cast<std::size_t>(r)] = hit ? 0.0 : -std::numeric_limits<double>::infinity();
    }
    return out;
  }
  SampleMatrix component_sample(std::size_t, std::size_t n, Rng&) const override {
    SampleMatrix S(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(y_.size()));
    for (Eigen::Index r = 0; r < S.rows(); ++r)
      for (std::size_t d = 0; d < y_.size(); ++d) S(r, static_cast<Eigen::Index>(d)) = y_[d];
    draw_counter() += n;
    return S;
  }

private:
  std::vector<double> y_;
};

class StubModel : public ensembles::DensityModel {
public:
  using Factory = std::function<std::unique_ptr<ConditionalDensity>(std::span<const double>)>;

  StubModel(ensembles::ModelKind kind, std::size_t x_dim, std::size_t y_dim, std::size_t M, Factory f)
      : f_(std::move(f)), M_(M) {
    cfg_.kind = kind;
    cfg_.x_dim = x_dim;
    cfg_.y_dim = y_dim;
    cfg_.components = M;
  }

  ensembles::ModelKind kind() const override { return cfg_.kind; }
  const ensembles::ModelConfig& config() const override { return cfg_; }
  std::size_t components() const override { return M_; }
  std::unique_ptr<ConditionalDensity> condition(std::span<const double> x) const override {
    ++*conditions_;
    return f_(x);
  }
  ensembles::TrainLog train(const Dataset&, const ensembles::TrainConfig& cfg, Rng&) override {
    ++*trains_;
    if (on_train) on_train(*trains_);
    ensembles::TrainLog log;
    log.loss.assign(cfg.steps, 0.0);
    return log;
  }
  std::unique_ptr<DensityModel> clone() const override { return std::make_unique<StubModel>(*this); }
  void save(const std::string&) const override {}
  std::vector<double> parameters() const override { return {param}; }

  std::size_t condition_calls() const { return *conditions_; }
  std::size_t train_calls() const { return *trains_; }

  std::function<void(std::size_t)> on_train;  // called with the running train count
  double param = 0.0;

private:
  ensembles::ModelConfig cfg_;
  Factory f_;
  std::size_t M_;
  // Shared between clones so a restored copy keeps counting.
  std::shared_ptr<std::size_t> conditions_ = std::make_shared<std::size_t>(0);
  std::shared_ptr<std::size_t> trains_ = std::make_shared<std::size_t>(0);
};

}  // namespace flowens::testing
