#pragma once

#include "flowens/ensembles/density_model.hpp"

#include <atomic>
#include <functional>

namespace flowens::ensembles {

/// Conditional made of M diagonal Gaussians in output space (PNE, MC dropout,
/// GP, hand-built test models).
class GaussianMixtureConditional : public ConditionalDensity {
public:
  explicit GaussianMixtureConditional(std::vector<GaussianComponent> comps) : comps_(std::move(comps)) {
    require_shape(!comps_.empty(), "mixture needs at least one component");
    for (const auto& c : comps_) {
      require_shape(c.mean.size() == comps_[0].mean.size() && c.sigma.size() == c.mean.size(),
                    "mixture components have inconsistent dims");
      for (double s : c.sigma)
        if (!(s > 0.0)) throw ShapeError("Gaussian component needs positive sigma");
    }
  }

  std::size_t components() const override { return comps_.size(); }
  std::size_t y_dim() const override { return comps_[0].mean.size(); }

  std::vector<double> component_log_prob(std::size_t w, const SampleMatrix& Y) const override {
    check_component(w);
    require_shape(static_cast<std::size_t>(Y.cols()) == y_dim(), "sample matrix has wrong width");
    return gaussian_log_prob_rows(comps_[w], Y);
  }

  SampleMatrix component_sample(std::size_t w, std::size_t n, Rng& rng) const override {
    check_component(w);
    return comps_[w].sample(n, rng);
  }

  const std::vector<GaussianComponent>* gaussian_components() const override { return &comps_; }

private:
  std::vector<GaussianComponent> comps_;
};

/// Density model whose components are given by a callback x -> Gaussians.
/// Not trainable; used to build models with known answers.
class FixedGaussianMixture : public DensityModel {
public:
  using Fn = std::function<std::vector<GaussianComponent>(std::span<const double>)>;

  FixedGaussianMixture(std::size_t x_dim, std::size_t y_dim, std::size_t M, Fn fn) : fn_(std::move(fn)) {
    cfg_.kind = ModelKind::fixed_mixture;
    cfg_.x_dim = x_dim;
    cfg_.y_dim = y_dim;
    cfg_.components = M;
  }

  ModelKind kind() const override { return ModelKind::fixed_mixture; }
  const ModelConfig& config() const override { return cfg_; }
  std::size_t components() const override { return cfg_.components; }

  std::unique_ptr<ConditionalDensity> condition(std::span<const double> x) const override {
    require_shape(x.size() == cfg_.x_dim, "input has wrong length");
    ++*calls_;
    auto comps = fn_(x);
    require_shape(comps.size() == cfg_.components, "callback returned wrong component count");
    return std::make_unique<GaussianMixtureConditional>(std::move(comps));
  }

  TrainLog train(const Dataset&, const TrainConfig&, Rng&) override { return {}; }
  std::unique_ptr<DensityModel> clone() const override { return std::make_unique<FixedGaussianMixture>(*this); }
  void save(const std::string&) const override { throw UsageError("fixed mixtures cannot be saved"); }
  std::vector<double> parameters() const override { return {}; }

  /// Number of condition() calls so far.
  std::size_t calls() const { return calls_->load(); }

private:
  ModelConfig cfg_;
  Fn fn_;
  std::shared_ptr<std::atomic<std::size_t>> calls_ = std::make_shared<std::atomic<std::size_t>>(0);
};

}  // namespace flowens::ensembles
