#pragma once

#include "flowens/diffcore/adam.hpp"
#include "flowens/diffcore/checkpoint.hpp"
#include "flowens/ensembles/density_model.hpp"
#include "flowens/ensembles/mask_set.hpp"
#include "flowens/ensembles/model_io.hpp"
#include "flowens/flows/flow_model.hpp"

namespace flowens::ensembles {

/// Conditional of a flow ensemble at one x: one bound flow per component.
class FlowConditional : public ConditionalDensity {
public:
  FlowConditional(std::vector<flows::FlowModel::Bound> bound, bool shared_transform)
      : bound_(std::move(bound)), shared_(shared_transform) {
    if (shared_) {
      for (const auto& b : bound_) base_.push_back({b.base_mean(), b.base_sigma()});
    }
  }

  std::size_t components() const override { return bound_.size(); }
  std::size_t y_dim() const override { return bound_[0].y_dim(); }

  std::vector<double> component_log_prob(std::size_t w, const SampleMatrix& Y) const override {
    check_component(w);
    return bound_[w].log_prob(Y);
  }

  SampleMatrix component_sample(std::size_t w, std::size_t n, Rng& rng) const override {
    check_component(w);
    return bound_[w].sample(n, rng);
  }

  const std::vector<GaussianComponent>* base_components() const override { return shared_ ? &base_ : nullptr; }
  bool has_shared_transform() const override { return shared_; }

  SampleMatrix shared_forward(const SampleMatrix& B, std::vector<double>* logdet) const override {
    if (!shared_) return ConditionalDensity::shared_forward(B, logdet);
    return bound_[0].forward(B, logdet);
  }

  SampleMatrix shared_inverse(const SampleMatrix& Y, std::vector<double>* logdet) const override {
    if (!shared_) return ConditionalDensity::shared_inverse(Y, logdet);
    return bound_[0].inverse(Y, logdet);
  }

  /// With a shared transform the inverse is computed once for all components.
  std::vector<double> mixture_log_prob(const SampleMatrix& Y) const override {
    if (!shared_) return ConditionalDensity::mixture_log_prob(Y);
    std::vector<double> ld;
    SampleMatrix B = bound_[0].inverse(Y, &ld);
    std::vector<std::vector<double>> lp;
    for (const auto& g : base_) lp.push_back(gaussian_log_prob_rows(g, B));
    auto mix = uniform_mixture(lp);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += ld[i];
    return mix;
  }

  const flows::FlowModel::Bound& bound(std::size_t w) const { return bound_.at(w); }

private:
  std::vector<flows::FlowModel::Bound> bound_;
  bool shared_;
  std::vector<GaussianComponent> base_;
};

/// Flow ensembles over fixed dropout masks.
///  - nflows_out:  masks on the spline conditioners, shared unmasked base.
///  - nflows_base: masks on the base network, shared unmasked splines.
///  - nflows:      a single unmasked flow (M = 1, keep = 1).
class FlowEnsemble : public DensityModel {
public:
  explicit FlowEnsemble(ModelConfig cfg) : cfg_(std::move(cfg)) {
    if (!is_flow(cfg_.kind)) throw ConfigError("FlowEnsemble needs a flow model kind");
    if (cfg_.kind == ModelKind::nflows) {
      cfg_.components = 1;
      cfg_.keep_prob = 1.0;
    }
    if (cfg_.components == 0) throw ConfigError("ensemble needs at least one component");
    if (!(cfg_.keep_prob > 0.0 && cfg_.keep_prob <= 1.0)) throw ConfigError("keep_prob must lie in (0, 1]");
    flows::FlowConfig fc;
    fc.x_dim = cfg_.x_dim;
    fc.y_dim = cfg_.y_dim;
    fc.transforms = cfg_.transforms;
    fc.hidden_layers = cfg_.hidden_layers;
    fc.hidden_units = cfg_.hidden_units;
    fc.spline = cfg_.spline();
    flow_ = flows::FlowModel(fc, store_, "flow");
    Rng rng(cfg_.init_seed);
    flow_.init(store_, rng);
    if (base_masked()) flow_.init_base_output(store_, rng, 1.0);
    const auto sizes = base_masked() ? flow_.base_mask_sizes() : flow_.cond_mask_sizes();
    masks_ = MaskSet(cfg_.components, cfg_.keep_prob, sizes, rng);
  }

  ModelKind kind() const override { return cfg_.kind; }
  const ModelConfig& config() const override { return cfg_; }
  std::size_t components() const override { return cfg_.components; }

  bool base_masked() const { return cfg_.kind == ModelKind::nflows_base; }

  flows::FlowMasks masks_for(std::size_t w) const {
    if (cfg_.kind == ModelKind::nflows) return {};
    if (base_masked()) return {&masks_[w], nullptr};
    return {nullptr, &masks_[w]};
  }

  std::unique_ptr<ConditionalDensity> condition(std::span<const double> x) const override {
    std::vector<flows::FlowModel::Bound> bound;
    bound.reserve(cfg_.components);
    for (std::size_t w = 0; w < cfg_.components; ++w) bound.push_back(flow_.bind(store_, x, masks_for(w)));
    return std::make_unique<FlowConditional>(std::move(bound), base_masked());
  }

  TrainLog train(const Dataset& data, const TrainConfig& tc, Rng& rng) override {
    detail::check_training_data(data, cfg_.x_dim, cfg_.y_dim);
    if (tc.normalize && !normalized_) {
      flow_.set_normalizer(flows::Normalizer::fit(data.X, data.Y));
      normalized_ = true;
    }
    return detail::gradient_loop(store_, adam_, data, tc, cfg_.components, rng,
                                 [this](diff::Tape& tape, std::size_t w, const SampleMatrix& X, const SampleMatrix& Y,
                                        Rng&) { return flow_.nll_loss(tape, X, Y, masks_for(w)); });
  }

  std::unique_ptr<DensityModel> clone() const override { return std::make_unique<FlowEnsemble>(*this); }

  void save(const std::string& path) const override {
    masks_.verify();
    diff::SectionWriter st;
    st.put<std::uint8_t>(normalized_ ? 1 : 0);
    diff::save_checkpoint(path, store_,
                          {{detail::kConfigTag, detail::encode_fields(cfg_.to_fields())},
                           {detail::kNormTag, flow_.normalizer().encode()},
                           {detail::kMaskTag, masks_.encode()},
                           {detail::kAdamTag, detail::encode_adam(adam_)},
                           {detail::kStateTag, st.bytes()}},
                          detail::manifest_fields(cfg_));
  }

  /// Restores parameters, masks, normalizer and optimizer state.
  void restore(const diff::Checkpoint& ck) {
    diff::restore_params(store_, ck);
    flow_.set_normalizer(flows::Normalizer::decode(detail::section(ck, detail::kNormTag)));
    MaskSet m = MaskSet::decode(detail::section(ck, detail::kMaskTag));
    if (m.size() != cfg_.components) throw IoError("checkpoint mask count does not match components");
    masks_ = std::move(m);
    adam_ = detail::decode_adam(detail::section(ck, detail::kAdamTag));
    diff::SectionReader st(detail::section(ck, detail::kStateTag));
    normalized_ = st.get<std::uint8_t>() != 0;
  }

  std::vector<double> parameters() const override { return {store_.values().begin(), store_.values().end()}; }

  /// Parameters seen by component w: masked hidden units zeroed (their
  /// outgoing and incoming weights), the rest scaled as in the forward pass.
  std::vector<double> component_parameters(std::size_t w) const {
    std::vector<double> p = parameters();
    const auto& mask = masks_[w];
    auto zero_units = [&](const diff::Mlp& net, std::size_t first) {
      const auto& spec = net.spec();
      for (std::size_t l = 0; l < spec.hidden_layers; ++l) {
        const auto& bits = mask.layers[first + l];
        for (std::size_t u = 0; u < spec.hidden_units; ++u) {
          if (bits[u]) continue;
          for (std::size_t i = 0; i < spec.fan_in(l); ++i) p[net.weight_offset(l) + u * spec.fan_in(l) + i] = 0.0;
          p[net.bias_offset(l) + u] = 0.0;
          for (std::size_t o = 0; o < spec.fan_out(l + 1); ++o) p[net.weight_offset(l + 1) + o * spec.fan_in(l + 1) + u] = 0.0;
        }
      }
    };
    if (cfg_.kind == ModelKind::nflows) return p;
    if (base_masked()) {
      zero_units(flow_.base_net(), 0);
    } else {
      for (std::size_t j = 0; j < flow_.layer_count(); ++j) zero_units(flow_.conditioner(j), j * cfg_.hidden_layers);
    }
    return p;
  }

  const flows::FlowModel& flow() const { return flow_; }
  diff::ParamStore& store() { return store_; }
  const diff::ParamStore& store() const { return store_; }
  const MaskSet& masks() const { return masks_; }

private:
  ModelConfig cfg_;
  diff::ParamStore store_;
  flows::FlowModel flow_;
  MaskSet masks_;
  diff::AdamState adam_;
  bool normalized_ = false;
};

}  // namespace flowens::ensembles
