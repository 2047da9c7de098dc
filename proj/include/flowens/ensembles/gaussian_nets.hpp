#pragma once

#include "flowens/diffcore/adam.hpp"
#include "flowens/diffcore/checkpoint.hpp"
#include "flowens/diffcore/mlp.hpp"
#include "flowens/ensembles/density_model.hpp"
#include "flowens/ensembles/gaussian_mixture.hpp"
#include "flowens/ensembles/mask_set.hpp"
#include "flowens/ensembles/model_io.hpp"
#include "flowens/flows/gaussian_base.hpp"
#include "flowens/flows/normalizer.hpp"

namespace flowens::ensembles {

/// Networks x -> (mu, s) with a Gaussian likelihood per dropout mask.
///  - pne:        M fixed masks, each a component (bagging via random component per step).
///  - mc_dropout: fresh Bernoulli masks per training row; test_masks masks at prediction.
class GaussianNetModel : public DensityModel {
public:
  explicit GaussianNetModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.kind != ModelKind::pne && cfg_.kind != ModelKind::mc_dropout)
      throw ConfigError("GaussianNetModel needs kind pne or mc_dropout");
    if (!(cfg_.keep_prob > 0.0 && cfg_.keep_prob <= 1.0)) throw ConfigError("keep_prob must lie in (0, 1]");
    if (cfg_.kind == ModelKind::mc_dropout && cfg_.test_masks == 0) throw ConfigError("MC dropout needs test masks");
    net_ = diff::Mlp({cfg_.x_dim, cfg_.hidden_layers, cfg_.hidden_units, 2 * cfg_.y_dim}, store_, "net");
    norm_ = flows::Normalizer::identity(cfg_.x_dim, cfg_.y_dim);
    Rng rng(cfg_.init_seed);
    net_.init(store_, rng);
    const auto sizes = net_.hidden_sizes();
    if (cfg_.kind == ModelKind::pne) {
      masks_ = MaskSet(cfg_.components, cfg_.keep_prob, sizes, rng);
    } else {
      resample_test_masks(derive_seed(cfg_.init_seed, 1));
    }
  }

  ModelKind kind() const override { return cfg_.kind; }
  const ModelConfig& config() const override { return cfg_; }
  std::size_t components() const override {
    return cfg_.kind == ModelKind::pne ? cfg_.components : cfg_.test_masks;
  }

  /// MC dropout: draws a new set of prediction masks from `seed`.
  void resample_test_masks(std::uint64_t seed) {
    if (cfg_.kind != ModelKind::mc_dropout) throw UsageError("only MC dropout has test masks");
    Rng rng(seed);
    test_masks_.clear();
    const auto sizes = net_.hidden_sizes();
    for (std::size_t i = 0; i < cfg_.test_masks; ++i)
      test_masks_.push_back(diff::DropoutMask::bernoulli(sizes, cfg_.keep_prob, rng));
  }

  const diff::DropoutMask& mask(std::size_t w) const {
    return cfg_.kind == ModelKind::pne ? masks_[w] : test_masks_.at(w);
  }

  std::unique_ptr<ConditionalDensity> condition(std::span<const double> x) const override {
    SampleMatrix X(1, static_cast<Eigen::Index>(x.size()));
    for (std::size_t k = 0; k < x.size(); ++k) X(0, static_cast<Eigen::Index>(k)) = x[k];
    return std::move(condition_batch(X)[0]);
  }

  std::vector<std::unique_ptr<ConditionalDensity>> condition_batch(const SampleMatrix& X) const override {
    require_shape(static_cast<std::size_t>(X.cols()) == cfg_.x_dim, "input has wrong length");
    const auto n = X.rows();
    const std::size_t D = cfg_.y_dim;
    Eigen::MatrixXd Xn(n, X.cols());
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index k = 0; k < X.cols(); ++k)
        Xn(r, k) = (X(r, k) - norm_.x_mean[static_cast<std::size_t>(k)]) / norm_.x_scale[static_cast<std::size_t>(k)];
    std::vector<std::vector<GaussianComponent>> comps(static_cast<std::size_t>(n));
    for (std::size_t w = 0; w < components(); ++w) {
      Eigen::MatrixXd out = net_.forward_batch(store_, Xn, diff::MaskView{&mask(w), 0});
      for (Eigen::Index r = 0; r < n; ++r) {
        GaussianComponent g;
        for (std::size_t d = 0; d < D; ++d) {
          const auto c = static_cast<Eigen::Index>(d);
          g.mean.push_back(norm_.denorm_y(out(r, c), d));
          g.sigma.push_back(flows::sigma_from_raw(out(r, c + static_cast<Eigen::Index>(D))) * norm_.y_scale[d]);
        }
        for (std::size_t d = 0; d < D; ++d)
          if (!std::isfinite(g.mean[d]) || !std::isfinite(g.sigma[d]))
            throw ScoringError("non-finite Gaussian network output", -1);
        comps[static_cast<std::size_t>(r)].push_back(std::move(g));
      }
    }
    std::vector<std::unique_ptr<ConditionalDensity>> res;
    for (auto& c : comps) res.push_back(std::make_unique<GaussianMixtureConditional>(std::move(c)));
    return res;
  }

  TrainLog train(const Dataset& data, const TrainConfig& tc, Rng& rng) override {
    detail::check_training_data(data, cfg_.x_dim, cfg_.y_dim);
    if (tc.normalize && !normalized_) {
      norm_ = flows::Normalizer::fit(data.X, data.Y);
      normalized_ = true;
    }
    const std::size_t M = cfg_.kind == ModelKind::pne ? cfg_.components : 1;
    return detail::gradient_loop(store_, adam_, data, tc, M, rng,
                                 [this](diff::Tape& tape, std::size_t w, const SampleMatrix& X, const SampleMatrix& Y,
                                        Rng& r) { return nll(tape, w, X, Y, r); });
  }

  std::unique_ptr<DensityModel> clone() const override { return std::make_unique<GaussianNetModel>(*this); }

  void save(const std::string& path) const override {
    diff::SectionWriter st;
    st.put<std::uint8_t>(normalized_ ? 1 : 0);
    std::map<std::string, std::string> sections{{detail::kConfigTag, detail::encode_fields(cfg_.to_fields())},
                                                {detail::kNormTag, norm_.encode()},
                                                {detail::kAdamTag, detail::encode_adam(adam_)},
                                                {detail::kStateTag, st.bytes()}};
    if (cfg_.kind == ModelKind::pne) {
      masks_.verify();
      sections[detail::kMaskTag] = masks_.encode();
    } else {
      sections[detail::kMaskTag] = MaskSet::wrap(test_masks_).encode();
    }
    diff::save_checkpoint(path, store_, sections, detail::manifest_fields(cfg_));
  }

  void restore(const diff::Checkpoint& ck) {
    diff::restore_params(store_, ck);
    norm_ = flows::Normalizer::decode(detail::section(ck, detail::kNormTag));
    adam_ = detail::decode_adam(detail::section(ck, detail::kAdamTag));
    diff::SectionReader st(detail::section(ck, detail::kStateTag));
    normalized_ = st.get<std::uint8_t>() != 0;
    MaskSet m = MaskSet::decode(detail::section(ck, detail::kMaskTag));
    if (cfg_.kind == ModelKind::pne) {
      if (m.size() != cfg_.components) throw IoError("checkpoint mask count does not match components");
      masks_ = std::move(m);
    } else {
      test_masks_.clear();
      for (std::size_t i = 0; i < m.size(); ++i) test_masks_.push_back(m[i]);
    }
  }

  std::vector<double> parameters() const override { return {store_.values().begin(), store_.values().end()}; }

  const diff::Mlp& net() const { return net_; }
  diff::ParamStore& store() { return store_; }
  const flows::Normalizer& normalizer() const { return norm_; }

private:
  diff::Var nll(diff::Tape& tape, std::size_t w, const SampleMatrix& X, const SampleMatrix& Y, Rng& rng) const {
    using diff::Var;
    const std::size_t B = static_cast<std::size_t>(X.rows());
    const std::size_t K = cfg_.x_dim;
    const std::size_t D = cfg_.y_dim;
    std::vector<Var> in;
    in.reserve(B * K);
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t k = 0; k < K; ++k) in.push_back(tape.constant((X(r, k) - norm_.x_mean[k]) / norm_.x_scale[k]));
    std::vector<Var> out;
    if (cfg_.kind == ModelKind::pne) {
      out = net_.record(tape, in, B, diff::MaskView{&masks_[w], 0});
    } else {
      std::vector<diff::DropoutMask> rows;
      rows.reserve(B);
      const auto sizes = net_.hidden_sizes();
      for (std::size_t r = 0; r < B; ++r) rows.push_back(diff::DropoutMask::bernoulli(sizes, cfg_.keep_prob, rng));
      out = net_.record(tape, in, B, {}, rows);
    }
    Var total = tape.constant(0.0);
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t d = 0; d < D; ++d) {
        const double yn = norm_.norm_y(Y(r, d), d);
        Var sigma = flows::sigma_from_raw(out[r * 2 * D + D + d]);
        total = total + flows::normal_log_prob(tape.constant(yn), out[r * 2 * D + d], sigma);
      }
    return -1.0 * total / static_cast<double>(B) + norm_.log_y_scale();
  }

  ModelConfig cfg_;
  diff::ParamStore store_;
  diff::Mlp net_;
  flows::Normalizer norm_;
  MaskSet masks_;
  std::vector<diff::DropoutMask> test_masks_;
  diff::AdamState adam_;
  bool normalized_ = false;
};

}  // namespace flowens::ensembles
