#pragma once

#include "flowens/core.hpp"
#include "flowens/diffcore/mlp.hpp"
#include "flowens/diffcore/param_store.hpp"
#include "flowens/diffcore/tape.hpp"
#include "flowens/flows/gaussian_base.hpp"
#include "flowens/flows/normalizer.hpp"
#include "flowens/flows/spline.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace flowens::flows {

struct FlowConfig {
  std::size_t x_dim = 1;
  std::size_t y_dim = 1;
  std::size_t transforms = 1;  // g
  std::size_t hidden_layers = 1;
  std::size_t hidden_units = 10;
  SplineConfig spline;
  double sigma_floor = kSigmaFloor;

  /// Spline layers in the chain. For y_dim > 1 each transform is a pair of
  /// coupling layers with alternating parity so every coordinate is moved.
  std::size_t layer_count() const { return y_dim == 1 ? transforms : 2 * transforms; }

  void validate() const {
    if (x_dim == 0 || y_dim == 0) throw ConfigError("flow dims must be positive");
    if (transforms == 0) throw ConfigError("flow needs at least one transform");
    if (hidden_layers == 0 || hidden_units == 0) throw ConfigError("flow conditioners need hidden units");
    spline.validate();
  }
};

/// Optional masks for the base network and for the conditioners. The
/// conditioner mask covers all conditioner hidden layers in chain order.
struct FlowMasks {
  const diff::DropoutMask* base = nullptr;
  const diff::DropoutMask* cond = nullptr;
};

/// Conditional density p(y|x): a conditional diagonal Gaussian base pushed
/// through a chain of conditional rational-quadratic spline layers, then
/// through the fixed denormalization. y = g(b, x).
class FlowModel {
public:
  class Bound;

  FlowModel() = default;

  FlowModel(const FlowConfig& cfg, diff::ParamStore& store, const std::string& name)
      : cfg_(cfg), norm_(Normalizer::identity(cfg.x_dim, cfg.y_dim)) {
    cfg_.validate();
    base_ = diff::Mlp({cfg_.x_dim, cfg_.hidden_layers, cfg_.hidden_units, 2 * cfg_.y_dim}, store, name + "/base");
    for (std::size_t j = 0; j < cfg_.layer_count(); ++j) {
      Layer layer;
      for (std::size_t d = 0; d < cfg_.y_dim; ++d) {
        if (cfg_.y_dim == 1 || d % 2 == j % 2)
          layer.moved.push_back(d);
        else
          layer.fixed.push_back(d);
      }
      layer.net = diff::Mlp({cfg_.x_dim + layer.fixed.size(), cfg_.hidden_layers, cfg_.hidden_units,
                             layer.moved.size() * cfg_.spline.params_per_dim()},
                            store, name + "/cond" + std::to_string(j));
      layers_.push_back(std::move(layer));
    }
  }

  const FlowConfig& config() const { return cfg_; }
  std::size_t x_dim() const { return cfg_.x_dim; }
  std::size_t y_dim() const { return cfg_.y_dim; }
  std::size_t layer_count() const { return layers_.size(); }
  const diff::Mlp& base_net() const { return base_; }
  const diff::Mlp& conditioner(std::size_t j) const { return layers_.at(j).net; }

  const Normalizer& normalizer() const { return norm_; }
  void set_normalizer(Normalizer n) {
    require_shape(n.x_dim() == cfg_.x_dim && n.y_dim() == cfg_.y_dim, "normalizer dims do not match flow");
    norm_ = std::move(n);
  }

  std::vector<std::size_t> base_mask_sizes() const { return base_.hidden_sizes(); }
  std::vector<std::size_t> cond_mask_sizes() const {
    std::vector<std::size_t> s;
    for (const auto& l : layers_)
      for (std::size_t h : l.net.hidden_sizes()) s.push_back(h);
    return s;
  }

  /// Random base network, identity splines, base output at N(0, 1).
  void init(diff::ParamStore& store, Rng& rng) const {
    base_.init(store, rng);
    set_base_constant(store, std::vector<double>(cfg_.y_dim, 0.0), std::vector<double>(cfg_.y_dim, 1.0));
    for (const auto& l : layers_) l.net.init(store, rng);
    reset_splines_to_identity(store);
  }

  /// Restores only the base output layer to a random draw (used so ensemble
  /// bases do not start identical).
  void init_base_output(diff::ParamStore& store, Rng& rng, double scale) const {
    const std::size_t l = cfg_.hidden_layers;
    const auto& spec = base_.spec();
    const double bound = scale * std::sqrt(6.0 / static_cast<double>(spec.fan_in(l) + spec.fan_out(l)));
    std::uniform_real_distribution<double> u(-bound, bound);
    double* p = store.data() + base_.weight_offset(l);
    for (std::size_t i = 0; i < spec.fan_in(l) * spec.fan_out(l); ++i) p[i] = u(rng);
  }

  void reset_splines_to_identity(diff::ParamStore& store) const {
    const auto ident = cfg_.spline.identity_params();
    for (const auto& l : layers_) {
      std::vector<double> bias;
      for (std::size_t k = 0; k < l.moved.size(); ++k) bias.insert(bias.end(), ident.begin(), ident.end());
      l.net.set_constant_output(store, bias);
    }
  }

  /// Makes the base output (mu, sigma) independent of x.
  void set_base_constant(diff::ParamStore& store, std::span<const double> mu, std::span<const double> sigma) const {
    require_shape(mu.size() == cfg_.y_dim && sigma.size() == cfg_.y_dim, "base constants have wrong length");
    std::vector<double> bias(mu.begin(), mu.end());
    for (double s : sigma) bias.push_back(raw_from_sigma(s, cfg_.sigma_floor));
    base_.set_constant_output(store, bias);
  }

  /// Sets one layer's conditioner to emit fixed raw spline parameters
  /// (params_per_dim per moved coordinate).
  void set_layer_constant(diff::ParamStore& store, std::size_t j, std::span<const double> raw) const {
    layers_.at(j).net.set_constant_output(store, raw);
  }

  Bound bind(const diff::ParamStore& store, std::span<const double> x, FlowMasks masks = {}) const;

  /// Mean negative log-likelihood of (X, Y) rows recorded on the tape.
  diff::Var nll_loss(diff::Tape& tape, const SampleMatrix& X, const SampleMatrix& Y, FlowMasks masks = {}) const {
    if (X.rows() == 0) throw UsageError("nll_loss needs a non-empty batch");
    require_shape(X.rows() == Y.rows(), "batch X and Y row counts differ");
    require_shape(static_cast<std::size_t>(X.cols()) == cfg_.x_dim && static_cast<std::size_t>(Y.cols()) == cfg_.y_dim,
                  "batch has wrong dims");
    using diff::Var;
    const std::size_t B = static_cast<std::size_t>(X.rows());
    const std::size_t D = cfg_.y_dim;
    const std::size_t K = cfg_.x_dim;
    const std::size_t P = cfg_.spline.params_per_dim();

    std::vector<double> xn(B * K);
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t k = 0; k < K; ++k) xn[r * K + k] = (X(r, k) - norm_.x_mean[k]) / norm_.x_scale[k];
    std::vector<Var> xv;
    xv.reserve(B * K);
    for (double v : xn) xv.push_back(tape.constant(v));

    std::vector<Var> z;
    z.reserve(B * D);
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t d = 0; d < D; ++d) z.push_back(tape.constant(norm_.norm_y(Y(r, d), d)));

    std::vector<Var> logdet(B, tape.constant(0.0));
    for (std::size_t j = layers_.size(); j-- > 0;) {
      const Layer& layer = layers_[j];
      const std::size_t in_dim = K + layer.fixed.size();
      std::vector<Var> in;
      in.reserve(B * in_dim);
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t k = 0; k < K; ++k) in.push_back(xv[r * K + k]);
        for (std::size_t d : layer.fixed) in.push_back(z[r * D + d]);
      }
      auto params = layer.net.record(tape, in, B, cond_view(masks, j));
      const std::size_t out_dim = layer.moved.size() * P;
      if (D == 1) {
        // Conditioner depends on x only; rows share nothing, but knots are per row.
        for (std::size_t r = 0; r < B; ++r) {
          auto kn = make_knots<Var>(std::span<const Var>(params.data() + r * out_dim, P), cfg_.spline);
          auto res = rq_inverse(kn, z[r], cfg_.spline.tail_bound);
          z[r] = res.out;
          logdet[r] = logdet[r] + res.logdet;
        }
      } else {
        for (std::size_t r = 0; r < B; ++r) {
          for (std::size_t t = 0; t < layer.moved.size(); ++t) {
            auto kn = make_knots<Var>(std::span<const Var>(params.data() + r * out_dim + t * P, P), cfg_.spline);
            const std::size_t d = layer.moved[t];
            auto res = rq_inverse(kn, z[r * D + d], cfg_.spline.tail_bound);
            z[r * D + d] = res.out;
            logdet[r] = logdet[r] + res.logdet;
          }
        }
      }
    }

    auto base_out = base_.record(tape, xv, B, base_view(masks));
    Var total = tape.constant(0.0);
    for (std::size_t r = 0; r < B; ++r) {
      Var lp = logdet[r];
      for (std::size_t d = 0; d < D; ++d) {
        Var mu = base_out[r * 2 * D + d];
        Var sigma = sigma_from_raw(base_out[r * 2 * D + D + d], cfg_.sigma_floor);
        lp = lp + normal_log_prob(z[r * D + d], mu, sigma);
      }
      total = total + lp;
    }
    return -1.0 * total / static_cast<double>(B) + norm_.log_y_scale();
  }

  diff::MaskView base_view(FlowMasks m) const { return m.base ? diff::MaskView{m.base, 0} : diff::MaskView{}; }
  diff::MaskView cond_view(FlowMasks m, std::size_t j) const {
    return m.cond ? diff::MaskView{m.cond, j * cfg_.hidden_layers} : diff::MaskView{};
  }

private:
  struct Layer {
    std::vector<std::size_t> moved;
    std::vector<std::size_t> fixed;
    diff::Mlp net;
  };

  FlowConfig cfg_;
  Normalizer norm_;
  diff::Mlp base_;
  std::vector<Layer> layers_;

  friend class Bound;
};

/// A FlowModel evaluated at one input x (and one mask choice). Caches the base
/// parameters and, for 1D targets, the spline knots of every layer.
class FlowModel::Bound {
public:
  Bound(const FlowModel& model, const diff::ParamStore& store, std::span<const double> x, FlowMasks masks)
      : m_(&model), store_(&store), masks_(masks) {
    xn_ = model.norm_.norm_x(x);
    const std::size_t D = model.cfg_.y_dim;
    auto out = model.base_.forward(store, xn_, model.base_view(masks));
    mu_.assign(out.begin(), out.begin() + static_cast<long>(D));
    for (std::size_t d = 0; d < D; ++d) sigma_.push_back(sigma_from_raw(out[D + d], model.cfg_.sigma_floor));
    for (std::size_t d = 0; d < D; ++d)
      if (!std::isfinite(mu_[d]) || !std::isfinite(sigma_[d])) throw ScoringError("non-finite base parameters", -1);
    if (D == 1) {
      for (std::size_t j = 0; j < model.layers_.size(); ++j) {
        auto raw = model.layers_[j].net.forward(store, xn_, model.cond_view(masks, j));
        knots_.push_back(make_knots<double>(std::span<const double>(raw), model.cfg_.spline));
      }
    }
  }

  std::size_t y_dim() const { return m_->cfg_.y_dim; }
  const FlowModel& model() const { return *m_; }
  /// Base mean and scale in (normalized) base space.
  const std::vector<double>& base_mean() const { return mu_; }
  const std::vector<double>& base_sigma() const { return sigma_; }
  const std::vector<Knots<double>>& knots_1d() const { return knots_; }

  double base_log_prob(std::span<const double> b) const { return diag_gaussian_log_prob(b, mu_, sigma_); }
  double base_entropy() const { return diag_gaussian_entropy(sigma_); }

  /// y (original units) -> b; logdet[i] = log|db/dy| at row i.
  SampleMatrix inverse(const SampleMatrix& Y, std::vector<double>* logdet = nullptr) const {
    check_cols(Y);
    const std::size_t D = y_dim();
    SampleMatrix Z(Y.rows(), Y.cols());
    std::vector<double> ld(static_cast<std::size_t>(Y.rows()), -m_->norm_.log_y_scale());
    for (Eigen::Index r = 0; r < Y.rows(); ++r)
      for (std::size_t d = 0; d < D; ++d) Z(r, static_cast<Eigen::Index>(d)) = m_->norm_.norm_y(Y(r, d), d);
    for (std::size_t j = m_->layers_.size(); j-- > 0;) apply_layer(j, Z, ld, false);
    if (logdet) *logdet = std::move(ld);
    return Z;
  }

  /// b -> y (original units); logdet[i] = log|dy/db| at row i.
  SampleMatrix forward(const SampleMatrix& Bm, std::vector<double>* logdet = nullptr) const {
    check_cols(Bm);
    const std::size_t D = y_dim();
    SampleMatrix Z = Bm;
    std::vector<double> ld(static_cast<std::size_t>(Bm.rows()), 0.0);
    for (std::size_t j = 0; j < m_->layers_.size(); ++j) apply_layer(j, Z, ld, true);
    for (Eigen::Index r = 0; r < Z.rows(); ++r)
      for (std::size_t d = 0; d < D; ++d)
        Z(r, static_cast<Eigen::Index>(d)) = m_->norm_.denorm_y(Z(r, static_cast<Eigen::Index>(d)), d);
    for (double& v : ld) v += m_->norm_.log_y_scale();
    if (logdet) *logdet = std::move(ld);
    return Z;
  }

  std::vector<double> log_prob(const SampleMatrix& Y) const {
    std::vector<double> ld;
    SampleMatrix Bm = inverse(Y, &ld);
    std::vector<double> out(ld.size());
    for (Eigen::Index r = 0; r < Bm.rows(); ++r) {
      const auto row = Bm.row(r);
      out[static_cast<std::size_t>(r)] =
          base_log_prob(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))) +
          ld[static_cast<std::size_t>(r)];
    }
    return out;
  }

  double log_prob(std::span<const double> y) const {
    require_shape(y.size() == y_dim(), "target has wrong length");
    SampleMatrix Y(1, static_cast<Eigen::Index>(y.size()));
    for (std::size_t d = 0; d < y.size(); ++d) Y(0, static_cast<Eigen::Index>(d)) = y[d];
    return log_prob(Y)[0];
  }

  /// n base draws b ~ N(mu, sigma); counted in draw_counter().
  SampleMatrix sample_base(std::size_t n, Rng& rng) const {
    const std::size_t D = y_dim();
    SampleMatrix Bm(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < D; ++d)
        Bm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = mu_[d] + sigma_[d] * std_normal(rng);
    draw_counter() += n;
    return Bm;
  }

  SampleMatrix sample(std::size_t n, Rng& rng) const {
    if (n == 0) return SampleMatrix(0, static_cast<Eigen::Index>(y_dim()));
    return forward(sample_base(n, rng));
  }

private:
  void check_cols(const SampleMatrix& M) const {
    require_shape(static_cast<std::size_t>(M.cols()) == y_dim(), "sample matrix has wrong width");
  }

  // Applies spline layer j to every row of Z in place (normalized space).
  void apply_layer(std::size_t j, SampleMatrix& Z, std::vector<double>& ld, bool fwd) const {
    const auto& cfg = m_->cfg_;
    const auto& layer = m_->layers_[j];
    const double tb = cfg.spline.tail_bound;
    const auto n = Z.rows();
    if (cfg.y_dim == 1) {
      const auto& kn = knots_[j];
      for (Eigen::Index r = 0; r < n; ++r) {
        auto res = fwd ? rq_forward(kn, Z(r, 0), tb) : rq_inverse(kn, Z(r, 0), tb);
        Z(r, 0) = res.out;
        ld[static_cast<std::size_t>(r)] += res.logdet;
      }
    } else {
      const std::size_t K = cfg.x_dim;
      const std::size_t P = cfg.spline.params_per_dim();
      Eigen::MatrixXd in(n, static_cast<Eigen::Index>(K + layer.fixed.size()));
      for (Eigen::Index r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < K; ++k) in(r, static_cast<Eigen::Index>(k)) = xn_[k];
        for (std::size_t f = 0; f < layer.fixed.size(); ++f)
          in(r, static_cast<Eigen::Index>(K + f)) = Z(r, static_cast<Eigen::Index>(layer.fixed[f]));
      }
      Eigen::MatrixXd params = layer.net.forward_batch(*store_, in, m_->cond_view(masks_, j));
      std::vector<double> raw(P);
      for (Eigen::Index r = 0; r < n; ++r) {
        for (std::size_t t = 0; t < layer.moved.size(); ++t) {
          for (std::size_t p = 0; p < P; ++p) raw[p] = params(r, static_cast<Eigen::Index>(t * P + p));
          auto kn = make_knots<double>(std::span<const double>(raw), cfg.spline);
          const auto d = static_cast<Eigen::Index>(layer.moved[t]);
          auto res = fwd ? rq_forward(kn, Z(r, d), tb) : rq_inverse(kn, Z(r, d), tb);
          Z(r, d) = res.out;
          ld[static_cast<std::size_t>(r)] += res.logdet;
        }
      }
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      bool ok = std::isfinite(ld[static_cast<std::size_t>(r)]);
      for (Eigen::Index c = 0; c < Z.cols(); ++c) ok = ok && std::isfinite(Z(r, c));
      if (!ok) throw ScoringError("non-finite value in spline transform " + std::to_string(j), static_cast<long>(j));
    }
  }

  const FlowModel* m_;
  const diff::ParamStore* store_;
  FlowMasks masks_;
  std::vector<double> xn_;
  std::vector<double> mu_;
  std::vector<double> sigma_;
  std::vector<Knots<double>> knots_;
};

inline FlowModel::Bound FlowModel::bind(const diff::ParamStore& store, std::span<const double> x,
                                        FlowMasks masks) const {
  return Bound(*this, store, x, masks);
}

}  // namespace flowens::flows
