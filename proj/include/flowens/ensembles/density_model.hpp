#pragma once

#include "flowens/core.hpp"
#include "flowens/dataset.hpp"
#include "flowens/diffcore/adam.hpp"
#include "flowens/diffcore/tape.hpp"
#include "flowens/flows/gaussian_base.hpp"
#include "flowens/flows/spline.hpp"

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace flowens::ensembles {

enum class ModelKind { nflows, nflows_out, nflows_base, pne, mc_dropout, gp, fixed_mixture };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::nflows: return "nflows";
    case ModelKind::nflows_out: return "nflows_out";
    case ModelKind::nflows_base: return "nflows_base";
    case ModelKind::pne: return "pne";
    case ModelKind::mc_dropout: return "mc_dropout";
    case ModelKind::gp: return "gp";
    case ModelKind::fixed_mixture: return "fixed_mixture";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (auto k : {ModelKind::nflows, ModelKind::nflows_out, ModelKind::nflows_base, ModelKind::pne,
                 ModelKind::mc_dropout, ModelKind::gp})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown model kind '" + s + "'");
}

inline bool is_flow(ModelKind k) {
  return k == ModelKind::nflows || k == ModelKind::nflows_out || k == ModelKind::nflows_base;
}

/// Architecture and ensemble settings shared by all model kinds. Fields that a
/// kind does not use are ignored.
struct ModelConfig {
  ModelKind kind = ModelKind::nflows_out;
  std::size_t x_dim = 1;
  std::size_t y_dim = 1;
  std::size_t components = 5;
  double keep_prob = 0.5;
  std::size_t hidden_layers = 1;
  std::size_t hidden_units = 20;
  std::size_t transforms = 1;
  std::size_t spline_bins = 8;
  double tail_bound = 6.0;
  std::size_t test_masks = 20;       // MC dropout
  std::size_t gp_iterations = 200;   // GP hyper-parameter ascent steps
  double gp_lr = 0.05;
  std::uint64_t init_seed = 0;

  flows::SplineConfig spline() const {
    flows::SplineConfig s;
    s.bins = spline_bins;
    s.tail_bound = tail_bound;
    return s;
  }

  std::map<std::string, std::string> to_fields() const {
    auto str = [](auto v) {
      std::ostringstream o;
      o.precision(17);
      o << v;
      return o.str();
    };
    return {{"kind", to_string(kind)},
            {"x_dim", str(x_dim)},
            {"y_dim", str(y_dim)},
            {"components", str(components)},
            {"keep_prob", str(keep_prob)},
            {"hidden_layers", str(hidden_layers)},
            {"hidden_units", str(hidden_units)},
            {"transforms", str(transforms)},
            {"spline_bins", str(spline_bins)},
            {"tail_bound", str(tail_bound)},
            {"test_masks", str(test_masks)},
            {"gp_iterations", str(gp_iterations)},
            {"gp_lr", str(gp_lr)},
            {"init_seed", str(init_seed)}};
  }

  static ModelConfig from_fields(const std::map<std::string, std::string>& f) {
    auto get = [&](const char* k) -> const std::string& {
      auto it = f.find(k);
      if (it == f.end()) throw IoError(std::string("model config missing '") + k + "'");
      return it->second;
    };
    ModelConfig c;
    if (get("kind") == "fixed_mixture") throw IoError("fixed mixtures cannot be loaded");
    c.kind = parse_model_kind(get("kind"));
    c.x_dim = std::stoull(get("x_dim"));
    c.y_dim = std::stoull(get("y_dim"));
    c.components = std::stoull(get("components"));
    c.keep_prob = std::stod(get("keep_prob"));
    c.hidden_layers = std::stoull(get("hidden_layers"));
    c.hidden_units = std::stoull(get("hidden_units"));
    c.transforms = std::stoull(get("transforms"));
    c.spline_bins = std::stoull(get("spline_bins"));
    c.tail_bound = std::stod(get("tail_bound"));
    c.test_masks = std::stoull(get("test_masks"));
    c.gp_iterations = std::stoull(get("gp_iterations"));
    c.gp_lr = std::stod(get("gp_lr"));
    c.init_seed = std::stoull(get("init_seed"));
    return c;
  }
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 64;
  double lr = 5e-4;
  double clip_norm = 10.0;  // 0 disables clipping
  bool normalize = true;    // fit the data normalizer on the first call
};

struct TrainLog {
  std::vector<double> loss;  // one entry per gradient step
};

/// Diagonal Gaussian in output space (or base space for Nflows Base).
struct GaussianComponent {
  std::vector<double> mean;
  std::vector<double> sigma;

  double log_prob(std::span<const double> y) const { return flows::diag_gaussian_log_prob(y, mean, sigma); }
  double entropy() const { return flows::diag_gaussian_entropy(sigma); }

  SampleMatrix sample(std::size_t n, Rng& rng) const {
    SampleMatrix S(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(mean.size()));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < mean.size(); ++d)
        S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = mean[d] + sigma[d] * std_normal(rng);
    draw_counter() += n;
    return S;
  }
};

inline std::vector<double> gaussian_log_prob_rows(const GaussianComponent& g, const SampleMatrix& Y) {
  std::vector<double> out(static_cast<std::size_t>(Y.rows()));
  for (Eigen::Index r = 0; r < Y.rows(); ++r)
    out[static_cast<std::size_t>(r)] =
        g.log_prob(std::span<const double>(Y.row(r).data(), static_cast<std::size_t>(Y.cols())));
  return out;
}

/// log of the uniform mixture (1/M) sum_w exp(lp[w][i]) for each row i.
inline std::vector<double> uniform_mixture(const std::vector<std::vector<double>>& lp) {
  require_shape(!lp.empty(), "mixture needs at least one component");
  const std::size_t M = lp.size();
  const std::size_t n = lp[0].size();
  std::vector<double> out(n), tmp(M);
  const double logM = std::log(static_cast<double>(M));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t w = 0; w < M; ++w) tmp[w] = lp[w][i];
    out[i] = log_sum_exp(tmp) - logM;
  }
  return out;
}

/// A model conditioned on one input x*: an M-component uniform mixture.
class ConditionalDensity {
public:
  virtual ~ConditionalDensity() = default;

  virtual std::size_t components() const = 0;
  virtual std::size_t y_dim() const = 0;
  virtual std::vector<double> component_log_prob(std::size_t w, const SampleMatrix& Y) const = 0;
  virtual SampleMatrix component_sample(std::size_t w, std::size_t n, Rng& rng) const = 0;

  /// Output-space Gaussian components, when the model has them in closed form.
  virtual const std::vector<GaussianComponent>* gaussian_components() const { return nullptr; }

  /// Base-space Gaussian components of an Nflows Base model.
  virtual const std::vector<GaussianComponent>* base_components() const { return nullptr; }

  /// Nflows Base: every component shares one transform g. These map base
  /// points to outputs and back (logdet of the respective direction).
  virtual bool has_shared_transform() const { return false; }
  virtual SampleMatrix shared_forward(const SampleMatrix&, std::vector<double>*) const {
    throw StateError("model has no shared transform");
  }
  virtual SampleMatrix shared_inverse(const SampleMatrix&, std::vector<double>*) const {
    throw StateError("model has no shared transform");
  }

  virtual std::vector<double> mixture_log_prob(const SampleMatrix& Y) const {
    std::vector<std::vector<double>> lp;
    lp.reserve(components());
    for (std::size_t w = 0; w < components(); ++w) lp.push_back(component_log_prob(w, Y));
    return uniform_mixture(lp);
  }

  double mixture_log_prob(std::span<const double> y) const {
    require_shape(y.size() == y_dim(), "target has wrong length");
    SampleMatrix Y(1, static_cast<Eigen::Index>(y.size()));
    for (std::size_t d = 0; d < y.size(); ++d) Y(0, static_cast<Eigen::Index>(d)) = y[d];
    return mixture_log_prob(Y)[0];
  }

  double component_log_prob(std::size_t w, std::span<const double> y) const {
    SampleMatrix Y(1, static_cast<Eigen::Index>(y.size()));
    for (std::size_t d = 0; d < y.size(); ++d) Y(0, static_cast<Eigen::Index>(d)) = y[d];
    return component_log_prob(w, Y)[0];
  }

  /// Each row picks a component uniformly, then draws from it. Returns the
  /// chosen component per row through `which` when given.
  SampleMatrix mixture_sample(std::size_t n, Rng& rng, std::vector<std::size_t>* which = nullptr) const {
    const std::size_t M = components();
    std::vector<std::size_t> comp(n);
    std::vector<std::size_t> count(M, 0);
    for (auto& c : comp) {
      c = M > 1 ? uniform_index(rng, M) : 0;
      ++count[c];
    }
    SampleMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(y_dim()));
    std::vector<std::size_t> cursor(M, 0);
    std::vector<SampleMatrix> draws(M);
    for (std::size_t w = 0; w < M; ++w)
      if (count[w] > 0) draws[w] = component_sample(w, count[w], rng);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t w = comp[i];
      out.row(static_cast<Eigen::Index>(i)) = draws[w].row(static_cast<Eigen::Index>(cursor[w]++));
    }
    if (which) *which = std::move(comp);
    return out;
  }

protected:
  void check_component(std::size_t w) const {
    if (w >= components())
      throw std::out_of_range("component " + std::to_string(w) + " out of range (M=" + std::to_string(components()) +
                              ")");
  }
};

/// Conditional density model with a common train / condition / serialize API.
class DensityModel {
public:
  virtual ~DensityModel() = default;

  virtual ModelKind kind() const = 0;
  virtual const ModelConfig& config() const = 0;
  std::size_t x_dim() const { return config().x_dim; }
  std::size_t y_dim() const { return config().y_dim; }
  virtual std::size_t components() const = 0;

  virtual std::unique_ptr<ConditionalDensity> condition(std::span<const double> x) const = 0;

  /// One conditional per row of X. Models override this to batch work.
  virtual std::vector<std::unique_ptr<ConditionalDensity>> condition_batch(const SampleMatrix& X) const {
    std::vector<std::unique_ptr<ConditionalDensity>> out;
    out.reserve(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      out.push_back(condition(std::span<const double>(X.row(r).data(), static_cast<std::size_t>(X.cols()))));
    return out;
  }

  /// Continues training from the current parameters.
  virtual TrainLog train(const Dataset& data, const TrainConfig& cfg, Rng& rng) = 0;

  virtual std::unique_ptr<DensityModel> clone() const = 0;

  /// Writes a checkpoint (parameters plus model sections) and its manifest.
  virtual void save(const std::string& path) const = 0;

  /// Flat copy of the trainable parameters (used by diversity checks).
  virtual std::vector<double> parameters() const = 0;
};

namespace detail {

inline void check_training_data(const Dataset& data, std::size_t x_dim, std::size_t y_dim) {
  if (data.size() == 0) throw UsageError("training needs a non-empty dataset");
  require_shape(data.x_dim() == x_dim && data.y_dim() == y_dim, "training data dims do not match the model");
  data.validate();
}

/// Bootstrap minibatch: batch rows drawn uniformly with replacement.
inline void bootstrap_batch(const Dataset& data, std::size_t batch, Rng& rng, SampleMatrix& X, SampleMatrix& Y) {
  X.resize(static_cast<Eigen::Index>(batch), data.X.cols());
  Y.resize(static_cast<Eigen::Index>(batch), data.Y.cols());
  for (std::size_t i = 0; i < batch; ++i) {
    const auto r = static_cast<Eigen::Index>(uniform_index(rng, data.size()));
    X.row(static_cast<Eigen::Index>(i)) = data.X.row(r);
    Y.row(static_cast<Eigen::Index>(i)) = data.Y.row(r);
  }
}

/// Shared gradient loop: each step picks a component uniformly (no draw when
/// M = 1), draws a bootstrap batch, records the loss and takes an Adam step.
template <class LossFn>
TrainLog gradient_loop(diff::ParamStore& store, diff::AdamState& adam, const Dataset& data, const TrainConfig& cfg,
                       std::size_t M, Rng& rng, LossFn&& loss_fn) {
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  TrainLog log;
  log.loss.reserve(cfg.steps);
  diff::Tape tape(store);
  SampleMatrix X, Y;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t w = M > 1 ? uniform_index(rng, M) : 0;
    bootstrap_batch(data, cfg.batch, rng, X, Y);
    tape.clear();
    store.zero_grads();
    diff::Var loss = loss_fn(tape, w, X, Y, rng);
    if (!std::isfinite(loss.value()))
      throw TrainingError("non-finite loss at step " + std::to_string(step), static_cast<long>(step));
    tape.backward(loss);
    if (cfg.clip_norm > 0.0) diff::clip_grad_norm(store, cfg.clip_norm);
    try {
      diff::adam_step(store, adam, cfg.lr);
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step), static_cast<long>(step),
                          e.parameter());
    }
    log.loss.push_back(loss.value());
  }
  return log;
}

}  // namespace detail

}  // namespace flowens::ensembles
