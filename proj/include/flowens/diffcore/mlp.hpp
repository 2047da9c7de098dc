#pragma once

#include "flowens/core.hpp"
#include "flowens/diffcore/param_store.hpp"
#include "flowens/diffcore/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flowens::diff {

struct MlpSpec {
  std::size_t input_dim = 1;
  std::size_t hidden_layers = 1;
  std::size_t hidden_units = 10;
  std::size_t output_dim = 1;

  std::size_t layer_count() const { return hidden_layers + 1; }
  std::size_t fan_in(std::size_t l) const { return l == 0 ? input_dim : hidden_units; }
  std::size_t fan_out(std::size_t l) const { return l == hidden_layers ? output_dim : hidden_units; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layer_count(); ++l) n += (fan_in(l) + 1) * fan_out(l);
    return n;
  }

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw ConfigError("MLP input/output dims must be positive");
    if (hidden_layers > 0 && hidden_units == 0) throw ConfigError("MLP hidden layers need units");
  }
};

/// Binary keep-masks over the hidden units of one or more networks. Surviving
/// units are scaled by 1/keep_prob.
struct DropoutMask {
  std::vector<std::vector<std::uint8_t>> layers;
  double keep_prob = 1.0;

  double scale() const { return 1.0 / keep_prob; }

  static DropoutMask ones(std::span<const std::size_t> layer_sizes) {
    DropoutMask m;
    for (std::size_t n : layer_sizes) m.layers.emplace_back(n, std::uint8_t{1});
    return m;
  }

  /// Bernoulli(keep_prob) per unit. A layer is redrawn while its fraction of
  /// ones lies outside keep_prob +/- 3 sigma, or when it is all zeros.
  static DropoutMask generate(std::span<const std::size_t> layer_sizes, double keep_prob, Rng& rng) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must lie in (0, 1]");
    DropoutMask m;
    m.keep_prob = keep_prob;
    std::bernoulli_distribution coin(keep_prob);
    for (std::size_t n : layer_sizes) {
      std::vector<std::uint8_t> bits(n);
      const double sigma = std::sqrt(keep_prob * (1.0 - keep_prob) / static_cast<double>(n));
      for (int attempt = 0;; ++attempt) {
        std::size_t on = 0;
        for (auto& b : bits) {
          b = coin(rng) ? 1 : 0;
          on += b;
        }
        const double frac = static_cast<double>(on) / static_cast<double>(n);
        if (on > 0 && std::abs(frac - keep_prob) <= 3.0 * sigma + 1e-12) break;
        if (attempt > 1000) throw ConfigError("could not draw a dropout mask within 3 sigma of keep_prob");
      }
      m.layers.push_back(std::move(bits));
    }
    return m;
  }

  /// Plain Bernoulli(keep_prob) per unit, no rejection (training-time dropout).
  static DropoutMask bernoulli(std::span<const std::size_t> layer_sizes, double keep_prob, Rng& rng) {
    DropoutMask m;
    m.keep_prob = keep_prob;
    std::bernoulli_distribution coin(keep_prob);
    for (std::size_t n : layer_sizes) {
      std::vector<std::uint8_t> bits(n);
      for (auto& b : bits) b = coin(rng) ? 1 : 0;
      m.layers.push_back(std::move(bits));
    }
    return m;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ULL;
    };
    mix(layers.size());
    for (const auto& l : layers) {
      mix(l.size());
      for (auto b : l) mix(b);
    }
    std::uint64_t kp;
    std::memcpy(&kp, &keep_prob, sizeof kp);
    mix(kp);
    return h;
  }

  bool operator==(const DropoutMask& o) const { return keep_prob == o.keep_prob && layers == o.layers; }
};

/// Window into a DropoutMask: network layer l reads mask->layers[first + l].
struct MaskView {
  const DropoutMask* mask = nullptr;
  std::size_t first = 0;

  explicit operator bool() const { return mask != nullptr; }
};

/// Dense ReLU network whose weights live in a shared ParamStore. Layer l has a
/// row-major weight block (fan_out x fan_in) followed by a bias block.
class Mlp {
public:
  Mlp() = default;

  Mlp(const MlpSpec& spec, ParamStore& store, const std::string& name) : spec_(spec) {
    spec_.validate();
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
      const std::string prefix = name + "/layer" + std::to_string(l);
      weight_.push_back(store.add_slice(prefix + "/weight", spec_.fan_in(l) * spec_.fan_out(l)));
      bias_.push_back(store.add_slice(prefix + "/bias", spec_.fan_out(l)));
    }
  }

  const MlpSpec& spec() const { return spec_; }
  std::size_t weight_offset(std::size_t l) const { return weight_[l]; }
  std::size_t bias_offset(std::size_t l) const { return bias_[l]; }

  std::vector<std::size_t> hidden_sizes() const { return std::vector<std::size_t>(spec_.hidden_layers, spec_.hidden_units); }

  /// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases.
  void init(ParamStore& store, Rng& rng) const {
    double* p = store.data();
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
      const double fi = static_cast<double>(spec_.fan_in(l));
      const double fo = static_cast<double>(spec_.fan_out(l));
      const double bound = std::sqrt(6.0 / (fi + fo));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = 0; i < spec_.fan_in(l) * spec_.fan_out(l); ++i) p[weight_[l] + i] = u(rng);
      for (std::size_t i = 0; i < spec_.fan_out(l); ++i) p[bias_[l] + i] = 0.0;
    }
  }

  /// Sets the output layer to zero weights and the given bias, so the network
  /// outputs `bias` for every input.
  void set_constant_output(ParamStore& store, std::span<const double> bias) const {
    require_shape(bias.size() == spec_.output_dim, "constant output has wrong length");
    const std::size_t l = spec_.hidden_layers;
    double* p = store.data();
    std::fill(p + weight_[l], p + weight_[l] + spec_.fan_in(l) * spec_.fan_out(l), 0.0);
    std::copy(bias.begin(), bias.end(), p + bias_[l]);
  }

  std::vector<double> forward(const ParamStore& store, std::span<const double> x, MaskView mask = {}) const {
    require_shape(x.size() == spec_.input_dim, "MLP input has length " + std::to_string(x.size()) +
                                                    ", expected " + std::to_string(spec_.input_dim));
    check_mask(mask);
    Eigen::MatrixXd X = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::MatrixXd Y = forward_batch(store, X, mask);
    return std::vector<double>(Y.data(), Y.data() + Y.size());
  }

  /// Forward over a batch (rows of X). No recording.
  Eigen::MatrixXd forward_batch(const ParamStore& store, const Eigen::MatrixXd& X, MaskView mask = {}) const {
    require_shape(static_cast<std::size_t>(X.cols()) == spec_.input_dim, "MLP batch input has wrong width");
    check_mask(mask);
    Eigen::MatrixXd A = X;
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
      Eigen::MatrixXd Z = A * W(store, l).transpose();
      Z.rowwise() += b(store, l).transpose();
      if (l < spec_.hidden_layers) {
        Z = Z.cwiseMax(0.0);
        if (mask) apply_mask(Z, *mask.mask, mask.first + l);
      }
      A = std::move(Z);
    }
    return A;
  }

  /// Records a batched forward pass on the tape. `inputs` holds batch rows of
  /// input_dim Vars (row-major). Returns batch rows of output_dim Vars.
  /// Either `mask` (shared by all rows) or `row_masks` (one per row) may be set.
  std::vector<Var> record(Tape& tape, std::span<const Var> inputs, std::size_t batch, MaskView mask = {},
                          std::span<const DropoutMask> row_masks = {}) const {
    require_shape(inputs.size() == batch * spec_.input_dim, "recorded MLP input has wrong size");
    require_shape(row_masks.empty() || row_masks.size() == batch, "per-row masks must match batch");
    check_mask(mask);
    for (const auto& m : row_masks) check_mask(MaskView{&m, mask.first});

    const auto B = static_cast<Eigen::Index>(batch);
    auto cache = std::make_shared<Cache>();
    cache->acts.reserve(spec_.layer_count());
    cache->gates.reserve(spec_.hidden_layers);

    Eigen::MatrixXd A(B, static_cast<Eigen::Index>(spec_.input_dim));
    for (Eigen::Index r = 0; r < B; ++r)
      for (Eigen::Index c = 0; c < A.cols(); ++c)
        A(r, c) = inputs[static_cast<std::size_t>(r * A.cols() + c)].value();

    const ParamStore& store = tape.store();
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
      cache->acts.push_back(A);
      Eigen::MatrixXd Z = A * W(store, l).transpose();
      Z.rowwise() += b(store, l).transpose();
      if (l < spec_.hidden_layers) {
        // gate = d(activation)/d(pre-activation), including the mask scale.
        Eigen::MatrixXd gate = (Z.array() > 0.0).cast<double>().matrix();
        if (!row_masks.empty()) {
          for (Eigen::Index r = 0; r < B; ++r) {
            const DropoutMask& m = row_masks[static_cast<std::size_t>(r)];
            const auto& bits = m.layers[mask.first + l];
            for (Eigen::Index c = 0; c < gate.cols(); ++c)
              gate(r, c) *= bits[static_cast<std::size_t>(c)] ? m.scale() : 0.0;
          }
        } else if (mask) {
          apply_mask(gate, *mask.mask, mask.first + l);
        }
        Z = Z.cwiseProduct(gate);
        cache->gates.push_back(std::move(gate));
      }
      A = std::move(Z);
    }

    std::vector<double> out(static_cast<std::size_t>(A.size()));
    for (Eigen::Index r = 0; r < B; ++r)
      for (Eigen::Index c = 0; c < A.cols(); ++c) out[static_cast<std::size_t>(r * A.cols() + c)] = A(r, c);

    const MlpSpec spec = spec_;
    const std::vector<std::size_t> woff = weight_;
    const std::vector<std::size_t> boff = bias_;
    ParamStore* ps = &tape.store();
    auto backward = [cache, spec, woff, boff, ps, B](std::span<const double> out_adj, std::span<double> in_adj) {
      const auto out_dim = static_cast<Eigen::Index>(spec.output_dim);
      Eigen::MatrixXd G(B, out_dim);
      for (Eigen::Index r = 0; r < B; ++r)
        for (Eigen::Index c = 0; c < out_dim; ++c) G(r, c) = out_adj[static_cast<std::size_t>(r * out_dim + c)];
      for (std::size_t l = spec.layer_count(); l-- > 0;) {
        const auto fi = static_cast<Eigen::Index>(spec.fan_in(l));
        const auto fo = static_cast<Eigen::Index>(spec.fan_out(l));
        Eigen::Map<RowMatrix> dW(ps->grad_data() + woff[l], fo, fi);
        Eigen::Map<Eigen::VectorXd> db(ps->grad_data() + boff[l], fo);
        dW.noalias() += G.transpose() * cache->acts[l];
        db += G.colwise().sum().transpose();
        Eigen::Map<const RowMatrix> Wl(ps->data() + woff[l], fo, fi);
        Eigen::MatrixXd Gin = G * Wl;
        if (l > 0) Gin = Gin.cwiseProduct(cache->gates[l - 1]);
        G = std::move(Gin);
      }
      const auto in_dim = static_cast<Eigen::Index>(spec.input_dim);
      for (Eigen::Index r = 0; r < B; ++r)
        for (Eigen::Index c = 0; c < in_dim; ++c) in_adj[static_cast<std::size_t>(r * in_dim + c)] += G(r, c);
    };
    return tape.block(inputs, out, backward);
  }

private:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  struct Cache {
    std::vector<Eigen::MatrixXd> acts;   // input to each layer
    std::vector<Eigen::MatrixXd> gates;  // per hidden layer
  };

  Eigen::Map<const RowMatrix> W(const ParamStore& store, std::size_t l) const {
    return {store.data() + weight_[l], static_cast<Eigen::Index>(spec_.fan_out(l)),
            static_cast<Eigen::Index>(spec_.fan_in(l))};
  }
  Eigen::Map<const Eigen::VectorXd> b(const ParamStore& store, std::size_t l) const {
    return {store.data() + bias_[l], static_cast<Eigen::Index>(spec_.fan_out(l))};
  }

  void check_mask(MaskView mask) const {
    if (!mask) return;
    require_shape(mask.mask->layers.size() >= mask.first + spec_.hidden_layers, "dropout mask has too few layers");
    for (std::size_t l = 0; l < spec_.hidden_layers; ++l)
      require_shape(mask.mask->layers[mask.first + l].size() == spec_.hidden_units,
                    "dropout mask layer width does not match hidden units");
  }

  static void apply_mask(Eigen::MatrixXd& Z, const DropoutMask& m, std::size_t layer) {
    const auto& bits = m.layers[layer];
    const double s = m.scale();
    for (Eigen::Index c = 0; c < Z.cols(); ++c) {
      const double f = bits[static_cast<std::size_t>(c)] ? s : 0.0;
      Z.col(c) *= f;
    }
  }

  MlpSpec spec_;
  std::vector<std::size_t> weight_;
  std::vector<std::size_t> bias_;
};

}  // namespace flowens::diff
