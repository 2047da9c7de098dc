#pragma once

#include "flowens/diffcore/checkpoint.hpp"
#include "flowens/diffcore/param_store.hpp"
#include "flowens/ensembles/density_model.hpp"
#include "flowens/ensembles/gaussian_mixture.hpp"
#include "flowens/ensembles/model_io.hpp"
#include "flowens/flows/normalizer.hpp"

#include <Eigen/Cholesky>

namespace flowens::ensembles {

/// RBF kernel hyper-parameters on the log scale, plus a constant mean.
struct GpHyper {
  double log_lengthscale = 0.0;
  double log_signal_var = 0.0;
  double log_noise_var = std::log(0.1);
  double mean = 0.0;

  double lengthscale() const { return std::exp(log_lengthscale); }
  double signal_var() const { return std::exp(log_signal_var); }
  double noise_var() const { return std::exp(log_noise_var); }
};

inline constexpr double kGpMaxJitter = 1e-6;
inline constexpr double kGpMinNoiseVar = 1e-8;

/// Exact single-output GP regression with an RBF kernel
///   k(a, b) = sf2 * exp(-|a - b|^2 / (2 l^2)).
class GpRegressor {
public:
  GpRegressor() = default;

  GpRegressor(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, GpHyper h) { fit(X, y, h); }

  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, GpHyper h) {
    if (X.rows() < 2) throw UsageError("GP fit needs at least two points");
    require_shape(X.rows() == y.rows(), "GP inputs and targets differ in length");
    X_ = X;
    y_ = y;
    h_ = h;
    const Eigen::VectorXd sq = X_.rowwise().squaredNorm();
    D2_ = (sq.replicate(1, X_.rows()) + sq.transpose().replicate(X_.rows(), 1) - 2.0 * X_ * X_.transpose())
              .cwiseMax(0.0);
    factorize();
  }

  const GpHyper& hyper() const { return h_; }
  const Eigen::MatrixXd& inputs() const { return X_; }
  const Eigen::VectorXd& targets() const { return y_; }
  double jitter() const { return jitter_; }

  double kernel(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) const {
    return h_.signal_var() * std::exp(-0.5 * (a - b).squaredNorm() / (h_.lengthscale() * h_.lengthscale()));
  }

  /// Latent mean and variance at x* (variance clamped at 0 with a warning
  /// when rounding makes it slightly negative).
  std::pair<double, double> predict(const Eigen::RowVectorXd& xs) const {
    Eigen::VectorXd ks(X_.rows());
    for (Eigen::Index i = 0; i < X_.rows(); ++i) ks(i) = kernel(xs, X_.row(i));
    const double mean = h_.mean + ks.dot(alpha_);
    const Eigen::VectorXd v = llt_.matrixL().solve(ks);
    double var = h_.signal_var() - v.squaredNorm();
    if (var < 0.0) {
      if (var < -1e-10) warn("GP predictive variance " + std::to_string(var) + " clamped at 0");
      var = 0.0;
    }
    return {mean, var};
  }

  /// log p(y | X, hyper).
  double log_marginal_likelihood() const {
    const Eigen::VectorXd r = y_.array() - h_.mean;
    const double logdet = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    return -0.5 * r.dot(alpha_) - 0.5 * logdet - 0.5 * static_cast<double>(y_.rows()) * kLog2Pi;
  }

  /// Gradient of the log marginal likelihood with respect to
  /// (log_lengthscale, log_signal_var, log_noise_var, mean).
  std::array<double, 4> lml_gradient() const {
    const auto n = X_.rows();
    const Eigen::MatrixXd Kinv = llt_.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd A = alpha_ * alpha_.transpose() - Kinv;
    const double l2 = h_.lengthscale() * h_.lengthscale();
    const Eigen::MatrixXd Kf = h_.signal_var() * (-0.5 / l2 * D2_.array()).exp();
    const double g_ell = (A.array() * Kf.array() * D2_.array()).sum() / l2;
    const double g_sf = (A.array() * Kf.array()).sum();
    const double g_sn = 0.5 * A.trace() * h_.noise_var();
    return {0.5 * g_ell, 0.5 * g_sf, g_sn, alpha_.sum()};
  }

  /// Gradient ascent (Adam on the log-parameters) on the log marginal likelihood.
  void optimize(std::size_t iterations, double lr) {
    std::array<double, 4> m{}, v{};
    GpHyper best = h_;
    double best_lml = log_marginal_likelihood();
    for (std::size_t t = 1; t <= iterations; ++t) {
      const auto g = lml_gradient();
      double* p[4] = {&h_.log_lengthscale, &h_.log_signal_var, &h_.log_noise_var, &h_.mean};
      for (int k = 0; k < 4; ++k) {
        m[k] = 0.9 * m[k] + 0.1 * g[k];
        v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
        const double mh = m[k] / (1.0 - std::pow(0.9, static_cast<double>(t)));
        const double vh = v[k] / (1.0 - std::pow(0.999, static_cast<double>(t)));
        *p[k] += lr * mh / (std::sqrt(vh) + 1e-8);
      }
      h_.log_noise_var = std::max(h_.log_noise_var, std::log(kGpMinNoiseVar));
      h_.log_lengthscale = std::clamp(h_.log_lengthscale, std::log(1e-3), std::log(1e3));
      h_.log_signal_var = std::clamp(h_.log_signal_var, std::log(1e-6), std::log(1e6));
      try {
        factorize();
      } catch (const FitError&) {
        h_ = best;
        factorize();
        break;
      }
      const double lml = log_marginal_likelihood();
      if (lml > best_lml) {
        best_lml = lml;
        best = h_;
      }
    }
    h_ = best;
    factorize();
  }

private:
  void factorize() {
    const double l2 = h_.lengthscale() * h_.lengthscale();
    Eigen::MatrixXd K = h_.signal_var() * (-0.5 / l2 * D2_.array()).exp();
    K.diagonal().array() += h_.noise_var();
    jitter_ = 0.0;
    for (double jit = 0.0;;) {
      Eigen::MatrixXd Kj = K;
      Kj.diagonal().array() += jit;
      llt_.compute(Kj);
      if (llt_.info() == Eigen::Success) {
        if (jit > 0.0) warn("GP Cholesky needed jitter " + std::to_string(jit));
        jitter_ = jit;
        break;
      }
      jit = jit == 0.0 ? 1e-10 : jit * 10.0;
      if (jit > kGpMaxJitter * 1.0001) throw FitError("GP covariance is not positive definite even with jitter 1e-6");
    }
    alpha_ = llt_.solve((y_.array() - h_.mean).matrix());
  }

  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd D2_;  // pairwise squared distances
  GpHyper h_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double jitter_ = 0.0;
};

/// GP prediction at one x*: one Gaussian component with variance var_f + noise.
class GpConditional : public GaussianMixtureConditional {
public:
  GpConditional(std::vector<double> mean, std::vector<double> latent_var, std::vector<double> noise_var)
      : GaussianMixtureConditional({make(mean, latent_var, noise_var)}),
        latent_var_(std::move(latent_var)),
        noise_var_(std::move(noise_var)) {}

  const std::vector<double>& latent_var() const { return latent_var_; }
  const std::vector<double>& noise_var() const { return noise_var_; }

private:
  static GaussianComponent make(const std::vector<double>& mean, const std::vector<double>& lv,
                                const std::vector<double>& nv) {
    GaussianComponent g;
    g.mean = mean;
    for (std::size_t d = 0; d < mean.size(); ++d) g.sigma.push_back(std::sqrt(lv[d] + nv[d]));
    return g;
  }

  std::vector<double> latent_var_;
  std::vector<double> noise_var_;
};

/// One independent GP per output dimension on normalized data.
class GpModel : public DensityModel {
public:
  explicit GpModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.kind != ModelKind::gp) throw ConfigError("GpModel needs kind gp");
    cfg_.components = 1;
    norm_ = flows::Normalizer::identity(cfg_.x_dim, cfg_.y_dim);
    hyper_.assign(cfg_.y_dim, GpHyper{});
    store_.add_slice("gp/hyper", 4 * cfg_.y_dim);
    sync_store();
  }

  ModelKind kind() const override { return ModelKind::gp; }
  const ModelConfig& config() const override { return cfg_; }
  std::size_t components() const override { return 1; }
  bool fitted() const { return !gps_.empty(); }

  std::unique_ptr<ConditionalDensity> condition(std::span<const double> x) const override {
    if (!fitted()) throw StateError("GP model has not been trained");
    const auto xn = norm_.norm_x(x);
    Eigen::RowVectorXd xs = Eigen::Map<const Eigen::RowVectorXd>(xn.data(), static_cast<Eigen::Index>(xn.size()));
    std::vector<double> mean, lv, nv;
    for (std::size_t d = 0; d < cfg_.y_dim; ++d) {
      auto [m, v] = gps_[d].predict(xs);
      const double s2 = norm_.y_scale[d] * norm_.y_scale[d];
      mean.push_back(norm_.denorm_y(m, d));
      lv.push_back(v * s2);
      nv.push_back(gps_[d].hyper().noise_var() * s2);
    }
    return std::make_unique<GpConditional>(std::move(mean), std::move(lv), std::move(nv));
  }

  /// Refits on the whole dataset, warm-starting the hyper-parameter ascent.
  TrainLog train(const Dataset& data, const TrainConfig& tc, Rng&) override {
    detail::check_training_data(data, cfg_.x_dim, cfg_.y_dim);
    if (data.size() < 2) throw UsageError("GP fit needs at least two points");
    if (tc.normalize && !normalized_) {
      norm_ = flows::Normalizer::fit(data.X, data.Y);
      normalized_ = true;
    }
    fit_data(data);
    TrainLog log;
    for (std::size_t d = 0; d < cfg_.y_dim; ++d) {
      if (cfg_.gp_iterations > 0) gps_[d].optimize(cfg_.gp_iterations, cfg_.gp_lr);
      hyper_[d] = gps_[d].hyper();
      log.loss.push_back(-gps_[d].log_marginal_likelihood());
    }
    sync_store();
    return log;
  }

  /// Fits with the current hyper-parameters, no optimization.
  void fit_data(const Dataset& data) {
    X_ = data.X;
    Y_ = data.Y;
    Eigen::MatrixXd Xn(X_.rows(), X_.cols());
    for (Eigen::Index r = 0; r < X_.rows(); ++r)
      for (Eigen::Index k = 0; k < X_.cols(); ++k)
        Xn(r, k) = (X_(r, k) - norm_.x_mean[static_cast<std::size_t>(k)]) / norm_.x_scale[static_cast<std::size_t>(k)];
    gps_.clear();
    for (std::size_t d = 0; d < cfg_.y_dim; ++d) {
      Eigen::VectorXd yn(Y_.rows());
      for (Eigen::Index r = 0; r < Y_.rows(); ++r) yn(r) = norm_.norm_y(Y_(r, static_cast<Eigen::Index>(d)), d);
      gps_.emplace_back(Xn, yn, hyper_[d]);
    }
  }

  void set_hyper(std::size_t d, GpHyper h) {
    hyper_.at(d) = h;
    sync_store();
  }
  const GpRegressor& regressor(std::size_t d) const { return gps_.at(d); }

  std::unique_ptr<DensityModel> clone() const override { return std::make_unique<GpModel>(*this); }

  void save(const std::string& path) const override {
    diff::SectionWriter st, data;
    st.put<std::uint8_t>(normalized_ ? 1 : 0);
    data.put<std::uint64_t>(static_cast<std::uint64_t>(X_.rows()));
    data.put_doubles(std::span<const double>(X_.data(), static_cast<std::size_t>(X_.size())));
    data.put_doubles(std::span<const double>(Y_.data(), static_cast<std::size_t>(Y_.size())));
    diff::save_checkpoint(path, store_,
                          {{detail::kConfigTag, detail::encode_fields(cfg_.to_fields())},
                           {detail::kNormTag, norm_.encode()},
                           {detail::kStateTag, st.bytes()},
                           {detail::kGpDataTag, data.bytes()}},
                          detail::manifest_fields(cfg_));
  }

  void restore(const diff::Checkpoint& ck) {
    diff::restore_params(store_, ck);
    norm_ = flows::Normalizer::decode(detail::section(ck, detail::kNormTag));
    diff::SectionReader st(detail::section(ck, detail::kStateTag));
    normalized_ = st.get<std::uint8_t>() != 0;
    for (std::size_t d = 0; d < cfg_.y_dim; ++d) {
      const double* p = store_.data() + 4 * d;
      hyper_[d] = {p[0], p[1], p[2], p[3]};
    }
    diff::SectionReader data(detail::section(ck, detail::kGpDataTag));
    const auto n = static_cast<Eigen::Index>(data.get<std::uint64_t>());
    auto xs = data.get_doubles();
    auto ys = data.get_doubles();
    if (n > 0) {
      Dataset ds{SampleMatrix(n, static_cast<Eigen::Index>(cfg_.x_dim)), SampleMatrix(n, static_cast<Eigen::Index>(cfg_.y_dim)),
                 "", ""};
      std::copy(xs.begin(), xs.end(), ds.X.data());
      std::copy(ys.begin(), ys.end(), ds.Y.data());
      fit_data(ds);
    }
  }

  std::vector<double> parameters() const override { return {store_.values().begin(), store_.values().end()}; }

private:
  void sync_store() {
    for (std::size_t d = 0; d < cfg_.y_dim; ++d) {
      double* p = store_.data() + 4 * d;
      p[0] = hyper_[d].log_lengthscale;
      p[1] = hyper_[d].log_signal_var;
      p[2] = hyper_[d].log_noise_var;
      p[3] = hyper_[d].mean;
    }
  }

  ModelConfig cfg_;
  diff::ParamStore store_;
  flows::Normalizer norm_;
  std::vector<GpHyper> hyper_;
  std::vector<GpRegressor> gps_;
  SampleMatrix X_, Y_;
  bool normalized_ = false;
};

}  // namespace flowens::ensembles
