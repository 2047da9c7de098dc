#pragma once

#include "flowens/core.hpp"
#include "flowens/diffcore/checkpoint.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace flowens::flows {

/// Per-column affine standardization of inputs and targets. Models treat it as
/// the outermost (fixed) layer of the bijection, so densities are reported in
/// the original units.
struct Normalizer {
  std::vector<double> x_mean, x_scale, y_mean, y_scale;

  static Normalizer identity(std::size_t x_dim, std::size_t y_dim) {
    return {std::vector<double>(x_dim, 0.0), std::vector<double>(x_dim, 1.0), std::vector<double>(y_dim, 0.0),
            std::vector<double>(y_dim, 1.0)};
  }

  static Normalizer fit(const SampleMatrix& X, const SampleMatrix& Y) {
    require_shape(X.rows() == Y.rows() && X.rows() > 0, "normalizer needs matching non-empty X and Y");
    Normalizer n;
    auto stats = [](const SampleMatrix& M, std::vector<double>& mean, std::vector<double>& scale) {
      const auto rows = static_cast<double>(M.rows());
      for (Eigen::Index c = 0; c < M.cols(); ++c) {
        const double mu = M.col(c).sum() / rows;
        const double var = (M.col(c).array() - mu).square().sum() / rows;
        const double sd = std::sqrt(var);
        mean.push_back(mu);
        scale.push_back(sd < 1e-8 ? 1.0 : sd);
      }
    };
    stats(X, n.x_mean, n.x_scale);
    stats(Y, n.y_mean, n.y_scale);
    return n;
  }

  std::size_t x_dim() const { return x_mean.size(); }
  std::size_t y_dim() const { return y_mean.size(); }

  std::vector<double> norm_x(std::span<const double> x) const {
    require_shape(x.size() == x_mean.size(), "input has length " + std::to_string(x.size()) + ", expected " +
                                                  std::to_string(x_mean.size()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - x_mean[i]) / x_scale[i];
    return out;
  }

  double norm_y(double y, std::size_t d) const { return (y - y_mean[d]) / y_scale[d]; }
  double denorm_y(double z, std::size_t d) const { return z * y_scale[d] + y_mean[d]; }

  /// log|dy/dz| of the denormalization.
  double log_y_scale() const {
    double s = 0.0;
    for (double v : y_scale) s += std::log(v);
    return s;
  }

  std::string encode() const {
    diff::SectionWriter w;
    w.put_doubles(x_mean).put_doubles(x_scale).put_doubles(y_mean).put_doubles(y_scale);
    return w.bytes();
  }

  static Normalizer decode(const std::string& bytes) {
    diff::SectionReader r(bytes);
    Normalizer n;
    n.x_mean = r.get_doubles();
    n.x_scale = r.get_doubles();
    n.y_mean = r.get_doubles();
    n.y_scale = r.get_doubles();
    return n;
  }

  bool operator==(const Normalizer&) const = default;
};

}  // namespace flowens::flows
