#pragma once

#include "flowens/core.hpp"

#include <string>

namespace flowens {

/// Input/target pairs, one row each.
struct Dataset {
  SampleMatrix X;
  SampleMatrix Y;
  std::string env_tag;
  std::string policy;

  std::size_t size() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t x_dim() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t y_dim() const { return static_cast<std::size_t>(Y.cols()); }

  void validate() const {
    require_shape(X.rows() == Y.rows(), "dataset X and Y row counts differ");
    if (!X.allFinite() || !Y.allFinite()) throw ShapeError("dataset contains non-finite values");
  }

  void append(const Dataset& other) {
    require_shape(size() == 0 || (other.x_dim() == x_dim() && other.y_dim() == y_dim()), "appended dataset dims differ");
    SampleMatrix X2(X.rows() + other.X.rows(), other.X.cols());
    SampleMatrix Y2(Y.rows() + other.Y.rows(), other.Y.cols());
    if (X.rows() > 0) {
      X2.topRows(X.rows()) = X;
      Y2.topRows(Y.rows()) = Y;
    }
    X2.bottomRows(other.X.rows()) = other.X;
    Y2.bottomRows(other.Y.rows()) = other.Y;
    X = std::move(X2);
    Y = std::move(Y2);
  }

  /// Rows at the given indices.
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d{SampleMatrix(static_cast<Eigen::Index>(idx.size()), X.cols()),
              SampleMatrix(static_cast<Eigen::Index>(idx.size()), Y.cols()), env_tag, policy};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      d.X.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
      d.Y.row(static_cast<Eigen::Index>(i)) = Y.row(static_cast<Eigen::Index>(idx[i]));
    }
    return d;
  }
};

}  // namespace flowens
