#pragma once

#include "flowens/core.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowens::diff {

struct Slice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flat trainable parameter vector with a same-shape gradient buffer.
/// Slices are appended in registration order, so they are disjoint and cover
/// the whole array.
class ParamStore {
public:
  std::size_t add_slice(std::string name, std::size_t size) {
    for (const auto& s : slices_)
      if (s.name == name) throw UsageError("duplicate parameter slice '" + name + "'");
    const std::size_t offset = values_.size();
    slices_.push_back({std::move(name), offset, size});
    values_.resize(offset + size, 0.0);
    grads_.resize(offset + size, 0.0);
    return offset;
  }

  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double* grad_data() { return grads_.data(); }

  const std::vector<Slice>& slices() const { return slices_; }

  const Slice& slice(std::string_view name) const {
    for (const auto& s : slices_)
      if (s.name == name) return s;
    throw UsageError("unknown parameter slice '" + std::string(name) + "'");
  }

  std::span<double> slice_values(std::string_view name) {
    const Slice& s = slice(name);
    return {values_.data() + s.offset, s.size};
  }

  /// Name of the slice containing flat index i.
  std::string owner_of(std::size_t i) const {
    for (const auto& s : slices_)
      if (i >= s.offset && i < s.offset + s.size)
        return s.name + "[" + std::to_string(i - s.offset) + "]";
    return "#" + std::to_string(i);
  }

  void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  void assign(std::span<const double> v) {
    require_shape(v.size() == values_.size(), "parameter vector length mismatch");
    std::copy(v.begin(), v.end(), values_.begin());
  }

private:
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<Slice> slices_;
};

}  // namespace flowens::diff
