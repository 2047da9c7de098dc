#pragma once

#include "flowens/core.hpp"
#include "flowens/diffcore/param_store.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace flowens::diff {

class Tape;

/// Handle to a scalar node recorded on a Tape.
class Var {
public:
  Var() = default;
  Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

  double value() const;
  Tape* tape() const { return tape_; }
  std::int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

private:
  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

/// Backward callback of a block node: receives the adjoints of the block's
/// outputs and must add the adjoints of its inputs to in_adj. Parameter
/// gradients are accumulated by the block itself.
using BlockBackward = std::function<void(std::span<const double> out_adj, std::span<double> in_adj)>;

/// Reverse-mode tape over scalars, plus opaque vector blocks (used for dense
/// layers so that a whole minibatch goes through one matrix product).
class Tape {
public:
  explicit Tape(ParamStore& store) : store_(&store) { nodes_.reserve(4096); }

  ParamStore& store() const { return *store_; }

  void clear() {
    nodes_.clear();
    blocks_.clear();
    adj_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

  double value(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  Var constant(double v) { return push({v, -1, -1, 0.0, 0.0, Kind::Leaf}); }

  /// Leaf bound to store().values()[index]; backward adds its adjoint to grads()[index].
  Var param(std::size_t index) {
    require_shape(index < store_->size(), "parameter index out of range");
    return push({store_->values()[index], static_cast<std::int32_t>(index), -1, 0.0, 0.0, Kind::Param});
  }

  Var unary(double v, Var a, double da) {
    check(a);
    return push({v, a.id(), -1, da, 0.0, Kind::Unary});
  }

  Var binary(double v, Var a, double da, Var b, double db) {
    check(a);
    check(b);
    return push({v, a.id(), b.id(), da, db, Kind::Binary});
  }

  /// Records a block with the given output values. Returns the output Vars.
  std::vector<Var> block(std::span<const Var> inputs, std::span<const double> outputs, BlockBackward backward) {
    Block blk;
    blk.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
      check(v);
      blk.inputs.push_back(v.id());
    }
    blk.first = static_cast<std::int32_t>(nodes_.size());
    blk.count = static_cast<std::int32_t>(outputs.size());
    blk.backward = std::move(backward);
    const auto bidx = static_cast<std::int32_t>(blocks_.size());
    blocks_.push_back(std::move(blk));
    std::vector<Var> out;
    out.reserve(outputs.size());
    for (std::size_t i = 0; i < outputs.size(); ++i)
      out.push_back(push({outputs[i], bidx, static_cast<std::int32_t>(i), 0.0, 0.0, Kind::BlockOut}));
    return out;
  }

  /// Propagates d(loss)/d(node) to every parameter leaf and block on the tape,
  /// accumulating into store().grads().
  void backward(Var loss) {
    if (!loss.valid() || loss.tape() != this || static_cast<std::size_t>(loss.id()) >= nodes_.size())
      throw StateError("backward called without a recorded forward pass");
    adj_.assign(nodes_.size(), 0.0);
    adj_[static_cast<std::size_t>(loss.id())] = 1.0;
    double* grads = store_->grad_data();
    std::vector<double> in_adj;
    for (std::int32_t i = loss.id(); i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      const double a = adj_[static_cast<std::size_t>(i)];
      switch (n.kind) {
        case Kind::Leaf:
          break;
        case Kind::Param:
          grads[n.a] += a;
          break;
        case Kind::Unary:
          if (a != 0.0) adj_[static_cast<std::size_t>(n.a)] += a * n.da;
          break;
        case Kind::Binary:
          if (a != 0.0) {
            adj_[static_cast<std::size_t>(n.a)] += a * n.da;
            adj_[static_cast<std::size_t>(n.b)] += a * n.db;
          }
          break;
        case Kind::BlockOut:
          if (n.b == 0) {
            Block& blk = blocks_[static_cast<std::size_t>(n.a)];
            in_adj.assign(blk.inputs.size(), 0.0);
            blk.backward(std::span<const double>(adj_.data() + blk.first, static_cast<std::size_t>(blk.count)),
                         in_adj);
            for (std::size_t k = 0; k < blk.inputs.size(); ++k)
              adj_[static_cast<std::size_t>(blk.inputs[k])] += in_adj[k];
          }
          break;
      }
    }
  }

  /// Adjoint of a node after the last backward().
  double adjoint(Var v) const { return adj_.at(static_cast<std::size_t>(v.id())); }

private:
  enum class Kind : std::uint8_t { Leaf, Param, Unary, Binary, BlockOut };

  struct Node {
    double value;
    std::int32_t a;
    std::int32_t b;
    double da;
    double db;
    Kind kind;
  };

  struct Block {
    std::vector<std::int32_t> inputs;
    std::int32_t first = 0;
    std::int32_t count = 0;
    BlockBackward backward;
  };

  Var push(const Node& n) {
    nodes_.push_back(n);
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
  }

  void check(Var v) const {
    if (v.tape() != this) throw UsageError("Var belongs to a different tape");
  }

  ParamStore* store_;
  std::vector<Node> nodes_;
  std::vector<Block> blocks_;
  std::vector<double> adj_;
};

inline double Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Scalar operations. Each has a plain-double overload so templated numeric
// code can be instantiated for both double and Var.
// ---------------------------------------------------------------------------

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

/// A constant of the same kind as `like`.
inline double lift(double, double v) { return v; }
inline Var lift(const Var& like, double v) { return like.tape()->constant(v); }

inline Var operator+(Var a, Var b) { return a.tape()->binary(a.value() + b.value(), a, 1.0, b, 1.0); }
inline Var operator-(Var a, Var b) { return a.tape()->binary(a.value() - b.value(), a, 1.0, b, -1.0); }
inline Var operator*(Var a, Var b) {
  return a.tape()->binary(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator/(Var a, Var b) {
  const double bv = b.value();
  const double q = a.value() / bv;
  return a.tape()->binary(q, a, 1.0 / bv, b, -q / bv);
}
inline Var operator-(Var a) { return a.tape()->unary(-a.value(), a, -1.0); }

inline Var operator+(Var a, double c) { return a.tape()->unary(a.value() + c, a, 1.0); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a.tape()->unary(a.value() - c, a, 1.0); }
inline Var operator-(double c, Var a) { return a.tape()->unary(c - a.value(), a, -1.0); }
inline Var operator*(Var a, double c) { return a.tape()->unary(a.value() * c, a, c); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a.tape()->unary(a.value() / c, a, 1.0 / c); }
inline Var operator/(double c, Var a) {
  const double v = c / a.value();
  return a.tape()->unary(v, a, -v / a.value());
}

inline Var& operator+=(Var& a, Var b) { return a = a + b; }
inline Var& operator+=(Var& a, double c) { return a = a + c; }

inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double square(double x) { return x * x; }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline Var exp(Var a) {
  const double v = std::exp(a.value());
  return a.tape()->unary(v, a, v);
}
inline Var log(Var a) { return a.tape()->unary(std::log(a.value()), a, 1.0 / a.value()); }
inline Var sqrt(Var a) {
  const double v = std::sqrt(a.value());
  return a.tape()->unary(v, a, 0.5 / v);
}
inline Var square(Var a) { return a.tape()->unary(a.value() * a.value(), a, 2.0 * a.value()); }
inline Var relu(Var a) { return a.tape()->unary(relu(a.value()), a, a.value() > 0.0 ? 1.0 : 0.0); }
inline Var sigmoid(Var a) {
  const double s = sigmoid(a.value());
  return a.tape()->unary(s, a, s * (1.0 - s));
}
inline Var softplus(Var a) { return a.tape()->unary(softplus(a.value()), a, sigmoid(a.value())); }

/// Sum of a non-empty range of Vars as one n-ary node chain.
inline Var sum(std::span<const Var> v) {
  require_shape(!v.empty(), "sum of empty range");
  Var s = v[0];
  for (std::size_t i = 1; i < v.size(); ++i) s = s + v[i];
  return s;
}

}  // namespace flowens::diff
