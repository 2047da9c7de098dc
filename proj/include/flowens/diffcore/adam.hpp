#pragma once

#include "flowens/core.hpp"
#include "flowens/diffcore/param_store.hpp"

#include <cmath>
#include <vector>

namespace flowens::diff {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  void reset() {
    m.clear();
    v.clear();
    t = 0;
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One Adam update from the gradients currently in the store. Gradients are
/// left untouched. Throws TrainingError naming the first non-finite gradient
/// before any parameter is modified.
inline void adam_step(ParamStore& params, AdamState& state, double lr) {
  const auto g = params.grads();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(g[i])) throw TrainingError("non-finite gradient in " + params.owner_of(i), -1, params.owner_of(i));
  if (state.m.size() != g.size()) {
    state.m.assign(g.size(), 0.0);
    state.v.assign(g.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  auto p = params.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g[i];
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
  }
}

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
inline double clip_grad_norm(ParamStore& params, double max_norm) {
  auto g = params.grads();
  double sq = 0.0;
  for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double f = max_norm / norm;
    for (double& x : g) x *= f;
  }
  return norm;
}

}  // namespace flowens::diff
