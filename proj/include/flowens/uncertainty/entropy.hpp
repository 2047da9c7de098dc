#pragma once

#include "flowens/ensembles/density_model.hpp"
#include "flowens/ensembles/gaussian_mixture.hpp"
#include "flowens/ensembles/gp.hpp"

namespace flowens::uncertainty {

using ensembles::ConditionalDensity;
using ensembles::GaussianComponent;

/// Monte-Carlo entropy estimate in nats with the standard error of the mean.
struct EntropyEstimate {
  double value = 0.0;
  double std_err = 0.0;
  std::size_t n = 0;  // samples drawn
};

inline constexpr std::size_t kMinEntropySamples = 100;
inline constexpr double kMaxNonFiniteFraction = 1e-3;

namespace detail {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // sample variance
  std::size_t n = 0;
};

/// Moments of -log p over the finite entries; too many non-finite values
/// make the estimate meaningless.
inline Moments neg_log_moments(const std::vector<double>& lp) {
  std::size_t bad = 0;
  double s = 0.0;
  for (double v : lp) {
    if (std::isfinite(v))
      s -= v;
    else
      ++bad;
  }
  if (static_cast<double>(bad) > kMaxNonFiniteFraction * static_cast<double>(lp.size()))
    throw EstimatorError(std::to_string(bad) + " of " + std::to_string(lp.size()) + " log-densities are non-finite");
  Moments m;
  m.n = lp.size() - bad;
  m.mean = s / static_cast<double>(m.n);
  double ss = 0.0;
  for (double v : lp)
    if (std::isfinite(v)) ss += (-v - m.mean) * (-v - m.mean);
  m.var = m.n > 1 ? ss / static_cast<double>(m.n - 1) : 0.0;
  return m;
}

inline void check_count(std::size_t n) {
  if (n < kMinEntropySamples)
    throw UsageError("entropy estimates need at least " + std::to_string(kMinEntropySamples) + " samples");
}

}  // namespace detail

/// H = -(1/N) sum log p(y_n), y_n drawn from the mixture (component picked
/// uniformly per draw).
inline EntropyEstimate total_entropy_mc(const ConditionalDensity& cd, std::size_t N, Rng& rng) {
  detail::check_count(N);
  const SampleMatrix Y = cd.mixture_sample(N, rng);
  const auto m = detail::neg_log_moments(cd.mixture_log_prob(Y));
  return {m.mean, std::sqrt(m.var / static_cast<double>(m.n)), N};
}

/// (1/M) sum_w of the Monte-Carlo entropy of component w, N_w draws each.
inline EntropyEstimate aleatoric_entropy_mc(const ConditionalDensity& cd, std::size_t N_w, Rng& rng) {
  detail::check_count(N_w);
  const std::size_t M = cd.components();
  double h = 0.0, v = 0.0;
  for (std::size_t w = 0; w < M; ++w) {
    const auto m = detail::neg_log_moments(cd.component_log_prob(w, cd.component_sample(w, N_w, rng)));
    h += m.mean;
    v += m.var / static_cast<double>(m.n);
  }
  const double Md = static_cast<double>(M);
  return {h / Md, std::sqrt(v) / Md, M * N_w};
}

/// Entropy of a diagonal Gaussian, 0.5 log det(2 pi e Sigma).
inline double gaussian_entropy(std::span<const double> sigma) { return flows::diag_gaussian_entropy(sigma); }

inline double average_gaussian_entropy(const std::vector<GaussianComponent>& comps) {
  double h = 0.0;
  for (const auto& c : comps) h += c.entropy();
  return h / static_cast<double>(comps.size());
}

/// Closed-form aleatoric entropy: average component Gaussian entropy. Uses the
/// base components for Nflows Base, the noise variance for a GP, and the
/// output Gaussians otherwise.
inline double aleatoric_entropy_analytic(const ConditionalDensity& cd) {
  if (const auto* gp = dynamic_cast<const ensembles::GpConditional*>(&cd)) {
    std::vector<double> s;
    for (double v : gp->noise_var()) s.push_back(std::sqrt(v));
    return gaussian_entropy(s);
  }
  if (const auto* base = cd.base_components()) return average_gaussian_entropy(*base);
  if (const auto* g = cd.gaussian_components()) return average_gaussian_entropy(*g);
  throw EstimatorError("model has no closed-form component entropies");
}

/// Output-space estimate sampling every component N_w times: the component
/// scores give the aleatoric term and the mixture scores of the same draws the
/// total (an equal-allocation stratified estimate of the mixture entropy).
struct StratifiedEstimate {
  EntropyEstimate total;
  EntropyEstimate aleatoric;
};

inline StratifiedEstimate stratified_entropy_mc(const ConditionalDensity& cd, std::size_t N_w, Rng& rng) {
  detail::check_count(N_w);
  const std::size_t M = cd.components();
  const double Md = static_cast<double>(M);
  double ht = 0.0, vt = 0.0, ha = 0.0, va = 0.0;
  for (std::size_t w = 0; w < M; ++w) {
    const SampleMatrix Y = cd.component_sample(w, N_w, rng);
    const auto a = detail::neg_log_moments(cd.component_log_prob(w, Y));
    const auto t = detail::neg_log_moments(cd.mixture_log_prob(Y));
    ha += a.mean;
    va += a.var / static_cast<double>(a.n);
    ht += t.mean;
    vt += t.var / static_cast<double>(t.n);
  }
  return {{ht / Md, std::sqrt(vt) / Md, M * N_w}, {ha / Md, std::sqrt(va) / Md, M * N_w}};
}

/// Total entropy of the base-space mixture of an Nflows Base conditional.
inline EntropyEstimate base_total_entropy_mc(const ConditionalDensity& cd, std::size_t N, Rng& rng) {
  const auto* base = cd.base_components();
  if (!base) throw EstimatorError("model has no base-space components");
  return total_entropy_mc(ensembles::GaussianMixtureConditional(*base), N, rng);
}

}  // namespace flowens::uncertainty
