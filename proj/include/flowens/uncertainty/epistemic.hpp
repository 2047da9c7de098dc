#pragma once

#include "flowens/uncertainty/entropy.hpp"

#include <chrono>
#include <ostream>

namespace flowens::uncertainty {

using ensembles::ModelKind;

enum class EstimatorTag { mc_output_space, analytic_base, gp_closed_form };

inline std::string to_string(EstimatorTag t) {
  switch (t) {
    case EstimatorTag::mc_output_space: return "mc_output_space";
    case EstimatorTag::analytic_base: return "analytic_base";
    case EstimatorTag::gp_closed_form: return "gp_closed_form";
  }
  return "?";
}

/// Which space an Nflows Base estimate is computed in.
enum class Space { automatic, output, base };

struct UncertaintyReport {
  double total = 0.0;
  double aleatoric = 0.0;
  double epistemic = 0.0;  // total - aleatoric, never clamped
  double total_err = 0.0;  // MC standard errors (0 when closed form)
  double aleatoric_err = 0.0;
  std::size_t n_total_samples = 0;
  std::size_t n_per_component_samples = 0;
  std::uint64_t draws = 0;  // measured model draws
  EstimatorTag estimator = EstimatorTag::mc_output_space;
  std::uint64_t seed = 0;
};

/// Per-query sample counts: Nflows Base 1000, Nflows Out 5000, PNE 5000,
/// MC dropout 2500.
inline std::size_t default_sample_count(ModelKind kind) {
  switch (kind) {
    case ModelKind::nflows_base: return 1000;
    case ModelKind::mc_dropout: return 2500;
    case ModelKind::gp: return 0;
    default: return 5000;
  }
}

struct SamplingConfig {
  std::size_t n_samples = 0;   // per query point; 0 picks default_sample_count
  Space space = Space::automatic;
  bool mc_aleatoric = false;   // force MC aleatoric for Gaussian-component models
};

/// Output-space components of a model with a Gaussian likelihood have
/// closed-form entropies; flow components do not.
inline bool has_closed_form_aleatoric(const ConditionalDensity& cd) {
  return cd.gaussian_components() != nullptr || cd.base_components() != nullptr;
}

/// Routing:
///  - GP:            closed form, total from var_f + noise, aleatoric from noise.
///  - Nflows Base:   base space, N draws from the base mixture plus analytic
///                   aleatoric (output space when requested).
///  - PNE, MC drop:  MC total over N mixture draws, analytic aleatoric.
///  - other flows:   N/M draws per component, shared between both terms.
inline UncertaintyReport epistemic_mi(const ConditionalDensity& cd, ModelKind kind, const SamplingConfig& sc,
                                      Rng& rng) {
  UncertaintyReport r;
  const std::uint64_t before = draw_counter();
  const std::size_t M = cd.components();
  const std::size_t N = sc.n_samples > 0 ? sc.n_samples : default_sample_count(kind);

  if (const auto* gp = dynamic_cast<const ensembles::GpConditional*>(&cd)) {
    const auto& g = (*gp->gaussian_components())[0];
    r.total = g.entropy();
    r.aleatoric = aleatoric_entropy_analytic(cd);
    r.estimator = EstimatorTag::gp_closed_form;
  } else if (cd.base_components() && sc.space != Space::output) {
    const auto t = base_total_entropy_mc(cd, N, rng);
    r.total = t.value;
    r.total_err = t.std_err;
    r.aleatoric = aleatoric_entropy_analytic(cd);
    r.n_total_samples = N;
    r.estimator = EstimatorTag::analytic_base;
  } else if (cd.gaussian_components() && !sc.mc_aleatoric) {
    const auto t = total_entropy_mc(cd, N, rng);
    r.total = t.value;
    r.total_err = t.std_err;
    r.aleatoric = aleatoric_entropy_analytic(cd);
    r.n_total_samples = N;
  } else {
    const std::size_t N_w = std::max<std::size_t>(N / M, kMinEntropySamples);
    const auto s = stratified_entropy_mc(cd, N_w, rng);
    r.total = s.total.value;
    r.total_err = s.total.std_err;
    r.aleatoric = s.aleatoric.value;
    r.aleatoric_err = s.aleatoric.std_err;
    r.n_total_samples = M * N_w;
    r.n_per_component_samples = N_w;
  }
  r.epistemic = r.total - r.aleatoric;
  r.draws = draw_counter() - before;
  if (!std::isfinite(r.total) || !std::isfinite(r.aleatoric))
    throw EstimatorError("uncertainty estimate is not finite");
  return r;
}

inline UncertaintyReport epistemic_mi(const ensembles::DensityModel& model, std::span<const double> x,
                                      const SamplingConfig& sc, Rng& rng) {
  return epistemic_mi(*model.condition(x), model.kind(), sc, rng);
}

/// Reports for every row of X, in parallel; row i uses seed derive_seed(seed, i).
inline std::vector<UncertaintyReport> uncertainty_grid(const ensembles::DensityModel& model, const SampleMatrix& X,
                                                       const SamplingConfig& sc, std::uint64_t seed,
                                                       std::size_t threads = 0) {
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<UncertaintyReport> out(n);
  auto conds = model.condition_batch(X);
  parallel_for(
      n,
      [&](std::size_t i) {
        Rng rng(derive_seed(seed, i));
        out[i] = epistemic_mi(*conds[i], model.kind(), sc, rng);
        out[i].seed = derive_seed(seed, i);
      },
      threads);
  return out;
}

/// Epistemic MI of an Nflows Base conditional computed independently in base
/// space (N base-mixture draws) and in output space (N/M draws per component,
/// scored through the inverse transform).
struct MiPair {
  double mi_base = 0.0;
  double mi_output = 0.0;
  double base_err = 0.0;
  double output_err = 0.0;
};

inline MiPair epistemic_base_vs_output_check(const ConditionalDensity& cd, std::size_t N, Rng& rng) {
  if (!cd.base_components()) throw EstimatorError("base-vs-output check needs an Nflows Base model");
  SamplingConfig base_sc{N, Space::base, false};
  SamplingConfig out_sc{N, Space::output, false};
  Rng rb(rng()), ro(rng());
  const auto b = epistemic_mi(cd, ModelKind::nflows_base, base_sc, rb);
  const auto o = epistemic_mi(cd, ModelKind::nflows_base, out_sc, ro);
  return {b.epistemic, o.epistemic, b.total_err, std::hypot(o.total_err, o.aleatoric_err)};
}

enum class BudgetMode { output_space, base_space };

/// Planned total draws over a grid: TS = N_x N_w M in output space, N_x N_base
/// in base space.
inline std::uint64_t sample_budget(BudgetMode mode, std::uint64_t N_x, std::uint64_t N_w, std::uint64_t M) {
  if (N_x == 0 || N_w == 0 || M == 0) throw UsageError("sample budget needs positive counts");
  return mode == BudgetMode::output_space ? N_x * N_w * M : N_x * N_w;
}

inline void write_report_csv_header(std::ostream& os) { os << "x_index,total,aleatoric,epistemic,estimator,n_samples,seed\n"; }

inline void write_report_csv_row(std::ostream& os, std::size_t x_index, const UncertaintyReport& r) {
  os << x_index << ',' << fmt_double(r.total) << ',' << fmt_double(r.aleatoric) << ',' << fmt_double(r.epistemic)
     << ',' << to_string(r.estimator) << ',' << r.n_total_samples << ',' << r.seed << '\n';
}

}  // namespace flowens::uncertainty
