#pragma once

#include "flowens/uncertainty/entropy.hpp"

#include <ostream>

namespace flowens::uncertainty {

struct DimStudyRow {
  std::size_t d = 0;
  double analytic_entropy = 0.0;  // mean over seeds
  double mc_entropy_mean = 0.0;
  double mc_entropy_err = 0.0;    // mean |mc - analytic| over seeds
  std::size_t n_samples = 0;
  std::size_t n_seeds = 0;
};

struct DimStudyResult {
  std::vector<DimStudyRow> rows;  // sorted by d
};

struct DimStudyConfig {
  std::vector<std::size_t> dims;
  std::size_t n_samples = 1000;
  std::size_t seeds = 100;
  bool random_scaling = true;  // per-dim std drawn from U(0.5, 2)
  std::uint64_t seed = 0;
};

/// MC entropy error of a d-dimensional diagonal Gaussian against its closed
/// form, averaged over seeds.
inline DimStudyResult mc_dimension_study(const DimStudyConfig& cfg) {
  if (cfg.dims.empty() || cfg.seeds == 0) throw UsageError("dimension study needs dims and seeds");
  for (std::size_t d : cfg.dims)
    if (d < 1 || d > 64) throw UsageError("dimension study dims must lie in 1..64");
  std::vector<std::size_t> dims = cfg.dims;
  std::sort(dims.begin(), dims.end());
  dims.erase(std::unique(dims.begin(), dims.end()), dims.end());
  DimStudyResult res;
  for (std::size_t d : dims) {
    DimStudyRow row{d, 0.0, 0.0, 0.0, cfg.n_samples, cfg.seeds};
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      Rng rng(derive_seed(derive_seed(cfg.seed, d), s));
      GaussianComponent g{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
      if (cfg.random_scaling)
        for (auto& v : g.sigma) v = uniform(rng, 0.5, 2.0);
      const double truth = g.entropy();
      const auto est = total_entropy_mc(ensembles::GaussianMixtureConditional({g}), cfg.n_samples, rng);
      row.analytic_entropy += truth;
      row.mc_entropy_mean += est.value;
      row.mc_entropy_err += std::abs(est.value - truth);
    }
    const double S = static_cast<double>(cfg.seeds);
    row.analytic_entropy /= S;
    row.mc_entropy_mean /= S;
    row.mc_entropy_err /= S;
    res.rows.push_back(row);
  }
  return res;
}

inline void write_dim_study_csv(std::ostream& os, const DimStudyResult& r) {
  os << "d,analytic_entropy,mc_entropy_mean,mc_entropy_err,n_samples,n_seeds\n";
  for (const auto& row : r.rows)
    os << row.d << ',' << fmt_double(row.analytic_entropy) << ',' << fmt_double(row.mc_entropy_mean) << ','
       << fmt_double(row.mc_entropy_err) << ',' << row.n_samples << ',' << row.n_seeds << '\n';
}

}  // namespace flowens::uncertainty
