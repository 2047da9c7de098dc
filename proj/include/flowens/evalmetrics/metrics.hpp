#pragma once

#include "flowens/core.hpp"
#include "flowens/dataset.hpp"
#include "flowens/ensembles/density_model.hpp"
#include "flowens/environments/environment.hpp"
#include "flowens/uncertainty/knn_kl.hpp"

#include <functional>
#include <numeric>
#include <ostream>

namespace flowens::eval {

inline constexpr std::size_t kDefaultKlInputs = 50;
inline constexpr std::size_t kDefaultKlSamples = 2000;
inline constexpr double kLogLikFloor = -690.7755278982137;  // log(1e-300)
inline constexpr double kKlNoiseFloor = -0.2;

/// Draws n samples of y at input x.
using ConditionalSampler = std::function<SampleMatrix(std::span<const double> x, std::size_t n, Rng& rng)>;

inline ConditionalSampler truth_sampler(const envs::Environment& env) {
  return [&env](std::span<const double> x, std::size_t n, Rng& rng) { return env.truth(x, n, rng); };
}

inline ConditionalSampler model_sampler(const ensembles::DensityModel& model) {
  return [&model](std::span<const double> x, std::size_t n, Rng& rng) {
    return model.condition(x)->mixture_sample(n, rng);
  };
}

/// n_inputs rows of the test set without replacement (all rows if fewer).
inline SampleMatrix pick_test_inputs(const Dataset& test, std::size_t n_inputs, Rng& rng) {
  if (test.size() == 0) throw UsageError("test set is empty");
  std::vector<std::size_t> idx(test.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t n = std::min(n_inputs, idx.size());
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  idx.resize(n);
  return test.subset(idx).X;
}

struct KlResult {
  double mean = 0.0;
  double std_err = 0.0;
  std::vector<double> per_input;
};

/// Draws n samples for test input i.
using IndexedSampler = std::function<SampleMatrix(std::size_t i, std::size_t n, Rng& rng)>;

/// Mean kNN KL(truth || model) over n_inputs test inputs, n_samples per side.
inline KlResult eval_kl(const IndexedSampler& truth, const IndexedSampler& model, std::size_t n_inputs,
                        std::size_t n_samples, std::uint64_t seed, std::size_t threads = 0,
                        std::size_t k = uncertainty::kDefaultKnnK) {
  if (n_inputs == 0) throw UsageError("eval_kl needs at least one input");
  KlResult r;
  r.per_input.resize(n_inputs);
  parallel_for(
      n_inputs,
      [&](std::size_t i) {
        Rng rp(derive_seed(seed, 2 * i)), rq(derive_seed(seed, 2 * i + 1));
        const SampleMatrix P = truth(i, n_samples, rp);
        const SampleMatrix Q = model(i, n_samples, rq);
        r.per_input[i] = uncertainty::knn_kl(P, Q, k);
      },
      threads);
  for (double v : r.per_input) r.mean += v;
  r.mean /= static_cast<double>(n_inputs);
  if (n_inputs > 1) {
    double ss = 0.0;
    for (double v : r.per_input) ss += (v - r.mean) * (v - r.mean);
    r.std_err = std::sqrt(ss / static_cast<double>(n_inputs - 1) / static_cast<double>(n_inputs));
  }
  if (r.mean < kKlNoiseFloor) warn("mean KL " + fmt_double(r.mean) + " is below the estimator noise floor");
  return r;
}

inline KlResult eval_kl(const ConditionalSampler& truth, const ConditionalSampler& model, const SampleMatrix& X,
                        std::size_t n_samples, std::uint64_t seed, std::size_t threads = 0) {
  auto row = [&X](std::size_t i) {
    return std::span<const double>(X.row(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(X.cols()));
  };
  return eval_kl([&](std::size_t i, std::size_t n, Rng& rng) { return truth(row(i), n, rng); },
                 [&](std::size_t i, std::size_t n, Rng& rng) { return model(row(i), n, rng); },
                 static_cast<std::size_t>(X.rows()), n_samples, seed, threads);
}

inline KlResult eval_kl(const ensembles::DensityModel& model, const envs::Environment& env, const SampleMatrix& X,
                        std::size_t n_samples, std::uint64_t seed, std::size_t threads = 0) {
  require_shape(static_cast<std::size_t>(X.cols()) == model.x_dim(), "test inputs do not match the model");
  const auto conds = model.condition_batch(X);
  const auto truth = truth_sampler(env);
  return eval_kl(
      [&](std::size_t i, std::size_t n, Rng& rng) {
        return truth(std::span<const double>(X.row(static_cast<Eigen::Index>(i)).data(),
                                             static_cast<std::size_t>(X.cols())),
                     n, rng);
      },
      [&](std::size_t i, std::size_t n, Rng& rng) { return conds[i]->mixture_sample(n, rng); },
      static_cast<std::size_t>(X.rows()), n_samples, seed, threads);
}

/// RMSE between recorded targets and model draws; `draws` > 1 scores the mean
/// of that many draws per pair instead of a single draw.
inline double eval_rmse(const ensembles::DensityModel& model, const Dataset& test, Rng& rng, std::size_t draws = 1) {
  if (test.size() == 0) throw UsageError("RMSE needs a non-empty test set");
  if (draws == 0) throw ConfigError("rmse draws must be positive");
  auto conds = model.condition_batch(test.X);
  double se = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const SampleMatrix S = conds[i]->mixture_sample(draws, rng);
    const Eigen::RowVectorXd yhat = S.colwise().mean();
    se += (yhat - test.Y.row(static_cast<Eigen::Index>(i))).squaredNorm();
  }
  return std::sqrt(se / static_cast<double>(test.size() * test.y_dim()));
}

struct LogLikResult {
  double mean = 0.0;
  std::size_t floored = 0;
};

/// Mean mixture log density of the held-out pairs.
inline LogLikResult eval_loglik(const ensembles::DensityModel& model, const Dataset& test) {
  if (test.size() == 0) throw UsageError("log-likelihood needs a non-empty test set");
  auto conds = model.condition_batch(test.X);
  LogLikResult r;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto y = test.Y.row(static_cast<Eigen::Index>(i));
    double lp = conds[i]->mixture_log_prob(std::span<const double>(y.data(), test.y_dim()));
    if (!(lp >= kLogLikFloor)) {
      lp = kLogLikFloor;
      ++r.floored;
    }
    r.mean += lp;
  }
  r.mean /= static_cast<double>(test.size());
  if (r.floored > 0) warn(std::to_string(r.floored) + " test densities floored at 1e-300");
  return r;
}

struct MetricsRow {
  std::uint64_t seed = 0;
  std::string env;
  std::string model;
  std::string criterion;
  std::size_t epoch = 0;
  std::size_t n_train = 0;
  double kl = 0.0;
  double kl_stderr = 0.0;
  double rmse = 0.0;
  double loglik = 0.0;
  double wall_ms = 0.0;
  bool failed = false;  // training diverged this epoch; metrics are from the restored model
};

inline void write_metrics_header(std::ostream& os) {
  os << "seed,env,model,criterion,epoch,n_train,kl,kl_stderr,rmse,loglik,wall_ms\n";
}

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.seed << ',' << r.env << ',' << r.model << ',' << r.criterion << ',' << r.epoch << ',' << r.n_train << ','
     << fmt_double(r.kl) << ',' << fmt_double(r.kl_stderr) << ',' << fmt_double(r.rmse) << ','
     << fmt_double(r.loglik) << ',' << fmt_double(r.wall_ms) << '\n';
}

}  // namespace flowens::eval
