#pragma once

#include "flowens/ensembles/factory.hpp"
#include "flowens/environments/environment.hpp"
#include "flowens/evalmetrics/metrics.hpp"
#include "flowens/uncertainty/epistemic.hpp"

#include <chrono>
#include <numeric>

namespace flowens::al {

using ensembles::DensityModel;
using ensembles::ModelKind;

enum class Criterion { epistemic, aleatoric, total, random, epistemic_base };

inline std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::epistemic: return "epistemic";
    case Criterion::aleatoric: return "aleatoric";
    case Criterion::total: return "total";
    case Criterion::random: return "random";
    case Criterion::epistemic_base: return "epistemic_base";
  }
  return "?";
}

inline Criterion parse_criterion(const std::string& s) {
  for (auto c : {Criterion::epistemic, Criterion::aleatoric, Criterion::total, Criterion::random,
                 Criterion::epistemic_base})
    if (to_string(c) == s) return c;
  throw ConfigError("unknown acquisition criterion '" + s + "'");
}

inline void check_criterion(Criterion c, ModelKind kind) {
  if (c == Criterion::epistemic_base && kind != ModelKind::nflows_base)
    throw ConfigError("criterion epistemic_base needs an nflows_base model");
}

struct ALConfig {
  std::size_t initial_n = 0;  // 0: 100 for 1D tasks, 200 otherwise
  std::size_t candidates = 1000;
  std::size_t acquire = 10;
  std::size_t epochs = 10;
  std::size_t eval_every = 1;
  bool eval_initial = false;  // also record a row before the first acquisition
  ensembles::TrainConfig initial_train{2000, 64, 5e-4};
  ensembles::TrainConfig retrain{500, 64, 5e-4};
  std::size_t test_n = 1000;  // held-out set collected with the test policy
  std::size_t eval_inputs = eval::kDefaultKlInputs;
  std::size_t kl_samples = eval::kDefaultKlSamples;
  std::size_t rmse_draws = 1;
  std::size_t score_samples = 0;  // 0: per-kind default
  std::size_t threads = 0;

  std::size_t resolved_initial_n(const envs::Environment& env) const {
    if (initial_n > 0) return initial_n;
    return env.x_dim() == 1 ? 100 : 200;
  }

  void validate() const {
    if (candidates == 0) throw ConfigError("candidates must be positive");
    if (acquire == 0 || acquire > candidates) throw ConfigError("acquire must be in [1, candidates]");
    if (eval_every == 0) throw ConfigError("eval_every must be positive");
    if (eval_inputs == 0 || test_n == 0) throw ConfigError("evaluation needs test inputs");
    if (kl_samples <= uncertainty::kDefaultKnnK) throw ConfigError("kl_samples must exceed the kNN k");
    if (initial_train.batch == 0 || retrain.batch == 0) throw ConfigError("batch size must be positive");
  }
};

/// Candidate inputs drawn like the training inputs.
inline SampleMatrix propose_candidates(const envs::Environment& env, std::size_t n, Rng& rng) {
  if (n == 0) throw UsageError("propose_candidates needs n >= 1");
  return env.propose(n, rng);
}

inline uncertainty::SamplingConfig scoring_config(Criterion c, ModelKind kind, std::size_t n_samples) {
  uncertainty::SamplingConfig sc;
  sc.n_samples = n_samples;
  // Nflows Base scores everything but epistemic_base in output space, so the
  // entropies are comparable with the other models.
  if (kind == ModelKind::nflows_base)
    sc.space = c == Criterion::epistemic_base ? uncertainty::Space::base : uncertainty::Space::output;
  return sc;
}

inline constexpr double kScoreResolution = 1e-9;  // nats

struct Selection {
  std::vector<std::size_t> indices;  // into the candidate matrix, best first
  std::vector<double> scores;        // score of every candidate (NaN if dropped or unscored)
  std::size_t model_evaluations = 0;
};

/// Scores every candidate and keeps the top k; ties go to the lower index.
/// `random` draws k indices without replacement and never touches the model.
inline Selection score_and_select(const DensityModel& model, const SampleMatrix& candidates, Criterion criterion,
                                  std::size_t k, Rng& rng, std::size_t n_samples = 0, std::size_t threads = 0) {
  const auto n = static_cast<std::size_t>(candidates.rows());
  if (k > n) throw UsageError("cannot select more points than there are candidates");
  check_criterion(criterion, model.kind());
  Selection sel;
  sel.scores.assign(n, std::numeric_limits<double>::quiet_NaN());
  if (criterion == Criterion::random) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    idx.resize(k);
    sel.indices = std::move(idx);
    return sel;
  }
  const auto sc = scoring_config(criterion, model.kind(), n_samples);
  const std::uint64_t seed = rng();
  const auto conds = model.condition_batch(candidates);
  sel.model_evaluations = n;
  std::vector<std::string> failures(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        Rng r(derive_seed(seed, i));
        try {
          const auto rep = uncertainty::epistemic_mi(*conds[i], model.kind(), sc, r);
          const double s = criterion == Criterion::aleatoric ? rep.aleatoric
                           : criterion == Criterion::total   ? rep.total
                                                             : rep.epistemic;
          if (std::isfinite(s)) sel.scores[i] = s;
        } catch (const EstimatorError& e) {
          failures[i] = e.what();
        }
      },
      threads);
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isfinite(sel.scores[i]))
      ok.push_back(i);
    else
      warn("candidate " + std::to_string(i) + " dropped: " + (failures[i].empty() ? "non-finite score" : failures[i]));
  }
  if (ok.size() < k) throw EstimatorError("fewer scorable candidates than requested acquisitions");
  // Scores closer than the resolution count as ties, so rounding noise in a
  // degenerate model cannot reorder candidates.
  std::vector<double> key(n, 0.0);
  for (std::size_t i : ok) key[i] = std::round(sel.scores[i] / kScoreResolution);
  std::stable_sort(ok.begin(), ok.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  ok.resize(k);
  sel.indices = std::move(ok);
  return sel;
}

struct AcquisitionRecord {
  std::size_t epoch = 0;
  SampleMatrix chosen;
  std::vector<double> scores;
  bool failed = false;
};

struct ALResult {
  std::vector<eval::MetricsRow> rows;
  std::vector<AcquisitionRecord> log;
  Dataset data;
  std::unique_ptr<DensityModel> model;
  std::size_t failed_epochs = 0;
};

namespace detail {

inline bool finite_parameters(const DensityModel& m) {
  for (double v : m.parameters())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detail

/// Pool-based active learning. Each epoch proposes candidates, acquires the
/// top `acquire` under the criterion, labels them from the environment and
/// continues training from the current parameters. A diverged retrain is
/// rolled back and the epoch marked failed.
inline ALResult run_active_learning(const envs::Environment& env, std::unique_ptr<DensityModel> model,
                                    Criterion criterion, const ALConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!model) throw UsageError("active learning needs a model");
  check_criterion(criterion, model->kind());
  require_shape(model->x_dim() == env.x_dim() && model->y_dim() == env.y_dim(), "model dims do not match env");
  using clock = std::chrono::steady_clock;

  Rng data_rng(derive_seed(seed, 1)), test_rng(derive_seed(seed, 2)), train_rng(derive_seed(seed, 3)),
      cand_rng(derive_seed(seed, 4)), label_rng(derive_seed(seed, 5)), select_rng(derive_seed(seed, 6)),
      rmse_rng(derive_seed(seed, 7));

  ALResult res;
  res.data = collect_transitions(env, envs::Policy::random, cfg.resolved_initial_n(env), data_rng);
  const Dataset test_all = collect_transitions(env, env.test_policy(), cfg.test_n, test_rng);
  std::vector<std::size_t> pick(test_all.size());
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  const std::size_t n_eval = std::min(cfg.eval_inputs, pick.size());
  for (std::size_t i = 0; i < n_eval; ++i) std::swap(pick[i], pick[i + uniform_index(test_rng, pick.size() - i)]);
  pick.resize(n_eval);
  const Dataset test = test_all.subset(pick);

  res.model = std::move(model);
  auto t0 = clock::now();
  res.model->train(res.data, cfg.initial_train, train_rng);

  auto evaluate = [&](std::size_t epoch, bool failed, clock::time_point start) {
    eval::MetricsRow row;
    row.seed = seed;
    row.env = env.tag();
    row.model = to_string(res.model->kind());
    row.criterion = to_string(criterion);
    row.epoch = epoch;
    row.n_train = res.data.size();
    const auto kl = eval::eval_kl(*res.model, env, test.X, cfg.kl_samples, derive_seed(seed, 1000 + epoch), cfg.threads);
    row.kl = kl.mean;
    row.kl_stderr = kl.std_err;
    row.rmse = eval::eval_rmse(*res.model, test, rmse_rng, cfg.rmse_draws);
    row.loglik = eval::eval_loglik(*res.model, test).mean;
    row.failed = failed;
    row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    res.rows.push_back(row);
  };
  if (cfg.eval_initial) evaluate(0, false, t0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = clock::now();
    const SampleMatrix cand = propose_candidates(env, cfg.candidates, cand_rng);
    const auto sel = score_and_select(*res.model, cand, criterion, cfg.acquire, select_rng, cfg.score_samples,
                                      cfg.threads);
    SampleMatrix chosen(static_cast<Eigen::Index>(sel.indices.size()), cand.cols());
    std::vector<double> chosen_scores;
    for (std::size_t i = 0; i < sel.indices.size(); ++i) {
      chosen.row(static_cast<Eigen::Index>(i)) = cand.row(static_cast<Eigen::Index>(sel.indices[i]));
      chosen_scores.push_back(sel.scores[sel.indices[i]]);
    }
    res.data.append(env.label(chosen, label_rng));

    auto backup = res.model->clone();
    bool failed = false;
    try {
      res.model->train(res.data, cfg.retrain, train_rng);
      failed = !detail::finite_parameters(*res.model);
    } catch (const TrainingError& e) {
      warn("epoch " + std::to_string(epoch) + " training diverged: " + e.what());
      failed = true;
    }
    if (failed) {
      res.model = std::move(backup);
      ++res.failed_epochs;
    }
    res.log.push_back({epoch, std::move(chosen), std::move(chosen_scores), failed});
    if (epoch % cfg.eval_every == 0) evaluate(epoch, failed, start);
  }
  return res;
}

/// Builds the model from `model_cfg` with an init seed derived from `seed`.
inline ALResult run_active_learning(const envs::Environment& env, const ensembles::ModelConfig& model_cfg,
                                    Criterion criterion, const ALConfig& cfg, std::uint64_t seed) {
  check_criterion(criterion, model_cfg.kind);
  auto mc = model_cfg;
  mc.init_seed = derive_seed(seed, 0);
  return run_active_learning(env, ensembles::make_model(mc), criterion, cfg, seed);
}

}  // namespace flowens::al
