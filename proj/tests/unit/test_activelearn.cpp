#include "flowens/activelearn.hpp"
#include "flowens/environments.hpp"

#include "stub_model.hpp"

#include <gtest/gtest.h>

using namespace flowens;
using namespace flowens::al;
using flowens::testing::OpaqueMixture;
using flowens::testing::StubModel;
using ensembles::ConditionalDensity;
using ensembles::GaussianComponent;

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Two identical components everywhere, except at x = 1 where they sit far apart.
std::unique_ptr<StubModel> spike_model(double spike_at) {
  return std::make_unique<StubModel>(ModelKind::nflows_out, 1, 1, 2, [=](std::span<const double> x) {
    const double sep = std::abs(x[0] - spike_at) < 1e-12 ? 50.0 : 0.0;
    return std::make_unique<OpaqueMixture>(std::vector<GaussianComponent>{{{-sep}, {1.0}}, {{sep}, {1.0}}});
  });
}

ALConfig small_config() {
  ALConfig c;
  c.candidates = 50;
  c.acquire = 5;
  c.epochs = 4;
  c.initial_train = {200, 32, 5e-3};
  c.retrain = {50, 32, 5e-3};
  c.test_n = 200;
  c.eval_inputs = 10;
  c.kl_samples = 200;
  c.score_samples = 200;
  return c;
}

}  // namespace

TEST(Propose, HeteroCandidatesFollowInputMixture) {
  envs::Hetero env;
  Rng rng(3);
  const auto X = propose_candidates(env, 10000, rng);
  std::vector<double> v(X.data(), X.data() + X.rows());
  std::sort(v.begin(), v.end());
  double ks = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double F = (normal_cdf((v[i] + 4.0) / 0.4) + normal_cdf(v[i] / 0.9) + normal_cdf((v[i] - 4.0) / 0.4)) / 3.0;
    ks = std::max({ks, std::abs(F - i / n), std::abs(F - (i + 1) / n)});
  }
  EXPECT_LT(ks, 1.628 / std::sqrt(n));
}

TEST(Propose, WetChickenCandidatesInBoxAndSingle) {
  envs::WetChicken env;
  Rng rng(4);
  const auto X = propose_candidates(env, 2000, rng);
  EXPECT_GE(X.leftCols(2).minCoeff(), 0.0);
  EXPECT_LE(X.leftCols(2).maxCoeff(), 5.0);
  EXPECT_EQ(propose_candidates(env, 1, rng).rows(), 1);
  EXPECT_EQ(propose_candidates(envs::Bimodal(), 1, rng).rows(), 1);
  EXPECT_THROW(propose_candidates(env, 0, rng), UsageError);
}

TEST(Select, DegenerateScoresFollowIndexOrder) {
  const auto model = spike_model(1e9);
  SampleMatrix cand(30, 1);
  for (Eigen::Index i = 0; i < 30; ++i) cand(i, 0) = static_cast<double>(29 - i);
  Rng rng(1);
  const auto sel = score_and_select(*model, cand, Criterion::epistemic, 10, rng);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sel.indices[i], i);
  for (double s : sel.scores) EXPECT_NEAR(s, 0.0, 1e-12);
}

TEST(Select, SpikeIsChosenFirst) {
  const auto model = spike_model(1.0);
  SampleMatrix cand(21, 1);
  for (Eigen::Index i = 0; i < 21; ++i) cand(i, 0) = 0.1 * static_cast<double>(i);
  Rng rng(2);
  const auto sel = score_and_select(*model, cand, Criterion::epistemic, 3, rng);
  EXPECT_EQ(sel.indices[0], 10u);
  EXPECT_NEAR(sel.scores[10], std::log(2.0), 0.02);
  // total ranks it first too
  Rng rng2(2);
  EXPECT_EQ(score_and_select(*model, cand, Criterion::total, 1, rng2).indices[0], 10u);
}

TEST(Select, RandomNeverTouchesTheModel) {
  const auto model = spike_model(1.0);
  SampleMatrix cand = SampleMatrix::Zero(100, 1);
  const auto draws_before = draw_counter();
  Rng a(5), b(5);
  const auto s1 = score_and_select(*model, cand, Criterion::random, 10, a);
  const auto s2 = score_and_select(*model, cand, Criterion::random, 10, b);
  EXPECT_EQ(s1.indices, s2.indices);
  EXPECT_EQ(s1.model_evaluations, 0u);
  EXPECT_EQ(model->condition_calls(), 0u);
  EXPECT_EQ(draw_counter(), draws_before);
  std::vector<std::size_t> u = s1.indices;
  std::sort(u.begin(), u.end());
  EXPECT_EQ(std::unique(u.begin(), u.end()), u.end());
}

TEST(Select, FailingCandidateIsDropped) {
  // NaN density at x = 0 makes the estimator fail there only.
  StubModel bad(ModelKind::nflows_out, 1, 1, 2, [](std::span<const double> x) -> std::unique_ptr<ConditionalDensity> {
    if (x[0] == 0.0) {
      struct Broken : OpaqueMixture {
        using OpaqueMixture::OpaqueMixture;
        std::vector<double> component_log_prob(std::size_t, const SampleMatrix& Y) const override {
          return std::vector<double>(static_cast<std::size_t>(Y.rows()), std::numeric_limits<double>::quiet_NaN());
        }
      };
      return std::make_unique<Broken>(std::vector<GaussianComponent>{{{0.0}, {1.0}}, {{0.0}, {1.0}}});
    }
    return std::make_unique<OpaqueMixture>(std::vector<GaussianComponent>{{{0.0}, {1.0}}, {{x[0]}, {1.0}}});
  });
  SampleMatrix cand(4, 1);
  cand << 0.0, 1.0, 2.0, 3.0;
  Rng rng(3);
  const auto sel = score_and_select(bad, cand, Criterion::epistemic, 3, rng);
  EXPECT_TRUE(std::isnan(sel.scores[0]));
  EXPECT_EQ(sel.indices, (std::vector<std::size_t>{3, 2, 1}));
  Rng rng2(3);
  EXPECT_THROW(score_and_select(bad, cand, Criterion::epistemic, 4, rng2), EstimatorError);
}

TEST(Select, EpistemicBaseNeedsNflowsBase) {
  const auto model = spike_model(1.0);
  SampleMatrix cand = SampleMatrix::Zero(5, 1);
  Rng rng(1);
  EXPECT_THROW(score_and_select(*model, cand, Criterion::epistemic_base, 1, rng), ConfigError);
  EXPECT_THROW(score_and_select(*model, cand, Criterion::random, 6, rng), UsageError);
  EXPECT_EQ(parse_criterion("epistemic_base"), Criterion::epistemic_base);
  EXPECT_THROW(parse_criterion("bald"), ConfigError);
}

TEST(Loop, BookkeepingAndRows) {
  envs::Hetero env;
  auto cfg = small_config();
  cfg.epochs = 10;
  cfg.eval_every = 5;
  auto mc = ensembles::default_config(ModelKind::nflows_out, "hetero", 1, 1);
  mc.hidden_units = 8;
  const auto res = run_active_learning(env, mc, Criterion::epistemic, cfg, 4);
  EXPECT_EQ(res.data.size(), 100u + 10 * 5);
  ASSERT_EQ(res.rows.size(), 2u);
  EXPECT_EQ(res.rows[0].epoch, 5u);
  EXPECT_EQ(res.rows[1].epoch, 10u);
  EXPECT_EQ(res.rows[1].n_train, 150u);
  EXPECT_EQ(res.rows[1].model, "nflows_out");
  EXPECT_EQ(res.rows[1].criterion, "epistemic");
  EXPECT_EQ(res.log.size(), 10u);
  for (const auto& r : res.rows) {
    EXPECT_TRUE(std::isfinite(r.kl));
    EXPECT_GE(r.rmse, 0.0);
  }
}

TEST(Loop, ReproducibleFromSeed) {
  envs::Bimodal env;
  auto cfg = small_config();
  auto mc = ensembles::default_config(ModelKind::nflows_base, "bimodal", 1, 1);
  mc.hidden_units = 8;
  const auto a = run_active_learning(env, mc, Criterion::epistemic_base, cfg, 9);
  const auto b = run_active_learning(env, mc, Criterion::epistemic_base, cfg, 9);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].kl, b.rows[i].kl);
    EXPECT_EQ(a.rows[i].rmse, b.rows[i].rmse);
    EXPECT_EQ(a.rows[i].loglik, b.rows[i].loglik);
  }
  EXPECT_EQ(a.data.X, b.data.X);
  EXPECT_EQ(a.data.Y, b.data.Y);
  EXPECT_EQ(a.model->parameters(), b.model->parameters());
}

TEST(Loop, DivergedEpochIsRolledBack) {
  envs::Hetero env;
  auto cfg = small_config();
  auto model = spike_model(1e9);
  model->on_train = [](std::size_t call) {
    if (call == 3) throw TrainingError("boom", 7);
  };
  model->param = 1.0;
  const auto res = run_active_learning(env, std::move(model), Criterion::random, cfg, 1);
  EXPECT_EQ(res.failed_epochs, 1u);
  ASSERT_EQ(res.rows.size(), 4u);
  EXPECT_FALSE(res.rows[0].failed);
  EXPECT_TRUE(res.rows[1].failed);
  EXPECT_TRUE(res.log[1].failed);
  EXPECT_EQ(res.data.size(), 100u + 4 * 5);  // labels are kept
  EXPECT_EQ(res.model->parameters(), std::vector<double>{1.0});
}

TEST(Loop, NonFiniteParametersCountAsDivergence) {
  envs::Hetero env;
  auto cfg = small_config();
  cfg.epochs = 2;
  auto model = spike_model(1e9);
  auto* raw = model.get();
  model->on_train = [raw](std::size_t call) {
    if (call == 2) raw->param = std::numeric_limits<double>::quiet_NaN();
  };
  const auto res = run_active_learning(env, std::move(model), Criterion::random, cfg, 1);
  EXPECT_EQ(res.failed_epochs, 1u);
  EXPECT_TRUE(std::isfinite(res.model->parameters()[0]));
}

TEST(Loop, RejectsBadConfig) {
  envs::Hetero env;
  auto cfg = small_config();
  cfg.acquire = 60;
  auto mc = ensembles::default_config(ModelKind::pne, "hetero", 1, 1);
  EXPECT_THROW(run_active_learning(env, mc, Criterion::epistemic, cfg, 0), ConfigError);
  cfg = small_config();
  EXPECT_THROW(run_active_learning(env, mc, Criterion::epistemic_base, cfg, 0), ConfigError);
}
