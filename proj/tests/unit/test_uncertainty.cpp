#include "flowens/ensembles.hpp"
#include "flowens/uncertainty.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace flowens;
using namespace flowens::ensembles;
using namespace flowens::uncertainty;

namespace {

const double kH1 = 0.5 * std::log(2.0 * M_PI * M_E);

GaussianMixtureConditional mix(std::vector<GaussianComponent> c) { return GaussianMixtureConditional(std::move(c)); }
GaussianComponent g1(double mu, double sd) { return {{mu}, {sd}}; }

SampleMatrix normal_samples(std::size_t n, double mu, double sd, Rng& rng) {
  SampleMatrix S(static_cast<Eigen::Index>(n), 1);
  for (Eigen::Index i = 0; i < S.rows(); ++i) S(i, 0) = mu + sd * std_normal(rng);
  return S;
}

Dataset hetero(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d{SampleMatrix(static_cast<Eigen::Index>(n), 1), SampleMatrix(static_cast<Eigen::Index>(n), 1), "hetero",
            "random"};
  const double mu[3] = {-4.0, 0.0, 4.0}, sd[3] = {0.4, 0.9, 0.4};
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    const auto c = uniform_index(rng, 3);
    const double x = mu[c] + sd[c] * std_normal(rng);
    d.X(i, 0) = x;
    d.Y(i, 0) = 7.0 * std::sin(x) + 3.0 * std_normal(rng) * std::abs(std::cos(x / 2.0));
  }
  return d;
}

// -integral p log p by the trapezoid rule for a 1D mixture conditional.
double quadrature_entropy(const ConditionalDensity& cd, double lo, double hi, std::size_t n) {
  SampleMatrix Y(static_cast<Eigen::Index>(n), 1);
  const double h = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) Y(static_cast<Eigen::Index>(i), 0) = lo + h * static_cast<double>(i);
  auto lp = cd.mixture_log_prob(Y);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = -std::exp(lp[i]) * lp[i];
    s += (i == 0 || i + 1 == n ? 0.5 : 1.0) * (std::isfinite(t) ? t : 0.0);
  }
  return s * h;
}

}  // namespace

TEST(TotalEntropy, StandardGaussian) {
  Rng rng(1);
  auto e = total_entropy_mc(mix({g1(0, 1)}), 100000, rng);
  EXPECT_NEAR(e.value, 1.41894, 0.01);
  EXPECT_NEAR(e.value, kH1, 3.0 * e.std_err);
  EXPECT_EQ(e.n, 100000u);
}

TEST(TotalEntropy, SeparatedMixtureAddsLog2) {
  auto cd = mix({g1(0, 1), g1(100, 1)});
  const double quad = quadrature_entropy(cd, -20, 120, 400001);
  EXPECT_NEAR(quad, kH1 + std::log(2.0), 1e-6);
  Rng rng(2);
  auto e = total_entropy_mc(cd, 100000, rng);
  EXPECT_NEAR(e.value, 2.1121, 0.02);
  EXPECT_NEAR(e.value, quad, 0.02);
}

TEST(TotalEntropy, IdenticalComponentsAndMinimumCount) {
  Rng rng(3);
  auto e = total_entropy_mc(mix({g1(1, 2), g1(1, 2), g1(1, 2)}), 50000, rng);
  EXPECT_NEAR(e.value, kH1 + std::log(2.0), 3.0 * e.std_err);
  EXPECT_THROW(total_entropy_mc(mix({g1(0, 1)}), 99, rng), UsageError);
}

TEST(TotalEntropy, UnbiasedOverSeeds) {
  double sum = 0.0, se2 = 0.0;
  const int S = 200;
  for (int s = 0; s < S; ++s) {
    Rng rng(derive_seed(77, s));
    auto e = total_entropy_mc(mix({g1(0, 1)}), 1000, rng);
    sum += e.value;
    se2 += e.std_err * e.std_err;
  }
  const double pooled = std::sqrt(se2) / S;
  EXPECT_NEAR(sum / S, 1.41894, 3.0 * pooled);
}

TEST(AleatoricEntropy, MonteCarloCases) {
  Rng rng(4);
  auto a = aleatoric_entropy_mc(mix({g1(0, 1), g1(0, 1)}), 50000, rng);
  EXPECT_NEAR(a.value, 1.4189, 0.01);
  // Second component with std e^2: entropy 1.4189 + 2.
  auto b = aleatoric_entropy_mc(mix({g1(0, 1), g1(0, M_E * M_E)}), 50000, rng);
  EXPECT_NEAR(b.value, 2.4189, 0.02);
  EXPECT_EQ(b.n, 100000u);
}

TEST(AleatoricEntropy, ClosedForms) {
  EXPECT_NEAR(aleatoric_entropy_analytic(mix({g1(0, 1), g1(3, 1)})), 1.41894, 1e-5);
  EXPECT_NEAR(aleatoric_entropy_analytic(mix({g1(0, 1)})), kH1, 1e-10);
  auto two_d = mix({GaussianComponent{{0, 0}, {1, 2}}});
  EXPECT_NEAR(aleatoric_entropy_analytic(two_d), 2 * kH1 + 0.5 * std::log(4.0), 1e-10);
  EXPECT_NEAR(aleatoric_entropy_analytic(two_d), 3.5310, 1e-4);
  EXPECT_NEAR(aleatoric_entropy_analytic(mix({g1(0, 1), g1(0, M_E)})), (kH1 + kH1 + 1.0) / 2.0, 1e-10);
  EXPECT_NEAR((kH1 + kH1 + 1.0) / 2.0, 1.91894, 1e-5);
}

TEST(AleatoricEntropy, AnalyticMatchesMcOnIdentityNflowsBase) {
  ModelConfig cfg = default_config(ModelKind::nflows_base, "bimodal", 1, 1);
  cfg.init_seed = 5;
  FlowEnsemble model(cfg);
  Rng rng(6);
  for (double x : {-1.0, 0.0, 2.5}) {
    auto cd = model.condition(std::span<const double>(&x, 1));
    auto mc = aleatoric_entropy_mc(*cd, 20000, rng);
    EXPECT_NEAR(mc.value, aleatoric_entropy_analytic(*cd), 3.0 * mc.std_err);
  }
}

TEST(Epistemic, IdenticalComponentsGiveZero) {
  Rng rng(7);
  auto cd = mix({g1(0.5, 1.5), g1(0.5, 1.5), g1(0.5, 1.5)});
  auto r = epistemic_mi(cd, ModelKind::pne, {20000, Space::automatic, false}, rng);
  EXPECT_NEAR(r.epistemic, 0.0, 2.0 * r.total_err);
  EXPECT_EQ(r.epistemic, r.total - r.aleatoric);
  auto s = epistemic_mi(cd, ModelKind::nflows_out, {20000, Space::automatic, true}, rng);
  EXPECT_NEAR(s.epistemic, 0.0, 2.0 * std::hypot(s.total_err, s.aleatoric_err) + 1e-3);
}

TEST(Epistemic, SeparatedComponentsGiveLog2) {
  Rng rng(8);
  auto cd = mix({g1(-100, 1), g1(100, 1)});
  auto r = epistemic_mi(cd, ModelKind::pne, {100000, Space::automatic, false}, rng);
  EXPECT_NEAR(r.epistemic, std::log(2.0), 0.02);
  auto s = epistemic_mi(cd, ModelKind::pne, {100000, Space::automatic, true}, rng);
  EXPECT_NEAR(s.epistemic, std::log(2.0), 0.02);
  EXPECT_EQ(s.n_per_component_samples, 50000u);
}

TEST(Epistemic, NonNegativeUpToNoise) {
  Rng q(9);
  for (int t = 0; t < 20; ++t) {
    std::vector<GaussianComponent> c;
    for (int w = 0; w < 5; ++w) c.push_back(g1(uniform(q, -2, 2), uniform(q, 0.2, 2)));
    Rng rng(derive_seed(10, t));
    auto r = epistemic_mi(mix(c), ModelKind::pne, {5000, Space::automatic, false}, rng);
    EXPECT_GE(r.epistemic, -2.0 * r.total_err);
  }
}

TEST(Epistemic, GpClosedForm) {
  GpConditional cd({0.3}, {0.5}, {0.2});
  Rng rng(1);
  const std::uint64_t before = draw_counter();
  auto r = epistemic_mi(cd, ModelKind::gp, {}, rng);
  EXPECT_EQ(draw_counter(), before);
  EXPECT_EQ(r.estimator, EstimatorTag::gp_closed_form);
  EXPECT_NEAR(r.total, 0.5 * std::log(2 * M_PI * M_E * 0.7), 1e-12);
  EXPECT_NEAR(r.aleatoric, 0.5 * std::log(2 * M_PI * M_E * 0.2), 1e-12);
  EXPECT_NEAR(r.epistemic, 0.5 * std::log(0.7 / 0.2), 1e-12);
}

TEST(Epistemic, BaseVsOutputOnIdentitySplines) {
  ModelConfig cfg = default_config(ModelKind::nflows_base, "bimodal", 1, 1);
  cfg.init_seed = 12;
  FlowEnsemble model(cfg);
  const double x = 0.7;
  auto cd = model.condition(std::span<const double>(&x, 1));
  Rng rng(13);
  auto mi = epistemic_base_vs_output_check(*cd, 20000, rng);
  EXPECT_NEAR(mi.mi_base, mi.mi_output, 3.0 * std::hypot(mi.base_err, mi.output_err) + 0.01);
}

TEST(Epistemic, AffineOutputShiftsEntropyButNotMi) {
  // Normalizer fitted on y with mean 1 and std 2 makes the output y = 2b + 1.
  ModelConfig cfg = default_config(ModelKind::nflows_base, "bimodal", 1, 1);
  cfg.init_seed = 14;
  FlowEnsemble model(cfg);
  Dataset d{SampleMatrix(2, 1), SampleMatrix(2, 1), "affine", "fixed"};
  d.X << -1.0, 1.0;
  d.Y << -1.0, 3.0;
  TrainConfig tc;
  tc.steps = 0;
  Rng r0(1);
  model.train(d, tc, r0);
  const double x = 0.2;
  auto cd = model.condition(std::span<const double>(&x, 1));
  Rng rb(15), ro(16);
  auto base = epistemic_mi(*cd, ModelKind::nflows_base, {20000, Space::base, false}, rb);
  auto out = epistemic_mi(*cd, ModelKind::nflows_base, {20000, Space::output, false}, ro);
  const double noise = 3.0 * std::hypot(base.total_err, std::hypot(out.total_err, out.aleatoric_err));
  EXPECT_NEAR(out.total - base.total, std::log(2.0), noise);
  EXPECT_NEAR(out.aleatoric - base.aleatoric, std::log(2.0), noise);
  EXPECT_NEAR(out.epistemic, base.epistemic, noise);
}

TEST(Epistemic, DrawCountsFollowTheBudget) {
  ModelConfig out_cfg = default_config(ModelKind::nflows_out, "hetero", 1, 1);
  ModelConfig base_cfg = default_config(ModelKind::nflows_base, "hetero", 1, 1);
  FlowEnsemble out(out_cfg), base(base_cfg);
  SampleMatrix X(8, 1);
  for (Eigen::Index i = 0; i < 8; ++i) X(i, 0) = -4.0 + static_cast<double>(i);
  auto ro = uncertainty_grid(out, X, {5000, Space::automatic, false}, 1, 1);
  auto rb = uncertainty_grid(base, X, {1000, Space::automatic, false}, 1, 1);
  std::uint64_t d_out = 0, d_base = 0;
  for (const auto& r : ro) d_out += r.draws;
  for (const auto& r : rb) d_base += r.draws;
  EXPECT_EQ(d_out, sample_budget(BudgetMode::output_space, 8, 1000, 5));
  EXPECT_EQ(d_base, sample_budget(BudgetMode::base_space, 8, 1000, 5));
  EXPECT_EQ(d_out, 5 * d_base);
  EXPECT_EQ(rb[0].estimator, EstimatorTag::analytic_base);
  EXPECT_EQ(ro[0].estimator, EstimatorTag::mc_output_space);
}

TEST(Epistemic, GridIsThreadCountIndependent) {
  ModelConfig cfg = default_config(ModelKind::nflows_out, "hetero", 1, 1);
  FlowEnsemble model(cfg);
  SampleMatrix X(6, 1);
  for (Eigen::Index i = 0; i < 6; ++i) X(i, 0) = 0.5 * static_cast<double>(i);
  auto a = uncertainty_grid(model, X, {1000, Space::automatic, false}, 3, 1);
  auto b = uncertainty_grid(model, X, {1000, Space::automatic, false}, 3, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].total, b[i].total);
    EXPECT_EQ(a[i].aleatoric, b[i].aleatoric);
    EXPECT_EQ(a[i].seed, b[i].seed);
  }
}

TEST(Epistemic, DecreasesWithMoreData) {
  SampleMatrix grid(21, 1);
  for (Eigen::Index i = 0; i < 21; ++i) grid(i, 0) = -5.0 + 0.5 * static_cast<double>(i);
  auto mean_epi = [&](std::size_t n) {
    FlowEnsemble model(default_config(ModelKind::nflows_out, "hetero", 1, 1));
    TrainConfig tc;
    Rng rng(17);
    model.train(hetero(n, 18), tc, rng);
    double s = 0.0;
    for (const auto& r : uncertainty_grid(model, grid, {2000, Space::automatic, false}, 19)) s += r.epistemic;
    return s / 21.0;
  };
  const double small = mean_epi(100), large = mean_epi(1000);
  std::printf("mean epistemic: n=100 %.4f, n=1000 %.4f\n", small, large);
  EXPECT_LT(large, small);
}

TEST(Budget, Formulae) {
  EXPECT_EQ(sample_budget(BudgetMode::output_space, 50, 1000, 5), 250000u);
  EXPECT_EQ(sample_budget(BudgetMode::base_space, 50, 1000, 5), 50000u);
  EXPECT_THROW(sample_budget(BudgetMode::base_space, 0, 1000, 5), UsageError);
}

TEST(KnnKl, SelfDivergenceIsZero) {
  Rng rng(20);
  SampleMatrix all = normal_samples(10000, 0, 1, rng);
  SampleMatrix P = all.topRows(5000), Q = all.bottomRows(5000);
  EXPECT_NEAR(knn_kl(P, Q), 0.0, 0.05);
}

TEST(KnnKl, GaussianClosedForms) {
  Rng rng(21);
  SampleMatrix P = normal_samples(10000, 0, 1, rng);
  EXPECT_NEAR(knn_kl(P, normal_samples(10000, 1, 1, rng)), 0.5, 0.1);
  EXPECT_NEAR(knn_kl(P, normal_samples(10000, 0, 2, rng)), 0.5 * (0.25 - 1.0 + std::log(4.0)), 0.1);
  EXPECT_GT(knn_kl(P, normal_samples(10000, 10, 1, rng)), 5.0);
}

TEST(KnnKl, TwoDimensionalClosedForm) {
  Rng rng(22);
  const std::size_t n = 4000;
  SampleMatrix P(n, 2), Q(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    P(i, 0) = std_normal(rng);
    P(i, 1) = std_normal(rng);
    Q(i, 0) = 1.0 + std_normal(rng);
    Q(i, 1) = 2.0 * std_normal(rng);
  }
  // KL(N(0,I) || N((1,0), diag(1,4))) = 0.5 * (1 + 0.25 + 1 - 2 + log 4).
  EXPECT_NEAR(knn_kl(P, Q), 0.5 * (1.25 + 1.0 - 2.0 + std::log(4.0)), 0.1);
}

TEST(KnnKl, BruteForceMatchesSortedPath) {
  Rng rng(23);
  SampleMatrix P = normal_samples(300, 0, 1, rng), Q = normal_samples(400, 0.5, 1.3, rng);
  SampleMatrix P2 = SampleMatrix::Zero(300, 2), Q2 = SampleMatrix::Zero(400, 2);
  P2.col(0) = P.col(0);
  Q2.col(0) = Q.col(0);
  std::vector<double> r1, n1, r2, n2;
  uncertainty::detail::knn_distances(P, Q, 5, r1, n1);
  uncertainty::detail::knn_distances(P2, Q2, 5, r2, n2);
  for (std::size_t i = 0; i < r1.size(); ++i) {
    EXPECT_NEAR(r1[i], r2[i], 1e-12);
    EXPECT_NEAR(n1[i], n2[i], 1e-12);
  }
}

TEST(KnnKl, PrunedSweepMatchesBruteForce) {
  Rng rng(29);
  for (Eigen::Index D : {2, 3, 7}) {
    SampleMatrix P(250, D), Q(310, D);
    for (Eigen::Index i = 0; i < P.size(); ++i) P.data()[i] = std_normal(rng);
    for (Eigen::Index i = 0; i < Q.size(); ++i) Q.data()[i] = 0.3 + 1.5 * std_normal(rng);
    P.row(7) = P.row(3);  // a duplicate pair
    std::vector<double> r1, n1, r2, n2;
    uncertainty::detail::knn_distances(P, Q, 5, r1, n1);
    uncertainty::detail::knn_distances_brute(P, Q, 5, r2, n2);
    for (std::size_t i = 0; i < r1.size(); ++i) {
      EXPECT_DOUBLE_EQ(r1[i], r2[i]);
      EXPECT_DOUBLE_EQ(n1[i], n2[i]);
    }
  }
}

TEST(KnnKl, DuplicatesAreJittered) {
  SampleMatrix P(20, 1), Q(20, 1);
  for (int i = 0; i < 20; ++i) {
    P(i, 0) = i % 2;
    Q(i, 0) = i % 3;
  }
  EXPECT_TRUE(std::isfinite(knn_kl(P, Q)));
  EXPECT_THROW(knn_kl(P.topRows(5), Q), UsageError);
}

TEST(DimStudy, AnalyticColumnAndTrend) {
  DimStudyConfig cfg;
  cfg.dims = {4, 1, 16, 2, 8};
  cfg.n_samples = 1000;
  cfg.seeds = 100;
  cfg.random_scaling = false;
  auto r = mc_dimension_study(cfg);
  ASSERT_EQ(r.rows.size(), 5u);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_NEAR(r.rows[i].analytic_entropy, static_cast<double>(r.rows[i].d) * kH1, 1e-10);
    if (i > 0) EXPECT_GT(r.rows[i].d, r.rows[i - 1].d);
  }
  EXPECT_GT(r.rows.back().mc_entropy_err, r.rows.front().mc_entropy_err);
  std::ostringstream os;
  write_dim_study_csv(os, r);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "d,analytic_entropy,mc_entropy_mean,mc_entropy_err,n_samples,n_seeds");
}

TEST(DimStudy, EasyRegime) {
  DimStudyConfig cfg;
  cfg.dims = {1};
  cfg.n_samples = 100000;
  cfg.seeds = 3;
  EXPECT_LT(mc_dimension_study(cfg).rows[0].mc_entropy_err, 0.01);
  cfg.dims = {65};
  EXPECT_THROW(mc_dimension_study(cfg), UsageError);
}

TEST(ReportCsv, HeaderAndRow) {
  std::ostringstream os;
  write_report_csv_header(os);
  UncertaintyReport r;
  r.total = 1.5;
  r.aleatoric = 1.25;
  r.epistemic = 0.25;
  r.n_total_samples = 1000;
  r.estimator = EstimatorTag::analytic_base;
  r.seed = 42;
  write_report_csv_row(os, 3, r);
  EXPECT_EQ(os.str(), "x_index,total,aleatoric,epistemic,estimator,n_samples,seed\n3,1.5,1.25,0.25,analytic_base,1000,42\n");
}
