#include "flowens/environments.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>

using namespace flowens;
using namespace flowens::envs;

namespace {

double mean_of(const SampleMatrix& S, Eigen::Index c = 0) { return S.col(c).mean(); }
double std_of(const SampleMatrix& S, Eigen::Index c = 0) {
  const double m = mean_of(S, c);
  return std::sqrt((S.col(c).array() - m).square().sum() / static_cast<double>(S.rows() - 1));
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// E[logistic(v)] for the mixture by trapezoid quadrature.
double logistic_mixture_mean(const MixtureNoise& m) {
  double total = 0.0;
  for (std::size_t k = 0; k < MixtureNoise::kComponents; ++k) {
    const double mu = MixtureNoise::means()[k], sd = MixtureNoise::stds()[k];
    const int n = 20000;
    const double h = 16.0 / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double z = -8.0 + h * i;
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      acc += w * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI) * MixtureNoise::logistic(mu + sd * z);
    }
    total += m.weights()[k] * acc * h;
  }
  return total;
}

}  // namespace

TEST(Hetero, FormulaValues) {
  EXPECT_EQ(Hetero::response(0.0, 0.0), 0.0);
  for (double z : {-2.0, 0.3, 5.0}) EXPECT_NEAR(Hetero::response(M_PI, z), 0.0, 1e-14);
}

TEST(Hetero, TruthMomentsAtZero) {
  Hetero env;
  Rng rng(11);
  const double x = 0.0;
  const auto S = env.truth(std::span<const double>(&x, 1), 100000, rng);
  EXPECT_NEAR(mean_of(S), 0.0, 0.03);
  EXPECT_NEAR(std_of(S), 3.0, 0.03);
}

TEST(Hetero, TruthStdMatchesFormulaAtRandomInputs) {
  Hetero env;
  Rng pick(5), rng(6);
  int checked = 0;
  while (checked < 10) {
    const double x = uniform(pick, -5.0, 5.0);
    const double s = Hetero::stddev(x);
    if (s < 0.05) continue;  // relative tolerance is meaningless at the roots
    const auto S = env.truth(std::span<const double>(&x, 1), 100000, rng);
    EXPECT_NEAR(std_of(S) / (3.0 * std::abs(std::cos(x / 2.0))), 1.0, 0.02) << "x=" << x;
    ++checked;
  }
}

TEST(Hetero, ProposalMatchesInputMixture) {
  Hetero env;
  Rng rng(8);
  const auto X = env.propose(5000, rng);
  std::vector<double> v(X.data(), X.data() + X.rows());
  std::sort(v.begin(), v.end());
  auto cdf = [](double x) {
    return (normal_cdf((x + 4.0) / 0.4) + normal_cdf(x / 0.9) + normal_cdf((x - 4.0) / 0.4)) / 3.0;
  };
  double ks = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    ks = std::max({ks, std::abs(cdf(v[i]) - i / n), std::abs(cdf(v[i]) - (i + 1) / n)});
  EXPECT_LT(ks, 1.628 / std::sqrt(n));  // 1% critical value
}

TEST(Bimodal, BranchValues) {
  EXPECT_EQ(Bimodal::branch(0.0, 0, 0.0), 0.0);
  EXPECT_EQ(Bimodal::branch(0.0, 1, 0.0), 30.0);
}

TEST(Bimodal, TruthMeanAtZeroAndSupport) {
  Bimodal env;
  Rng rng(3);
  const double x = 0.0;
  const auto S = env.truth(std::span<const double>(&x, 1), 100000, rng);
  EXPECT_NEAR(mean_of(S), 15.0, 0.1);
  const auto d = env.collect(Policy::random, 20000, rng);
  EXPECT_GE(d.X.minCoeff(), 0.0);
  EXPECT_NEAR(mean_of(d.X), 0.5, 0.02);
}

TEST(OneDim, UniformTestPolicyCoversRange) {
  Rng rng(1);
  const auto d = Bimodal().collect(Policy::uniform, 2000, rng);
  EXPECT_GE(d.X.minCoeff(), 0.0);
  EXPECT_LE(d.X.maxCoeff(), 2.0);
  EXPECT_EQ(d.policy, "uniform");
  EXPECT_THROW(Hetero().collect(Policy::heuristic, 10, rng), ConfigError);
}

TEST(WetChicken, BoundaryLeftEdge) {
  for (double tau : {-1.0, 0.0, 1.0}) {
    const auto n = WetChicken::step({1.0, 1.0}, -1.0, 0.0, tau);
    EXPECT_EQ(n.x, 0.0);
  }
}

TEST(WetChicken, WaterfallReset) {
  const auto n = WetChicken::step({0.0, 4.9}, 0.0, 1.0, 1.0);
  EXPECT_EQ(n.x, 0.0);
  EXPECT_EQ(n.y, 0.0);
}

TEST(WetChicken, FarBankNeverResets) {
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const auto n = WetChicken::step({5.0, 0.0}, 0.0, 1.0, rng);
    EXPECT_EQ(n.x, 5.0);
    EXPECT_GE(n.y, 2.5);
    EXPECT_LE(n.y, 3.5);
  }
}

TEST(WetChicken, StatesStayInBoxOverLongRandomRun) {
  WetChicken env;
  Rng rng(4);
  const auto d = env.collect(Policy::random, 100000, rng);
  EXPECT_GE(d.Y.minCoeff(), 0.0);
  EXPECT_LE(d.Y.maxCoeff(), 5.0);
  EXPECT_GE(d.X.leftCols(2).minCoeff(), 0.0);
  EXPECT_LE(d.X.leftCols(2).maxCoeff(), 5.0);
}

TEST(WetChicken, ResetFractionNearFallIsBimodal) {
  WetChicken env;
  Rng rng(9);
  const std::array<double, 4> x{0.0, 4.0, 0.0, 1.0};
  const auto S = env.truth(x, 20000, rng);
  const double frac = (S.col(1).array() == 0.0).cast<double>().mean();
  // tau > 1/3.5 goes over the fall
  EXPECT_NEAR(frac, 1.0 - (1.0 / 3.5 + 1.0) / 2.0, 0.015);
  EXPECT_GT(frac, 0.05);
  EXPECT_LT(frac, 0.95);
}

TEST(WetChicken, OutOfRangeActionIsClamped) {
  Rng a(1), b(1);
  const auto n1 = WetChicken::step({2.0, 2.0}, 3.0, -4.0, a);
  const auto n2 = WetChicken::step({2.0, 2.0}, 1.0, -1.0, b);
  EXPECT_EQ(n1.x, n2.x);
  EXPECT_EQ(n1.y, n2.y);
}

TEST(WetChicken, HeuristicAndRandomVisitDifferentStates) {
  WetChicken env;
  Rng rng(12);
  const auto r = env.collect(Policy::random, 5000, rng);
  const auto h = env.collect(Policy::heuristic, 5000, rng);
  auto hist = [](const Dataset& d) {
    std::array<double, 25> c{};
    for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
      const int bx = std::min(4, static_cast<int>(d.X(i, 0)));
      const int by = std::min(4, static_cast<int>(d.X(i, 1)));
      c[static_cast<std::size_t>(bx * 5 + by)] += 1.0;
    }
    return c;
  };
  const auto cr = hist(r), ch = hist(h);
  double chi2 = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < 25; ++k) {
    const double tot = cr[k] + ch[k];
    if (tot == 0.0) continue;
    ++used;
    for (double o : {cr[k], ch[k]}) {
      const double e = tot / 2.0;
      chi2 += (o - e) * (o - e) / e;
    }
  }
  ASSERT_GE(used, 2);
  EXPECT_GT(chi2, 42.98);  // chi^2 critical value at p=0.01 for 24 dof, the largest possible
}

TEST(Pendulum, UprightRestIsFixedPoint) {
  const auto s = Pendulum::step({0.0, 0.0}, 0.0, 0.0);
  EXPECT_EQ(s.theta, 0.0);
  EXPECT_EQ(s.theta_dot, 0.0);
}

TEST(Pendulum, AngularVelocityIsClipped) {
  Pendulum env;
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const auto s = env.step({uniform(rng, -M_PI, M_PI), uniform(rng, -9.0, 9.0)}, uniform(rng, -2.0, 2.0), rng);
    EXPECT_LE(std::abs(s.theta_dot), 8.0);
  }
  EXPECT_EQ(Pendulum::step({M_PI / 2, 7.9}, 2.0, 1.0).theta_dot, 8.0);
}

TEST(Pendulum, ShapesAndRecordedAction) {
  Pendulum env;
  Rng rng(3);
  const auto d = env.collect(Policy::random, 400, rng);
  EXPECT_EQ(d.x_dim(), 4u);
  EXPECT_EQ(d.y_dim(), 3u);
  EXPECT_LE(d.X.col(3).cwiseAbs().maxCoeff(), 2.0);
  // The next state of row i is the current state of row i + 1 inside an episode.
  for (Eigen::Index i = 0; i + 1 < 200; ++i) EXPECT_EQ(d.Y.row(i), d.X.row(i + 1).head(3));
  // cos^2 + sin^2 = 1 throughout
  EXPECT_LT(((d.Y.col(0).array().square() + d.Y.col(1).array().square()) - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Pendulum, NextVelocityIsMultiModal) {
  Pendulum env;
  Rng rng(21);
  // a = -1 keeps a + 2 eps inside the torque limit, so eps is not clipped away.
  const std::array<double, 4> x{1.0, 0.0, 0.0, -1.0};
  const auto S = env.truth(x, 200000, rng);
  const double lo = S.col(2).minCoeff(), hi = S.col(2).maxCoeff();
  const int bins = 60;
  std::vector<double> h(bins, 0.0);
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    h[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>((S(i, 2) - lo) / (hi - lo) * bins)))] += 1.0;
  int modes = 0;
  for (int b = 0; b < bins; ++b) {
    const double l = b > 0 ? h[b - 1] : 0.0, r = b + 1 < bins ? h[b + 1] : 0.0;
    if (h[b] > l && h[b] > r && h[b] > 0.02 * S.rows()) ++modes;
  }
  // sharp components at logistic(0.358), logistic(1.355), logistic(2.029) plus the broad bulk
  EXPECT_GE(modes, 3);
}

TEST(Pendulum, HeuristicSwingsUp) {
  // Noise-free rollout from hanging down ends near upright.
  PendulumState s{M_PI - 0.1, 0.0};
  double best = -1.0;
  for (int t = 0; t < 400; ++t) {
    s = Pendulum::step(s, Pendulum::heuristic_action(s), 0.0);
    if (t > 300) best = std::max(best, std::cos(s.theta));
  }
  EXPECT_GT(best, 0.9);
}

TEST(MixtureNoise, WeightsAndRange) {
  MixtureNoise m;
  double s = 0.0;
  for (double p : m.weights()) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
  for (double sd : MixtureNoise::stds()) EXPECT_GT(sd, 0.0);
  Rng rng(13);
  double sum = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double v = m.sample(rng);
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
    sum += v;
  }
  EXPECT_NEAR(sum / n, logistic_mixture_mean(m), 0.003);
}

TEST(Determinism, SameSeedSameData) {
  for (const std::string tag : {"hetero", "bimodal", "wetchicken", "pendulum"}) {
    const auto env = make_environment(tag);
    Rng a(77), b(77);
    const auto d1 = env->collect(env->is_dynamics() ? Policy::heuristic : Policy::random, 300, a);
    const auto d2 = env->collect(env->is_dynamics() ? Policy::heuristic : Policy::random, 300, b);
    EXPECT_EQ(d1.X, d2.X) << tag;
    EXPECT_EQ(d1.Y, d2.Y) << tag;
    const auto x = d1.X.row(5).eval();
    Rng c(5), e(5);
    EXPECT_EQ(env->truth(std::span<const double>(x.data(), x.size()), 50, c),
              env->truth(std::span<const double>(x.data(), x.size()), 50, e));
  }
  EXPECT_THROW(make_environment("hopper"), ConfigError);
}

TEST(Collect, RejectsEmpty) {
  Rng rng(1);
  EXPECT_THROW(collect_transitions(Hetero(), Policy::random, 0, rng), UsageError);
}

TEST(DatasetIo, RoundTripWithSidecar) {
  Rng rng(4);
  const auto d = Pendulum().collect(Policy::random, 50, rng);
  const auto path = (std::filesystem::temp_directory_path() / "flowens_ds_test.csv").string();
  write_dataset(path, d, 4);
  const auto r = read_dataset(path);
  EXPECT_EQ(r.X, d.X);
  EXPECT_EQ(r.Y, d.Y);
  EXPECT_EQ(r.env_tag, "pendulum");
  EXPECT_EQ(r.policy, "random");
  std::ifstream side(path + ".json");
  const auto meta = nlohmann::json::parse(side);
  EXPECT_EQ(meta["n"], 50);
  EXPECT_EQ(meta["seed"], 4);
  std::ifstream csv(path);
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "x0,x1,x2,x3,y0,y1,y2");
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}
