// Four weighted-dice scenarios, each described by an ensemble of three PMFs.
// Aleatoric uncertainty is the mean entropy of the members, total is the
// entropy of their average, and epistemic is the gap: it is large only when
// the members disagree.

#include <array>
#include <cmath>
#include <cstdio>

using Pmf = std::array<double, 6>;

double entropy(const Pmf& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

void report(const char* name, const std::array<Pmf, 3>& members) {
  Pmf mean{};
  double alea = 0.0;
  for (const auto& m : members) {
    alea += entropy(m) / 3.0;
    for (int k = 0; k < 6; ++k) mean[k] += m[k] / 3.0;
  }
  const double total = entropy(mean);
  std::printf("%-28s total %.3f  aleatoric %.3f  epistemic %.3f\n", name, total, alea, std::abs(total - alea) < 5e-13 ? 0.0 : total - alea);
}

int main() {
  const Pmf fair{1 / 6., 1 / 6., 1 / 6., 1 / 6., 1 / 6., 1 / 6.};
  const Pmf loaded6{0.01, 0.01, 0.01, 0.01, 0.01, 0.95};
  const Pmf loaded1{0.95, 0.01, 0.01, 0.01, 0.01, 0.01};
  const Pmf loaded3{0.01, 0.01, 0.95, 0.01, 0.01, 0.01};
  const Pmf tilt_a{0.30, 0.30, 0.10, 0.10, 0.10, 0.10};
  const Pmf tilt_b{0.10, 0.10, 0.30, 0.30, 0.10, 0.10};
  const Pmf tilt_c{0.10, 0.10, 0.10, 0.10, 0.30, 0.30};

  report("fair die, models agree", {fair, fair, fair});
  report("loaded die, models agree", {loaded6, loaded6, loaded6});
  report("loaded die, models disagree", {loaded1, loaded3, loaded6});
  report("mildly tilted, disagree", {tilt_a, tilt_b, tilt_c});
  std::printf("maximum possible entropy log 6 = %.3f\n", std::log(6.0));
}
