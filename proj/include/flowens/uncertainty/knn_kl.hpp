#pragma once

#include "flowens/core.hpp"

#include <numeric>
#include <tuple>

namespace flowens::uncertainty {

inline constexpr std::size_t kDefaultKnnK = 5;
inline constexpr double kKnnJitter = 1e-12;

namespace detail {

/// k-th smallest |a[j] - v| over sorted a, skipping index `self` if set.
inline double kth_gap_sorted(const std::vector<double>& a, double v, std::size_t k, std::ptrdiff_t self) {
  const auto n = static_cast<std::ptrdiff_t>(a.size());
  std::ptrdiff_t hi = std::lower_bound(a.begin(), a.end(), v) - a.begin();
  std::ptrdiff_t lo = hi - 1;
  double d = 0.0;
  for (std::size_t step = 0; step < k; ++step) {
    if (lo == self) --lo;
    if (hi == self) ++hi;
    const double dl = lo >= 0 ? v - a[static_cast<std::size_t>(lo)] : std::numeric_limits<double>::infinity();
    const double dh = hi < n ? a[static_cast<std::size_t>(hi)] - v : std::numeric_limits<double>::infinity();
    if (dl <= dh) {
      d = dl;
      --lo;
    } else {
      d = dh;
      ++hi;
    }
  }
  return d;
}

/// (rho_k, nu_k) for every row of P.
inline void knn_distances(const SampleMatrix& P, const SampleMatrix& Q, std::size_t k, std::vector<double>& rho,
                          std::vector<double>& nu) {
  const auto n = static_cast<std::size_t>(P.rows());
  const auto m = static_cast<std::size_t>(Q.rows());
  rho.assign(n, 0.0);
  nu.assign(n, 0.0);
  if (P.cols() == 1) {
    std::vector<double> ps(P.data(), P.data() + n), qs(Q.data(), Q.data() + m);
    std::sort(ps.begin(), ps.end());
    std::sort(qs.begin(), qs.end());
    for (std::size_t i = 0; i < n; ++i) {
      // Position of this value in the sorted copy; any duplicate works since
      // the distance multiset is the same.
      const auto self = std::lower_bound(ps.begin(), ps.end(), P(static_cast<Eigen::Index>(i), 0)) - ps.begin();
      rho[i] = kth_gap_sorted(ps, ps[static_cast<std::size_t>(self)], k, self);
      nu[i] = kth_gap_sorted(qs, ps[static_cast<std::size_t>(self)], k, -1);
    }
    return;
  }
  // Rows sorted along the widest coordinate of P; the sweep from the query
  // position stops once the gap along that axis exceeds the current k-th best.
  Eigen::Index axis = 0;
  (P.rowwise() - P.colwise().mean()).colwise().squaredNorm().maxCoeff(&axis);
  auto sorted_rows = [axis](const SampleMatrix& S) {
    std::vector<std::size_t> order(static_cast<std::size_t>(S.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return S(static_cast<Eigen::Index>(a), axis) < S(static_cast<Eigen::Index>(b), axis);
    });
    SampleMatrix out(S.rows(), S.cols());
    std::vector<double> key(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = S.row(static_cast<Eigen::Index>(order[i]));
      key[i] = out(static_cast<Eigen::Index>(i), axis);
    }
    return std::make_tuple(std::move(out), std::move(key), std::move(order));
  };
  const auto [ps, pkey, porder] = sorted_rows(P);
  const auto [qs, qkey, qorder] = sorted_rows(Q);
  const auto D = P.cols();
  std::vector<double> heap;
  auto kth = [&](const SampleMatrix& S, const std::vector<double>& key, const double* v, std::ptrdiff_t self) {
    heap.clear();
    const auto len = static_cast<std::ptrdiff_t>(key.size());
    const double va = v[axis];
    std::ptrdiff_t hi = std::lower_bound(key.begin(), key.end(), va) - key.begin();
    std::ptrdiff_t lo = hi - 1;
    auto offer = [&](std::ptrdiff_t j) {
      const double* r = S.row(j).data();
      double d2 = 0.0;
      for (Eigen::Index c = 0; c < D; ++c) d2 += (r[c] - v[c]) * (r[c] - v[c]);
      if (heap.size() < k) {
        heap.push_back(d2);
        std::push_heap(heap.begin(), heap.end());
      } else if (d2 < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = d2;
        std::push_heap(heap.begin(), heap.end());
      }
    };
    auto bound = [&] { return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.front(); };
    while (lo >= 0 || hi < len) {
      const double gl = lo >= 0 ? va - key[static_cast<std::size_t>(lo)] : std::numeric_limits<double>::infinity();
      const double gh = hi < len ? key[static_cast<std::size_t>(hi)] - va : std::numeric_limits<double>::infinity();
      const bool left = gl <= gh;
      const double g = left ? gl : gh;
      if (g * g > bound()) break;
      const std::ptrdiff_t j = left ? lo-- : hi++;
      if (j != self) offer(j);
    }
    return std::sqrt(heap.front());
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double* v = ps.row(static_cast<Eigen::Index>(i)).data();
    rho[porder[i]] = kth(ps, pkey, v, static_cast<std::ptrdiff_t>(i));
    nu[porder[i]] = kth(qs, qkey, v, -1);
  }
}

/// Reference O(n (n + m)) version of knn_distances.
inline void knn_distances_brute(const SampleMatrix& P, const SampleMatrix& Q, std::size_t k, std::vector<double>& rho,
                                std::vector<double>& nu) {
  const auto n = static_cast<std::size_t>(P.rows());
  const auto m = static_cast<std::size_t>(Q.rows());
  rho.assign(n, 0.0);
  nu.assign(n, 0.0);
  std::vector<double> dp(n - 1), dq(m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pi = P.row(static_cast<Eigen::Index>(i));
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dp[c++] = (P.row(static_cast<Eigen::Index>(j)) - pi).squaredNorm();
    for (std::size_t j = 0; j < m; ++j) dq[j] = (Q.row(static_cast<Eigen::Index>(j)) - pi).squaredNorm();
    std::nth_element(dp.begin(), dp.begin() + static_cast<std::ptrdiff_t>(k - 1), dp.end());
    std::nth_element(dq.begin(), dq.begin() + static_cast<std::ptrdiff_t>(k - 1), dq.end());
    rho[i] = std::sqrt(dp[k - 1]);
    nu[i] = std::sqrt(dq[k - 1]);
  }
}

inline bool any_zero(const std::vector<double>& v) {
  return std::any_of(v.begin(), v.end(), [](double x) { return !(x > 0.0); });
}

inline void jitter(SampleMatrix& S, Rng& rng) {
  for (Eigen::Index i = 0; i < S.size(); ++i) {
    double& v = S.data()[i];
    v += kKnnJitter * std::max(1.0, std::abs(v)) * uniform(rng, -1.0, 1.0);
  }
}

}  // namespace detail

/// kNN estimate of KL(P || Q) from samples:
///   (D/n) sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1)),
/// rho_k(i) the k-th neighbour distance of p_i within P, nu_k(i) within Q.
inline double knn_kl(const SampleMatrix& P, const SampleMatrix& Q, std::size_t k = kDefaultKnnK) {
  require_shape(P.cols() == Q.cols() && P.cols() >= 1, "kNN KL samples must share a positive dimension");
  const auto n = static_cast<std::size_t>(P.rows());
  const auto m = static_cast<std::size_t>(Q.rows());
  if (k == 0 || n <= k || m <= k) throw UsageError("kNN KL needs more than k samples on both sides");
  std::vector<double> rho, nu;
  detail::knn_distances(P, Q, k, rho, nu);
  if (detail::any_zero(rho) || detail::any_zero(nu)) {
    // Duplicate points: perturb both sets slightly and retry once.
    SampleMatrix Pj = P, Qj = Q;
    Rng rng(0x6b6e6eULL);
    detail::jitter(Pj, rng);
    detail::jitter(Qj, rng);
    detail::knn_distances(Pj, Qj, k, rho, nu);
    if (detail::any_zero(rho) || detail::any_zero(nu))
      throw EstimatorError("kNN KL is degenerate: zero neighbour distances after jitter");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::log(nu[i] / rho[i]);
  const double D = static_cast<double>(P.cols());
  return D / static_cast<double>(n) * s + std::log(static_cast<double>(m) / static_cast<double>(n - 1));
}

}  // namespace flowens::uncertainty
