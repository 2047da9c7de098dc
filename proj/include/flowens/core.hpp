#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace flowens {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class StateError : public Error {
public:
  using Error::Error;
};

class UsageError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

/// Training aborted: non-finite loss or gradient.
class TrainingError : public Error {
public:
  TrainingError(const std::string& what, long step = -1, std::string param = {})
      : Error(what), step_(step), param_(std::move(param)) {}
  long step() const { return step_; }
  const std::string& parameter() const { return param_; }

private:
  long step_;
  std::string param_;
};

class ScoringError : public Error {
public:
  ScoringError(const std::string& what, long transform_index)
      : Error(what), transform_(transform_index) {}
  long transform_index() const { return transform_; }

private:
  long transform_;
};

class EstimatorError : public Error {
public:
  using Error::Error;
};

class FitError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// ---------------------------------------------------------------------------
// Warnings go through a replaceable sink so tests can count them.
// ---------------------------------------------------------------------------

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

inline void warn(const std::string& msg) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  warning_sink()(msg);
}

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

/// Row-major sample matrix: one row per draw.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the index-th independent stream below `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline double std_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return u(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> u(0, n - 1);
  return u(rng);
}

/// Per-thread count of model draws (one per sampled y or base point). The
/// uncertainty estimators read it before and after to verify their budgets.
inline std::uint64_t& draw_counter() {
  thread_local std::uint64_t n = 0;
  return n;
}

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

/// Worker cap: FLOWENS_THREADS if set, otherwise hardware concurrency.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("FLOWENS_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs body(i) for i in [0, n). Results must not depend on scheduling; callers
/// derive per-index seeds. The first exception thrown by any worker is rethrown.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                         std::size_t threads = 0) {
  if (threads == 0) threads = thread_count();
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
/// Differential entropy of N(0,1) in nats: 0.5 * log(2*pi*e).
inline constexpr double kStdNormalEntropy = 1.4189385332046727417803297364056;

inline double log_sum_exp(const double* v, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline double log_sum_exp(const std::vector<double>& v) { return log_sum_exp(v.data(), v.size()); }

/// Shortest decimal text that round-trips to the same double (CSV output).
inline std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace flowens
