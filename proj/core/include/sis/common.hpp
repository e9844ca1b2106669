#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace sis {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

/// Bad input: malformed files, violated preconditions, mismatched shapes.
/// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure: divergence, non-finite values, solver breakdown.
/// The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic RNG built on mt19937_64 with explicit draw algorithms.
/// The standard distributions are implementation-defined, so uniform/normal
/// draws are spelled out here to keep trajectories reproducible across
/// toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)), inc_(splitmix(seed ^ 0x9e3779b97f4a7c15ull) | 1ull) {}

  std::uint64_t next_u64() {
    // xorshift128+ style step seeded via splitmix; period and quality are
    // ample for sampling and initialization.
    std::uint64_t x = state_;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    state_ = x + inc_;
    return x;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift (Lemire); deterministic on every platform.
    return static_cast<std::uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (one value per call; cached pair).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// First `n` entries of a random permutation of [0, total).
  std::vector<int> sample_without_replacement(int total, int n) {
    std::vector<int> idx(total);
    for (int i = 0; i < total; ++i) idx[i] = i;
    const int take = std::min(n, total);
    for (int i = 0; i < take; ++i) {
      int j = i + static_cast<int>(below(static_cast<std::uint64_t>(total - i)));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(take);
    return idx;
  }

  /// Independent stream derived from this seed and a purpose tag; lets
  /// per-mesh / per-epoch sampling stay deterministic regardless of
  /// evaluation order.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    return splitmix(splitmix(seed) ^ tag);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
  std::uint64_t inc_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Runs fn(i) for i in [0, n) over a fixed set of worker threads.
/// Work items must write only to their own slots; the partitioning is by
/// index stride so results never depend on the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int k = threads <= 0 ? static_cast<int>(std::thread::hardware_concurrency()) : threads;
  k = std::max(1, std::min(k, n));
  if (k == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(k - 1);
  auto worker = [&](int t) {
    for (int i = t; i < n; i += k) fn(i);
  };
  for (int t = 1; t < k; ++t) pool.emplace_back(worker, t);
  worker(0);
  for (auto& th : pool) th.join();
}

}  // namespace sis
