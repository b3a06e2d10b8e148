#pragma once

// Shared plumbing: error taxonomy, deterministic RNG with explicit
// distribution code, seed derivation for independent substreams, and a
// fixed-order parallel map bounded by RAPL_LAB_THREADS.

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rapl_lab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidConfig : Error { using Error::Error; };

// ot
struct ZeroVector : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct EmptyExpertSet : Error { using Error::Error; };
struct NonSquare : Error { using Error::Error; };

// representation / reward models
struct DimensionMismatch : Error { using Error::Error; };
struct UnresolvedTrajectoryId : Error { using Error::Error; };
struct ZeroWeights : Error { using Error::Error; };

// env / policy
struct NonFiniteAction : Error { using Error::Error; };
struct TaskMismatch : Error { using Error::Error; };
struct ExpertSearchFailed : Error { using Error::Error; };
struct UncalibratedTask : Error { using Error::Error; };

// oracle
struct InsufficientDiversity : Error { using Error::Error; };
struct TiedReturns : Error { using Error::Error; };
struct RetryExhausted : Error { using Error::Error; };

// dpo
struct EmptyDemos : Error { using Error::Error; };
struct NonFiniteDensity : Error { using Error::Error; };

// eval
struct LengthMismatch : Error { using Error::Error; };
struct ConstantTrace : Error { using Error::Error; };
struct EmptyPool : Error { using Error::Error; };

// io
struct IoError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };

using RewardTrace = std::vector<double>;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent substream seed; chainable over several tags.
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag ^ 0xa0761d6478bd642full));
}

template <typename... Tags>
std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return derive(derive(seed, tag), rest...);
}

// Deterministic RNG over raw mt19937_64 output. The standard library's
// distribution objects are not bit-stable across implementations, so the
// few distributions needed are written out.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // {0, ..., n-1} via multiply-shift
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(engine_()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  // Box-Muller; consumes two draws per value, no cached spare.
  double gaussian() {
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

// Thread cap from RAPL_LAB_THREADS (default 1), read once per process.
inline int thread_budget() {
  static const int budget = [] {
    const char* raw = std::getenv("RAPL_LAB_THREADS");
    int want = 1;
    if (raw != nullptr) {
      char* end = nullptr;
      long parsed = std::strtol(raw, &end, 10);
      if (end != raw && parsed > 0) want = static_cast<int>(parsed);
    }
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    return std::min(want, hw);
  }();
  return budget;
}

// Runs fn(i) for i in [0, n); results land at their own index so output
// is identical for any thread count. First worker exception is rethrown.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  int workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (!failed.load(std::memory_order_relaxed)) {
        int i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed.store(true, std::memory_order_relaxed);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// log(1 + e^z) without overflow
inline double softplus(double z) {
  return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0);
}

// 1 / (1 + e^{-z}) without overflow
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

}  // namespace rapl_lab
