#pragma once

// Simulated end-user: return-stratified trajectory pools, triplet rankings
// by ground-truth return, and pairwise labels for the direct-reward baseline.

#include "rapl_lab/common.hpp"
#include "rapl_lab/demos.hpp"
#include "rapl_lab/env.hpp"
#include "rapl_lab/representation.hpp"

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

namespace rapl_lab::oracle {

constexpr int kOversampleFactor = 20;
constexpr int kDefaultTriplets = 150;
constexpr int kDefaultPairs = 300;
constexpr int kTripletRetries = 64;  // per emitted item

// Relative noise ladder for perturbed-expert rollouts, in units of the
// embodiment's max step; spans "nearly expert" to "nearly random". Dense at
// the small end so the top return bins stay fillable during stratification.
constexpr double kPerturbScales[] = {0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0};
constexpr int kPerturbScaleCount = 7;

struct TrajectoryPool {
  std::vector<env::Trajectory> trajectories;
  std::vector<double> returns;
  int bins = 1;
  double return_lo = 0.0;  // stratification range used at build time
  double return_hi = 0.0;
};

// Oversamples random-policy and perturbed-expert rollouts, then subsamples
// to a near-uniform return histogram over [min, max] of the oversample.
// When no expert set is supplied one is synthesized from the seed.
inline TrajectoryPool build_pool(env::TaskKind task, const env::Embodiment& embodiment,
                                 int pool_size, int bins, std::uint64_t seed,
                                 const std::vector<env::Trajectory>& experts = {},
                                 int horizon = env::kDefaultHorizon,
                                 std::uint64_t lift_seed = env::kDefaultLiftSeed) {
  if (bins < 1) throw InvalidConfig("build_pool: bins must be >= 1");
  if (pool_size < bins) throw InvalidConfig("build_pool: pool_size must be >= bins");

  std::vector<env::Trajectory> expert_set = experts;
  if (expert_set.empty())
    expert_set = demos::generate_expert_demos(task, embodiment, demos::kDefaultDemoCount,
                                              derive(seed, 0xde30ull), {}, horizon,
                                              lift_seed);
  std::vector<Eigen::MatrixXd> expert_actions;
  expert_actions.reserve(expert_set.size());
  for (const env::Trajectory& demo : expert_set)
    expert_actions.push_back(env::applied_actions(demo));

  const int budget = kOversampleFactor * pool_size;
  std::vector<env::Trajectory> candidates(static_cast<std::size_t>(budget));
  parallel_for(budget, [&](int i) {
    Rng rng(derive(seed, 0x900bull, static_cast<std::uint64_t>(i)));
    if (i % 4 == 0) {
      // Random policy: i.i.d. Gaussian actions at the full step budget.
      Eigen::MatrixXd actions(horizon, 2);
      for (int t = 0; t < horizon; ++t) {
        actions(t, 0) = embodiment.max_step * rng.gaussian();
        actions(t, 1) = embodiment.max_step * rng.gaussian();
      }
      candidates[static_cast<std::size_t>(i)] = env::rollout(
          actions, task, embodiment, derive(seed, 0x90c7ull, static_cast<std::uint64_t>(i)),
          lift_seed);
    } else {
      // Perturbed expert, replayed on its own context.
      int e = rng.uniform_int(static_cast<std::uint64_t>(expert_set.size()));
      double sigma =
          kPerturbScales[rng.uniform_int(kPerturbScaleCount)] * embodiment.max_step;
      Eigen::MatrixXd actions = expert_actions[static_cast<std::size_t>(e)];
      for (int t = 0; t < actions.rows(); ++t) {
        actions(t, 0) += sigma * rng.gaussian();
        actions(t, 1) += sigma * rng.gaussian();
      }
      candidates[static_cast<std::size_t>(i)] =
          env::rollout(actions, task, embodiment,
                       expert_set[static_cast<std::size_t>(e)].seed, lift_seed);
    }
  });

  std::vector<double> returns(static_cast<std::size_t>(budget));
  for (int i = 0; i < budget; ++i)
    returns[static_cast<std::size_t>(i)] = env::gt_return(candidates[static_cast<std::size_t>(i)]);

  // Equal-width bins over the 1st-99th percentile range. The raw extremes
  // are fat-tailed order statistics; binning to them starves the edge bins.
  std::vector<double> sorted = returns;
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted[static_cast<std::size_t>(budget / 100)];
  const double hi = sorted[static_cast<std::size_t>(budget - 1 - budget / 100)];
  const double span = hi - lo;
  if (span <= 0.0 && bins > 1)
    throw InsufficientDiversity("build_pool: zero return spread cannot stratify");

  std::vector<std::vector<int>> members(static_cast<std::size_t>(bins));
  for (int i = 0; i < budget; ++i) {
    double r = returns[static_cast<std::size_t>(i)];
    if (r < lo || r > hi) continue;
    int b = span <= 0.0
                ? 0
                : std::min(bins - 1, static_cast<int>(std::floor(
                                         (r - lo) / span * static_cast<double>(bins))));
    members[static_cast<std::size_t>(b)].push_back(i);
  }

  TrajectoryPool pool;
  pool.bins = bins;
  pool.return_lo = lo;
  pool.return_hi = hi;
  const int base = pool_size / bins;
  const int extra = pool_size % bins;
  for (int b = 0; b < bins; ++b) {
    int quota = base + (b < extra ? 1 : 0);
    std::vector<int>& bucket = members[static_cast<std::size_t>(b)];
    if (static_cast<int>(bucket.size()) < quota)
      throw InsufficientDiversity("build_pool: under-filled return bin after oversampling");
    Rng rng(derive(seed, 0x5e1ec7ull, static_cast<std::uint64_t>(b)));
    for (int k = static_cast<int>(bucket.size()) - 1; k > 0; --k) {
      int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k + 1)));
      std::swap(bucket[static_cast<std::size_t>(k)], bucket[static_cast<std::size_t>(j)]);
    }
    for (int k = 0; k < quota; ++k) {
      int idx = bucket[static_cast<std::size_t>(k)];
      pool.trajectories.push_back(std::move(candidates[static_cast<std::size_t>(idx)]));
      pool.returns.push_back(returns[static_cast<std::size_t>(idx)]);
    }
  }
  return pool;
}

// Highest return anchors; middle is preferred over lowest relative to it.
// The ids in the result are the argument positions (0, 1, 2).
inline repr::PreferenceTriplet rank_triplet(const env::Trajectory& a,
                                                      const env::Trajectory& b,
                                                      const env::Trajectory& c) {
  double ra = env::gt_return(a), rb = env::gt_return(b), rc = env::gt_return(c);
  if (ra == rb || rb == rc || ra == rc)
    throw TiedReturns("rank_triplet: returns must be pairwise distinct");

  int order[3] = {0, 1, 2};
  double r[3] = {ra, rb, rc};
  std::sort(order, order + 3, [&](int x, int y) { return r[x] > r[y]; });
  repr::PreferenceTriplet triplet;
  triplet.anchor_id = order[0];
  triplet.positive_id = order[1];
  triplet.negative_id = order[2];
  return triplet;
}

// n uniform triplets of distinct pool members with pairwise distinct
// returns; tied draws are resampled a bounded number of times.
inline std::vector<repr::PreferenceTriplet> make_triplets(
    const TrajectoryPool& pool, int n = kDefaultTriplets, std::uint64_t seed = 0) {
  if (n < 0) throw InvalidConfig("make_triplets: n must be >= 0");
  int size = static_cast<int>(pool.trajectories.size());
  if (n > 0 && size < 3) throw InvalidConfig("make_triplets: pool must hold >= 3");

  Rng rng(derive(seed, 0x371ull));
  std::vector<repr::PreferenceTriplet> triplets;
  triplets.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(triplets.size()) < n) {
    bool emitted = false;
    for (int attempt = 0; attempt < kTripletRetries; ++attempt) {
      int i = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size)));
      int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size)));
      int k = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size)));
      if (i == j || j == k || i == k) continue;
      double ri = pool.returns[static_cast<std::size_t>(i)];
      double rj = pool.returns[static_cast<std::size_t>(j)];
      double rk = pool.returns[static_cast<std::size_t>(k)];
      if (ri == rj || rj == rk || ri == rk) continue;

      int ids[3] = {i, j, k};
      double r[3] = {ri, rj, rk};
      int order[3] = {0, 1, 2};
      std::sort(order, order + 3, [&](int x, int y) { return r[x] > r[y]; });
      repr::PreferenceTriplet triplet;
      triplet.anchor_id = ids[order[0]];
      triplet.positive_id = ids[order[1]];
      triplet.negative_id = ids[order[2]];
      triplets.push_back(triplet);
      emitted = true;
      break;
    }
    if (!emitted) throw RetryExhausted("make_triplets: could not draw distinct returns");
  }
  return triplets;
}

// n uniform (preferred, dispreferred) index pairs labeled by GT return.
inline std::vector<std::pair<int, int>> make_pairs(const TrajectoryPool& pool,
                                                   int n = kDefaultPairs,
                                                   std::uint64_t seed = 0) {
  if (n < 0) throw InvalidConfig("make_pairs: n must be >= 0");
  int size = static_cast<int>(pool.trajectories.size());
  if (n > 0 && size < 2) throw InvalidConfig("make_pairs: pool must hold >= 2");

  Rng rng(derive(seed, 0x9a12ull));
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(pairs.size()) < n) {
    bool emitted = false;
    for (int attempt = 0; attempt < kTripletRetries; ++attempt) {
      int i = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size)));
      int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size)));
      if (i == j) continue;
      double ri = pool.returns[static_cast<std::size_t>(i)];
      double rj = pool.returns[static_cast<std::size_t>(j)];
      if (ri == rj) continue;
      pairs.emplace_back(ri > rj ? i : j, ri > rj ? j : i);
      emitted = true;
      break;
    }
    if (!emitted) throw RetryExhausted("make_pairs: could not draw distinct returns");
  }
  return pairs;
}

}  // namespace rapl_lab::oracle
