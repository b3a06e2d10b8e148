#pragma once

// Expert demonstration synthesis: per-context CEM against the ground
// truth reward, followed by success-threshold calibration over the set.

#include "rapl_lab/common.hpp"
#include "rapl_lab/env.hpp"
#include "rapl_lab/policy.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace rapl_lab::demos {

constexpr int kDefaultDemoCount = 10;
constexpr int kRestartBudget = 3;
constexpr int kInnerRestarts = 3;

// Threshold calibration from a homogeneous demo set (one task/embodiment).
inline policy::Calibration calibrate(const std::vector<env::Trajectory>& demo_set) {
  if (demo_set.empty()) throw EmptyDemos("calibrate: no demos");
  double total = 0.0;
  for (const env::Trajectory& demo : demo_set) {
    if (demo.task != demo_set[0].task || demo.embodiment != demo_set[0].embodiment)
      throw TaskMismatch("calibrate: mixed demo set");
    total += env::gt_return(demo);
  }
  policy::Calibration calibration;
  calibration.set(demo_set[0].task, demo_set[0].embodiment,
                  policy::scaled_threshold(total / static_cast<double>(demo_set.size())));
  return calibration;
}

// Optimizes one open-loop plan for a single fixed context.
namespace detail {

// Best of kInnerRestarts independent CEM fits. The optimizer is multimodal
// on these tasks, so restarts tighten the upper tail far more per rollout
// than a larger single population does.
inline env::Trajectory solve_context(env::TaskKind task, const env::Embodiment& embodiment,
                                     std::uint64_t context, std::uint64_t cem_seed,
                                     const policy::CemConfig& base, int horizon,
                                     std::uint64_t lift_seed) {
  policy::RewardScorer gt = [](const env::Trajectory& t) { return t.gt_rewards; };
  env::Trajectory best;
  double best_return = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < kInnerRestarts; ++t) {
    policy::CemConfig config = base;
    config.seed = derive(cem_seed, static_cast<std::uint64_t>(t));
    policy::CemResult fit =
        policy::cem_optimize(gt, task, embodiment, config, horizon, {context}, nullptr,
                             lift_seed);
    env::Trajectory rolled =
        env::rollout(fit.policy.mean, task, embodiment, context, lift_seed);
    double value = env::gt_return(rolled);
    if (value > best_return) {
      best_return = value;
      best = std::move(rolled);
    }
  }
  return best;
}

}  // namespace detail

// n per-context CEM experts. Every returned demo must clear the threshold
// calibrated from the set itself; contexts falling short are re-optimized
// from fresh CEM seeds (the threshold is re-derived after each round since
// improving one demo moves the mean).
inline std::vector<env::Trajectory> generate_expert_demos(
    env::TaskKind task, const env::Embodiment& embodiment, int n, std::uint64_t seed,
    const policy::CemConfig& cem_template = {}, int horizon = env::kDefaultHorizon,
    std::uint64_t lift_seed = env::kDefaultLiftSeed) {
  if (n < 1) throw InvalidConfig("generate_expert_demos: n must be >= 1");

  std::vector<std::uint64_t> contexts(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    contexts[static_cast<std::size_t>(i)] = derive(seed, 0xc7eull, static_cast<std::uint64_t>(i));

  std::vector<env::Trajectory> best(static_cast<std::size_t>(n));
  std::vector<double> returns(static_cast<std::size_t>(n));
  parallel_for(n, [&](int i) {
    best[static_cast<std::size_t>(i)] = detail::solve_context(
        task, embodiment, contexts[static_cast<std::size_t>(i)],
        derive(contexts[static_cast<std::size_t>(i)], 0xa77ull, 0), cem_template, horizon,
        lift_seed);
    returns[static_cast<std::size_t>(i)] = env::gt_return(best[static_cast<std::size_t>(i)]);
  });

  for (int round = 0; round <= kRestartBudget; ++round) {
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= static_cast<double>(n);
    double tau = policy::scaled_threshold(mean);

    std::vector<int> failing;
    for (int i = 0; i < n; ++i)
      if (returns[static_cast<std::size_t>(i)] < tau) failing.push_back(i);
    if (failing.empty()) return best;
    if (round == kRestartBudget)
      throw ExpertSearchFailed("generate_expert_demos: context below threshold after retries");

    // Escalate the search budget each round; a flat retry tends to stall when
    // the shortfall is optimizer variance rather than an unlucky context.
    policy::CemConfig boosted = cem_template;
    for (int r = 0; r <= round; ++r) {
      boosted.iterations += boosted.iterations / 2;
      boosted.population += boosted.population / 2;
    }

    parallel_for(static_cast<int>(failing.size()), [&](int k) {
      int i = failing[static_cast<std::size_t>(k)];
      env::Trajectory candidate = detail::solve_context(
          task, embodiment, contexts[static_cast<std::size_t>(i)],
          derive(contexts[static_cast<std::size_t>(i)], 0xa77ull,
                 static_cast<std::uint64_t>(round + 1)),
          boosted, horizon, lift_seed);
      double value = env::gt_return(candidate);
      if (value > returns[static_cast<std::size_t>(i)]) {
        best[static_cast<std::size_t>(i)] = std::move(candidate);
        returns[static_cast<std::size_t>(i)] = value;
      }
    });
  }
  return best;
}

}  // namespace rapl_lab::demos
