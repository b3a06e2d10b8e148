#pragma once

// Cross-entropy method over open-loop action sequences against any
// reward-trace scorer, plus expert-calibrated success evaluation.

#include "rapl_lab/common.hpp"
#include "rapl_lab/env.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace rapl_lab::policy {

using env::Embodiment;
using env::TaskKind;

using RewardScorer = std::function<RewardTrace(const env::Trajectory&)>;

inline double trace_sum(const RewardTrace& trace) {
  return std::accumulate(trace.begin(), trace.end(), 0.0);
}

struct ActionSequencePolicy {
  Eigen::MatrixXd mean;  // T x 2
  Eigen::MatrixXd std;   // T x 2, entries > 0
};

struct CemConfig {
  int iterations = 30;
  int population = 48;
  double elite_fraction = 0.125;
  std::uint64_t seed = 0;
  double initial_std = 0.04;

  void validate() const {
    if (iterations < 1) throw InvalidConfig("cem: iterations must be >= 1");
    if (population < 1) throw InvalidConfig("cem: population must be >= 1");
    if (!(elite_fraction > 0.0) || elite_fraction > 1.0)
      throw InvalidConfig("cem: elite_fraction must be in (0,1]");
    if (static_cast<double>(population) * elite_fraction < 1.0)
      throw InvalidConfig("cem: population * elite_fraction must be >= 1");
    if (!(initial_std > 0.0)) throw InvalidConfig("cem: initial_std must be > 0");
  }
};

constexpr int kCemContexts = 8;        // training contexts the objective averages over
constexpr int kHistoryEvalSeeds = 10;  // fresh contexts per history entry
constexpr double kStdFloor = 1e-4;
constexpr double kNoiseCorrelation = 0.8;  // AR(1) over time, favors sustained pushes
constexpr std::uint64_t kEvalSeedBase = 0xeba1u;

// Per-(task, embodiment) success thresholds derived from expert demos.
struct Calibration {
  std::map<std::pair<int, std::string>, double> thresholds;

  void set(TaskKind task, const std::string& embodiment, double tau) {
    thresholds[{static_cast<int>(task), embodiment}] = tau;
  }
  double threshold(TaskKind task, const std::string& embodiment) const {
    auto it = thresholds.find({static_cast<int>(task), embodiment});
    if (it == thresholds.end())
      throw UncalibratedTask(std::string("no threshold for ") + env::task_name(task) +
                             "/" + embodiment);
    return it->second;
  }
};

// 10% slack on the expert-mean return. Returns here are nonpositive, so
// the slack must move the threshold below the mean, not above it.
inline double scaled_threshold(double mean_expert_return) {
  return mean_expert_return >= 0.0 ? 0.9 * mean_expert_return
                                   : mean_expert_return / 0.9;
}

inline bool success(const env::Trajectory& trajectory, TaskKind task,
                    const Calibration& calibration) {
  return env::gt_return(trajectory) >= calibration.threshold(task, trajectory.embodiment);
}

struct CemResult {
  ActionSequencePolicy policy;
  std::vector<double> history;      // per-iteration mean GT success of the mean policy
  std::vector<double> best_scores;  // per-iteration best elite objective
};

// Scores one candidate action sequence: mean summed scorer reward over
// the fixed training contexts.
namespace detail {

inline double candidate_score(const Eigen::MatrixXd& actions, const RewardScorer& scorer,
                              TaskKind task, const Embodiment& embodiment,
                              const std::vector<std::uint64_t>& contexts,
                              std::uint64_t lift_seed) {
  double total = 0.0;
  for (std::uint64_t context : contexts)
    total += trace_sum(scorer(env::rollout(actions, task, embodiment, context, lift_seed)));
  return total / static_cast<double>(contexts.size());
}

}  // namespace detail

// Deterministic CEM with elitism: the incumbent best sequence is
// re-injected into every later population, so the best elite objective is
// non-decreasing over the fixed context set. When a calibration is given,
// each iteration appends the mean policy's GT success rate over
// kHistoryEvalSeeds fresh contexts.
inline CemResult cem_optimize(const RewardScorer& scorer, TaskKind task,
                              const Embodiment& embodiment, const CemConfig& config,
                              int horizon = env::kDefaultHorizon,
                              std::vector<std::uint64_t> contexts = {},
                              const Calibration* calibration = nullptr,
                              std::uint64_t lift_seed = env::kDefaultLiftSeed) {
  config.validate();
  if (horizon < 1) throw InvalidConfig("cem: horizon must be >= 1");
  if (contexts.empty())
    for (int k = 0; k < kCemContexts; ++k)
      contexts.push_back(derive(config.seed, 0xc0417ull, static_cast<std::uint64_t>(k)));

  const int population = config.population;
  const int n_elite = std::max(
      1, static_cast<int>(std::floor(static_cast<double>(population) * config.elite_fraction)));

  CemResult result;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(horizon, 2);
  Eigen::MatrixXd std_dev = Eigen::MatrixXd::Constant(horizon, 2, config.initial_std);
  Eigen::MatrixXd incumbent;
  bool have_incumbent = false;

  std::vector<Eigen::MatrixXd> actions(static_cast<std::size_t>(population));
  std::vector<double> scores(static_cast<std::size_t>(population));
  std::vector<int> order(static_cast<std::size_t>(population));

  for (int iter = 0; iter < config.iterations; ++iter) {
    int first_sampled = 0;
    if (have_incumbent) {
      actions[0] = incumbent;
      first_sampled = 1;
    }
    // Exploration floor annealed to zero so late iterations can polish.
    double floor = config.initial_std *
                   (config.iterations > 1
                        ? 1.0 - static_cast<double>(iter) /
                                    static_cast<double>(config.iterations - 1)
                        : 0.0);
    Eigen::MatrixXd sample_std = std_dev.cwiseMax(floor);

    for (int j = first_sampled; j < population; ++j) {
      Rng rng(derive(config.seed, 0x5a3ull, static_cast<std::uint64_t>(iter),
                     static_cast<std::uint64_t>(j)));
      Eigen::MatrixXd sample(horizon, 2);
      double prev_x = 0.0, prev_y = 0.0;
      const double carry = kNoiseCorrelation;
      const double fresh = std::sqrt(1.0 - carry * carry);
      for (int t = 0; t < horizon; ++t) {
        prev_x = (t == 0) ? rng.gaussian() : carry * prev_x + fresh * rng.gaussian();
        prev_y = (t == 0) ? rng.gaussian() : carry * prev_y + fresh * rng.gaussian();
        sample(t, 0) = mean(t, 0) + sample_std(t, 0) * prev_x;
        sample(t, 1) = mean(t, 1) + sample_std(t, 1) * prev_y;
      }
      actions[static_cast<std::size_t>(j)] = std::move(sample);
    }

    parallel_for(population, [&](int j) {
      scores[static_cast<std::size_t>(j)] =
          detail::candidate_score(actions[static_cast<std::size_t>(j)], scorer, task,
                                  embodiment, contexts, lift_seed);
    });

    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
      return a < b;
    });

    incumbent = actions[static_cast<std::size_t>(order[0])];
    have_incumbent = true;
    result.best_scores.push_back(scores[static_cast<std::size_t>(order[0])]);

    Eigen::MatrixXd refit = Eigen::MatrixXd::Zero(horizon, 2);
    for (int e = 0; e < n_elite; ++e)
      refit += actions[static_cast<std::size_t>(order[e])];
    refit /= static_cast<double>(n_elite);
    Eigen::MatrixXd variance = Eigen::MatrixXd::Zero(horizon, 2);
    for (int e = 0; e < n_elite; ++e) {
      Eigen::MatrixXd dev = actions[static_cast<std::size_t>(order[e])] - refit;
      variance += dev.cwiseProduct(dev);
    }
    variance /= static_cast<double>(n_elite);
    mean = refit;
    std_dev = variance.cwiseSqrt().cwiseMax(kStdFloor);

    if (calibration != nullptr) {
      int successes = 0;
      for (int e = 0; e < kHistoryEvalSeeds; ++e) {
        env::Trajectory probe =
            env::rollout(mean, task, embodiment,
                         derive(config.seed, 0x213ull, static_cast<std::uint64_t>(e)),
                         lift_seed);
        if (success(probe, task, *calibration)) ++successes;
      }
      result.history.push_back(static_cast<double>(successes) /
                               static_cast<double>(kHistoryEvalSeeds));
    }
  }

  result.policy.mean = mean;
  result.policy.std = std_dev;
  return result;
}

// Fraction of n_seeds fresh mean-action rollouts that satisfy the
// calibrated success predicate.
inline double eval_success_rate(const ActionSequencePolicy& policy, TaskKind task,
                                const Embodiment& embodiment, int n_seeds,
                                const Calibration& calibration,
                                std::uint64_t eval_seed = kEvalSeedBase,
                                std::uint64_t lift_seed = env::kDefaultLiftSeed) {
  if (n_seeds < 1) throw InvalidConfig("eval_success_rate: n_seeds must be >= 1");
  int successes = 0;
  for (int i = 0; i < n_seeds; ++i) {
    env::Trajectory trajectory =
        env::rollout(policy.mean, task, embodiment,
                     derive(eval_seed, static_cast<std::uint64_t>(i)), lift_seed);
    if (success(trajectory, task, calibration)) ++successes;
  }
  return static_cast<double>(successes) / static_cast<double>(n_seeds);
}

}  // namespace rapl_lab::policy
