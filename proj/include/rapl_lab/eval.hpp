#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rapl_lab/common.hpp"
#include "rapl_lab/env.hpp"
#include "rapl_lab/policy.hpp"

// Rank-correlation comparison of reward scorers against ground truth.

namespace rapl_lab::eval {

namespace detail {

// Fractional average ranks, 1-based; ties share the mean of their slots.
inline std::vector<double> average_ranks(const RewardTrace& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

inline bool is_constant(const RewardTrace& values) {
  for (double v : values)
    if (v != values[0]) return false;
  return true;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double da = a[i] - mean_a, db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  return cov / std::sqrt(var_a * var_b);
}

}  // namespace detail

// Pearson correlation of the average-rank transforms. Both inputs must vary:
// the correlation of a constant trace is undefined, not zero.
inline double spearman(const RewardTrace& a, const RewardTrace& b) {
  if (a.size() != b.size()) throw LengthMismatch("spearman: trace lengths differ");
  if (a.size() < 2) throw LengthMismatch("spearman: need at least 2 entries");
  if (detail::is_constant(a) || detail::is_constant(b))
    throw ConstantTrace("spearman: constant trace has no rank correlation");
  double rho = detail::pearson(detail::average_ranks(a), detail::average_ranks(b));
  return std::clamp(rho, -1.0, 1.0);
}

struct CorrelationReport {
  env::TaskKind task = env::TaskKind::Group;
  std::string embodiment;
  int trajectory_count = 0;
  std::vector<std::string> methods;            // insertion order, for stable output
  std::map<std::string, double> mean_spearman;
  std::map<std::string, int> skipped;          // constant-trace trajectories per method
};

using NamedScorers = std::vector<std::pair<std::string, policy::RewardScorer>>;

// Mean Spearman of each scorer's trace against gt_rewards over the pool.
// Trajectories where either trace is constant are skipped and counted, not
// imputed as zero.
inline CorrelationReport correlation_report(const NamedScorers& scorers,
                                            const std::vector<env::Trajectory>& pool,
                                            env::TaskKind task,
                                            const std::string& embodiment) {
  if (pool.empty()) throw EmptyPool("correlation_report: empty pool");
  CorrelationReport report;
  report.task = task;
  report.embodiment = embodiment;
  report.trajectory_count = static_cast<int>(pool.size());

  for (const auto& [name, scorer] : scorers) {
    std::vector<double> rho(pool.size());
    std::vector<char> usable(pool.size());
    parallel_for(static_cast<int>(pool.size()), [&](int i) {
      RewardTrace trace = scorer(pool[static_cast<std::size_t>(i)]);
      const RewardTrace& gt = pool[static_cast<std::size_t>(i)].gt_rewards;
      if (trace.size() != gt.size())
        throw LengthMismatch("correlation_report: scorer trace length differs from gt");
      bool flat = detail::is_constant(trace) || detail::is_constant(gt) || gt.size() < 2;
      usable[static_cast<std::size_t>(i)] = flat ? 0 : 1;
      if (!flat) rho[static_cast<std::size_t>(i)] = spearman(trace, gt);
    });
    double total = 0.0;
    int used = 0, dropped = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (usable[i]) {
        total += rho[i];
        ++used;
      } else {
        ++dropped;
      }
    }
    if (used == 0)
      throw ConstantTrace("correlation_report: no usable trajectory for " + name);
    report.methods.push_back(name);
    report.mean_spearman[name] = total / static_cast<double>(used);
    report.skipped[name] = dropped;
  }
  return report;
}

}  // namespace rapl_lab::eval
