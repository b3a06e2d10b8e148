#pragma once

// Direct preference optimization over open-loop Gaussian action-sequence
// policies: a reference policy fit from demonstrations, synthetic preference
// pairs labeled by an arbitrary reward scorer, and gradient descent on the
// contrastive log-ratio loss.

#include "rapl_lab/common.hpp"
#include "rapl_lab/env.hpp"
#include "rapl_lab/policy.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace rapl_lab::dpo {

constexpr double kDefaultNoiseScale = 0.02;
constexpr double kStdFloor = 1e-3;
constexpr int kSynthRetryLimit = 16;
constexpr int kDefaultAlignmentConfigs = 15;

// Diagonal-Gaussian reference: per-timestep mean of demo actions, sample
// std floored at noise_scale. The seed names the fit for reproducibility
// records; the estimator itself is deterministic in the demos.
inline policy::ActionSequencePolicy fit_reference(
    const std::vector<env::Trajectory>& demos, double noise_scale = kDefaultNoiseScale,
    std::uint64_t seed = 0) {
  (void)seed;
  if (demos.empty()) throw EmptyDemos("fit_reference: no demonstrations");
  if (!(noise_scale > 0.0)) throw InvalidConfig("fit_reference: noise_scale must be > 0");

  const std::size_t states = demos[0].states.size();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(states) - 1, 2);
  Eigen::MatrixXd sum_sq = sum;
  for (const env::Trajectory& demo : demos) {
    if (demo.states.size() != states)
      throw DimensionMismatch("fit_reference: demo horizon mismatch");
    Eigen::MatrixXd actions = env::applied_actions(demo);
    sum += actions;
    sum_sq += actions.cwiseProduct(actions);
  }
  double n = static_cast<double>(demos.size());
  policy::ActionSequencePolicy reference;
  reference.mean = sum / n;
  Eigen::MatrixXd variance =
      (sum_sq / n - reference.mean.cwiseProduct(reference.mean)).cwiseMax(0.0);
  reference.std = variance.cwiseSqrt().cwiseMax(noise_scale);
  return reference;
}

// Diagonal-Gaussian log-density of one action sequence under the policy.
inline double log_density(const policy::ActionSequencePolicy& policy,
                          const Eigen::MatrixXd& actions) {
  if (actions.rows() != policy.mean.rows() || actions.cols() != policy.mean.cols())
    throw DimensionMismatch("log_density: action shape does not match policy");
  constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log sqrt(2 pi)
  double total = 0.0;
  for (Eigen::Index t = 0; t < actions.rows(); ++t)
    for (Eigen::Index d = 0; d < actions.cols(); ++d) {
      double sigma = policy.std(t, d);
      double z = (actions(t, d) - policy.mean(t, d)) / sigma;
      total -= kLogSqrt2Pi + std::log(sigma) + 0.5 * z * z;
    }
  if (!std::isfinite(total)) throw NonFiniteDensity("log_density: non-finite result");
  return total;
}

inline Eigen::MatrixXd sample_actions(const policy::ActionSequencePolicy& policy,
                                      Rng& rng) {
  Eigen::MatrixXd actions(policy.mean.rows(), policy.mean.cols());
  for (Eigen::Index t = 0; t < actions.rows(); ++t)
    for (Eigen::Index d = 0; d < actions.cols(); ++d)
      actions(t, d) = policy.mean(t, d) + policy.std(t, d) * rng.gaussian();
  return actions;
}

struct PreferencePair {
  std::uint64_t context_seed = 0;
  Eigen::MatrixXd preferred;     // T x 2
  Eigen::MatrixXd dispreferred;  // T x 2
};

// For each context, two sequences sampled from the reference are rolled
// out and scored; the higher summed score is labeled preferred. Exact
// score ties are resampled.
inline std::vector<PreferencePair> synth_rankings(
    const policy::ActionSequencePolicy& reference, const policy::RewardScorer& scorer,
    env::TaskKind task, const env::Embodiment& embodiment, int n, std::uint64_t seed,
    std::uint64_t lift_seed = env::kDefaultLiftSeed) {
  if (n < 1) throw InvalidConfig("synth_rankings: n must be >= 1");
  std::vector<PreferencePair> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::uint64_t context = derive(seed, 0xd0c5ull, static_cast<std::uint64_t>(i));
    bool labeled = false;
    for (int attempt = 0; attempt < kSynthRetryLimit && !labeled; ++attempt) {
      Rng rng(derive(seed, 0x5a9bull, static_cast<std::uint64_t>(i),
                     static_cast<std::uint64_t>(attempt)));
      Eigen::MatrixXd a = sample_actions(reference, rng);
      Eigen::MatrixXd b = sample_actions(reference, rng);
      double score_a =
          policy::trace_sum(scorer(env::rollout(a, task, embodiment, context, lift_seed)));
      double score_b =
          policy::trace_sum(scorer(env::rollout(b, task, embodiment, context, lift_seed)));
      if (score_a == score_b) continue;
      if (score_a > score_b)
        pairs.push_back({context, std::move(a), std::move(b)});
      else
        pairs.push_back({context, std::move(b), std::move(a)});
      labeled = true;
    }
    if (!labeled)
      throw RetryExhausted("synth_rankings: scorer tied on every draw for context " +
                           std::to_string(context));
  }
  return pairs;
}

struct DpoConfig {
  double alpha = 1.0;
  double learning_rate = 1e-2;
  int epochs = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0.0)) throw InvalidConfig("dpo: alpha must be > 0");
    if (!(learning_rate > 0.0)) throw InvalidConfig("dpo: learning_rate must be > 0");
    if (epochs < 0) throw InvalidConfig("dpo: epochs must be >= 0");
  }
};

// -log sigma(alpha * (delta_plus - delta_minus)) where delta is the policy
// vs reference log-density gap, via the stable softplus form.
inline double dpo_loss(const PreferencePair& pair,
                       const policy::ActionSequencePolicy& policy,
                       const policy::ActionSequencePolicy& reference, double alpha) {
  double delta_plus = log_density(policy, pair.preferred) -
                      log_density(reference, pair.preferred);
  double delta_minus = log_density(policy, pair.dispreferred) -
                       log_density(reference, pair.dispreferred);
  return softplus(alpha * (delta_minus - delta_plus));
}

namespace detail {

// Adds sigma(z) * alpha * sign * d(log pi)/d(mean, std) for one sequence.
inline void add_density_grad(const policy::ActionSequencePolicy& policy,
                             const Eigen::MatrixXd& actions, double scale,
                             Eigen::MatrixXd& grad_mean, Eigen::MatrixXd& grad_std) {
  for (Eigen::Index t = 0; t < actions.rows(); ++t)
    for (Eigen::Index d = 0; d < actions.cols(); ++d) {
      double sigma = policy.std(t, d);
      double err = actions(t, d) - policy.mean(t, d);
      grad_mean(t, d) += scale * err / (sigma * sigma);
      grad_std(t, d) += scale * (err * err / (sigma * sigma * sigma) - 1.0 / sigma);
    }
}

}  // namespace detail

// Full-batch gradient descent on the mean DPO loss. The reference stays
// fixed; stds are floored after every step so densities stay finite.
inline policy::ActionSequencePolicy dpo_finetune(
    const policy::ActionSequencePolicy& reference,
    const std::vector<PreferencePair>& pairs, const DpoConfig& config) {
  config.validate();
  if (pairs.empty()) throw InvalidConfig("dpo_finetune: no preference pairs");
  policy::ActionSequencePolicy policy = reference;
  if (config.epochs == 0) return policy;

  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Eigen::MatrixXd grad_mean = Eigen::MatrixXd::Zero(policy.mean.rows(), 2);
    Eigen::MatrixXd grad_std = Eigen::MatrixXd::Zero(policy.mean.rows(), 2);
    for (const PreferencePair& pair : pairs) {
      double z = config.alpha * ((log_density(policy, pair.dispreferred) -
                                  log_density(reference, pair.dispreferred)) -
                                 (log_density(policy, pair.preferred) -
                                  log_density(reference, pair.preferred)));
      double weight = sigmoid(z) * config.alpha * inv_n;
      // d loss / d params = sigma(z) * alpha * (dlog pi(minus) - dlog pi(plus))
      detail::add_density_grad(policy, pair.dispreferred, weight, grad_mean, grad_std);
      detail::add_density_grad(policy, pair.preferred, -weight, grad_mean, grad_std);
    }
    policy.mean -= config.learning_rate * grad_mean;
    policy.std = (policy.std - config.learning_rate * grad_std).cwiseMax(kStdFloor);
  }
  return policy;
}

// Fraction of fresh contexts whose mean-action rollout passes the
// calibrated success predicate.
inline double alignment_score(const policy::ActionSequencePolicy& policy,
                              env::TaskKind task, const env::Embodiment& embodiment,
                              const policy::Calibration& calibration,
                              int n_configs = kDefaultAlignmentConfigs,
                              std::uint64_t seed = policy::kEvalSeedBase,
                              std::uint64_t lift_seed = env::kDefaultLiftSeed) {
  return policy::eval_success_rate(policy, task, embodiment, n_configs, calibration,
                                   seed, lift_seed);
}

}  // namespace rapl_lab::dpo
