#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rapl_lab/common.hpp"
#include "rapl_lab/env.hpp"
#include "rapl_lab/oracle.hpp"
#include "rapl_lab/ot.hpp"
#include "rapl_lab/representation.hpp"

// Reward scorers sharing the RewardTrace interface. Every scorer maps a
// trajectory to one reward per observation; scorers are pure, training is
// single-threaded and deterministic per seed.

namespace rapl_lab::rewards {

// OT reward against the closest of a set of pre-embedded expert demos.
struct RaplReward {
  repr::LinearEmbedding embedding;
  std::vector<ot::EmbeddingSequence> expert_set;
  ot::SinkhornConfig sinkhorn;
};

inline RaplReward make_rapl_reward(const repr::LinearEmbedding& embedding,
                                   const std::vector<env::Trajectory>& experts,
                                   const ot::SinkhornConfig& sinkhorn = {}) {
  if (experts.empty()) throw EmptyExpertSet("make_rapl_reward: no expert demos");
  ot::validate(sinkhorn);
  RaplReward model;
  model.embedding = embedding;
  model.sinkhorn = sinkhorn;
  model.expert_set.reserve(experts.size());
  for (const env::Trajectory& demo : experts)
    model.expert_set.push_back(repr::embed(embedding, repr::observation_matrix(demo)));
  return model;
}

inline std::size_t select_expert(const RaplReward& model, const env::Trajectory& trajectory) {
  ot::EmbeddingSequence robot =
      repr::embed(model.embedding, repr::observation_matrix(trajectory));
  return ot::select_closest_expert(robot, model.expert_set, model.sinkhorn);
}

inline RewardTrace rapl_score(const RaplReward& model, const env::Trajectory& trajectory) {
  if (model.expert_set.empty()) throw EmptyExpertSet("rapl_score: no expert demos");
  ot::EmbeddingSequence robot =
      repr::embed(model.embedding, repr::observation_matrix(trajectory));
  std::size_t pick = ot::select_closest_expert(robot, model.expert_set, model.sinkhorn);
  return ot::ot_reward_trace(robot, model.expert_set[pick], model.sinkhorn);
}

// Direct preference-based reward: per-frame linear head plus bias on the raw
// lift features, trained with Bradley-Terry over trajectory-sum rewards. The
// capacity matches the OT reward's trainable part so comparisons isolate the
// objective rather than the model class.
struct RlhfReward {
  Eigen::VectorXd weights;  // kFeatureDim
  double bias = 0.0;
};

struct RlhfConfig {
  int epochs = 2000;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

inline void validate(const RlhfConfig& config) {
  if (config.epochs < 0) throw InvalidConfig("rlhf: epochs must be >= 0");
  if (!(config.learning_rate > 0.0)) throw InvalidConfig("rlhf: learning_rate must be > 0");
}

inline RewardTrace rlhf_score(const RlhfReward& model, const env::Trajectory& trajectory) {
  Eigen::MatrixXd features = repr::observation_matrix(trajectory);
  if (features.rows() != model.weights.size())
    throw DimensionMismatch("rlhf_score: feature length does not match weights");
  Eigen::VectorXd values = features.transpose() * model.weights;
  RewardTrace trace(static_cast<std::size_t>(values.size()));
  for (Eigen::Index t = 0; t < values.size(); ++t)
    trace[static_cast<std::size_t>(t)] = values(t) + model.bias;
  return trace;
}

// Full-batch gradient descent on -log P(preferred | pair) under the logistic
// preference model over summed per-frame rewards. Descent runs in a
// standardized feature basis (an exact affine reparameterization, folded back
// into weights/bias afterwards) so the step size is insensitive to the lift's
// scale.
inline RlhfReward rlhf_train(const std::vector<std::pair<int, int>>& pairs,
                             const oracle::TrajectoryPool& pool, const RlhfConfig& config) {
  validate(config);
  if (pairs.empty()) throw InvalidConfig("rlhf_train: pairs must be nonempty");
  const int n_pool = static_cast<int>(pool.trajectories.size());
  for (const auto& [preferred, dispreferred] : pairs) {
    if (preferred < 0 || preferred >= n_pool || dispreferred < 0 || dispreferred >= n_pool)
      throw UnresolvedTrajectoryId("rlhf_train: pair references missing trajectory");
  }

  const Eigen::Index dim = repr::observation_matrix(pool.trajectories[0]).rows();
  Eigen::MatrixXd sums(dim, n_pool);  // per-trajectory feature sums
  Eigen::VectorXd lengths(n_pool);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(dim);
  double frames = 0.0;
  for (int i = 0; i < n_pool; ++i) {
    Eigen::MatrixXd features = repr::observation_matrix(pool.trajectories[i]);
    if (features.rows() != dim)
      throw DimensionMismatch("rlhf_train: inconsistent feature length in pool");
    sums.col(i) = features.rowwise().sum();
    lengths(i) = static_cast<double>(features.cols());
    mean += sums.col(i);
    sq += features.array().square().matrix().rowwise().sum();
    frames += lengths(i);
  }
  mean /= frames;
  Eigen::VectorXd scale =
      ((sq.array() / frames - mean.array().square()).max(0.0).sqrt()).max(1e-8).matrix();

  // Margin features: standardized feature-sum difference per pair, plus the
  // length difference carrying the bias.
  const int n_pairs = static_cast<int>(pairs.size());
  Eigen::MatrixXd delta(n_pairs, dim);
  Eigen::VectorXd dlen(n_pairs);
  for (int j = 0; j < n_pairs; ++j) {
    const auto& [preferred, dispreferred] = pairs[static_cast<std::size_t>(j)];
    Eigen::VectorXd plus =
        (sums.col(preferred) - lengths(preferred) * mean).cwiseQuotient(scale);
    Eigen::VectorXd minus =
        (sums.col(dispreferred) - lengths(dispreferred) * mean).cwiseQuotient(scale);
    delta.row(j) = (plus - minus).transpose();
    dlen(j) = lengths(preferred) - lengths(dispreferred);
  }

  Rng rng(derive(config.seed, 0x817full));
  Eigen::VectorXd w(dim);
  for (Eigen::Index k = 0; k < dim; ++k) w(k) = 0.01 * rng.gaussian();
  double b = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Eigen::VectorXd margin = delta * w + b * dlen;
    Eigen::VectorXd slack(n_pairs);
    for (int j = 0; j < n_pairs; ++j) slack(j) = sigmoid(-margin(j));
    double inv = 1.0 / static_cast<double>(n_pairs);
    w += config.learning_rate * inv * (delta.transpose() * slack);
    b += config.learning_rate * inv * dlen.dot(slack);
  }

  RlhfReward model;
  model.weights = w.cwiseQuotient(scale);
  model.bias = b - model.weights.dot(mean);
  return model;
}

// Negative L2 distance to a goal frame in the embedding space.
inline RewardTrace goal_distance_score(const repr::LinearEmbedding& embedding,
                                       const env::Trajectory& trajectory,
                                       const Eigen::VectorXd& goal_observation) {
  if (goal_observation.size() != embedding.weights.cols())
    throw DimensionMismatch("goal_distance_score: goal length does not match n_b");
  ot::EmbeddingSequence frames =
      repr::embed(embedding, repr::observation_matrix(trajectory));
  Eigen::VectorXd goal = embedding.weights * goal_observation;
  RewardTrace trace(static_cast<std::size_t>(frames.length()));
  for (Eigen::Index t = 0; t < frames.length(); ++t)
    trace[static_cast<std::size_t>(t)] = -(frames.frames.col(t) - goal).norm();
  return trace;
}

// OT reward on a frozen random embedding, standing in for reward models built
// on representations that were never aligned to this preference data.
inline repr::LinearEmbedding unaligned_embedding(int n_b, std::uint64_t seed) {
  return repr::init_embedding(repr::kDefaultLatentDim, n_b, seed);
}

inline RewardTrace unaligned_ot_score(const env::Trajectory& trajectory,
                                      const std::vector<env::Trajectory>& expert_set,
                                      std::uint64_t seed,
                                      const ot::SinkhornConfig& sinkhorn = {}) {
  if (expert_set.empty()) throw EmptyExpertSet("unaligned_ot_score: no expert demos");
  if (expert_set[0].observations.empty())
    throw InvalidConfig("unaligned_ot_score: expert demo has no observations");
  int n_b = static_cast<int>(expert_set[0].observations[0].size());
  RaplReward model = make_rapl_reward(unaligned_embedding(n_b, seed), expert_set, sinkhorn);
  return rapl_score(model, trajectory);
}

// Mass each base feature carries in the embedding: normalized column norms of
// the weight matrix.
inline Eigen::VectorXd feature_attribution(const repr::LinearEmbedding& embedding) {
  Eigen::VectorXd norms = embedding.weights.colwise().norm();
  double total = norms.sum();
  if (!(total > 0.0)) throw ZeroWeights("feature_attribution: weight matrix is zero");
  return norms / total;
}

}  // namespace rapl_lab::rewards
