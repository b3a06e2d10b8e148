#pragma once

// Trainable linear embedding over frozen base features. Fit by maximum
// likelihood on preference triplets under a Bradley-Terry model whose
// logits are negated entropic OT distances between embedded sequences.

#include "rapl_lab/common.hpp"
#include "rapl_lab/env.hpp"
#include "rapl_lab/ot.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <vector>

namespace rapl_lab::repr {

struct LinearEmbedding {
  Eigen::MatrixXd weights;  // n_e x n_b, no bias
};

constexpr int kDefaultLatentDim = 32;

inline LinearEmbedding init_embedding(int n_e, int n_b, std::uint64_t seed) {
  if (n_e < 1 || n_b < 1) throw InvalidConfig("init_embedding: dims must be >= 1");
  double bound = 1.0 / std::sqrt(static_cast<double>(n_b));
  Rng rng(derive(seed, 0x1e17ull));
  LinearEmbedding embedding;
  embedding.weights.resize(n_e, n_b);
  for (int i = 0; i < n_e; ++i)
    for (int j = 0; j < n_b; ++j) embedding.weights(i, j) = rng.uniform(-bound, bound);
  return embedding;
}

// Columns of `features` are per-frame base feature vectors.
inline ot::EmbeddingSequence embed(const LinearEmbedding& embedding,
                                   const Eigen::MatrixXd& features) {
  if (features.rows() != embedding.weights.cols())
    throw DimensionMismatch("embed: feature length does not match n_b");
  return {embedding.weights * features};
}

inline Eigen::MatrixXd observation_matrix(const env::Trajectory& trajectory) {
  if (trajectory.observations.empty())
    throw InvalidConfig("observation_matrix: trajectory has no observations");
  Eigen::MatrixXd features(trajectory.observations[0].size(),
                           static_cast<Eigen::Index>(trajectory.observations.size()));
  for (Eigen::Index t = 0; t < features.cols(); ++t)
    features.col(t) = trajectory.observations[static_cast<std::size_t>(t)];
  return features;
}

// P(pos preferred over neg | anchor) = e^{-d_pos} / (e^{-d_pos} + e^{-d_neg}),
// evaluated through the shifted logistic for stability.
inline double triplet_preference_prob(double d_pos, double d_neg) {
  return sigmoid(d_neg - d_pos);
}

struct PreferenceTriplet {
  int anchor_id = 0;
  int positive_id = 0;
  int negative_id = 0;
};

struct TrainConfig {
  double learning_rate = 5e-2;
  int epochs = 200;
  int batch_size = 16;
  // Train on every k-th frame. Sinkhorn work is quadratic in sequence
  // length and the learned metric is per-frame, so it transfers unchanged
  // to full-length sequences at scoring time.
  int frame_stride = 1;
  std::uint64_t seed = 0;
  ot::SinkhornConfig sinkhorn{};

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
    if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (frame_stride < 1) throw InvalidConfig("frame_stride must be >= 1");
    ot::validate(sinkhorn);
  }
};

struct TripletEval {
  double loss = 0.0;
  Eigen::MatrixXd grad;
};

namespace detail {

// Accumulates the plan-weighted cosine-cost gradient
//   d/dW sum_ij plan_ij c(W x_i, W y_j)
// with the plan held fixed, using the analytic derivative
//   dc/du = -(1/|u|) (v_hat - (u_hat . v_hat) u_hat).
// The plan-linear sums collapse to two thin matrix products.
inline void add_plan_weighted_cost_grad(const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& y,
                                        const Eigen::MatrixXd& u,
                                        const Eigen::MatrixXd& v,
                                        const Eigen::MatrixXd& plan, double scale,
                                        Eigen::MatrixXd& grad) {
  Eigen::VectorXd u_norm = u.colwise().norm();
  Eigen::VectorXd v_norm = v.colwise().norm();
  if (u_norm.minCoeff() < ot::kZeroGuard || v_norm.minCoeff() < ot::kZeroGuard)
    throw ZeroVector("cost gradient: zero-norm embedded frame");
  Eigen::MatrixXd u_hat = u * u_norm.cwiseInverse().asDiagonal();
  Eigen::MatrixXd v_hat = v * v_norm.cwiseInverse().asDiagonal();

  Eigen::MatrixXd a = v_hat * plan.transpose();  // col i: sum_j plan_ij v_hat_j
  Eigen::VectorXd dots = (u_hat.array() * a.array()).colwise().sum();
  Eigen::MatrixXd term =
      -(a - u_hat * dots.asDiagonal()) * u_norm.cwiseInverse().asDiagonal();
  grad.noalias() += scale * (term * x.transpose());

  Eigen::MatrixXd b = u_hat * plan;  // col j: sum_i plan_ij u_hat_i
  dots = (v_hat.array() * b.array()).colwise().sum();
  term = -(b - v_hat * dots.asDiagonal()) * v_norm.cwiseInverse().asDiagonal();
  grad.noalias() += scale * (term * y.transpose());
}

}  // namespace detail

// Negative log-likelihood of one triplet and its gradient with the
// transport plans held fixed at their converged values.
inline TripletEval triplet_loss_and_grad(const LinearEmbedding& embedding,
                                         const Eigen::MatrixXd& anchor,
                                         const Eigen::MatrixXd& positive,
                                         const Eigen::MatrixXd& negative,
                                         const ot::SinkhornConfig& config) {
  ot::EmbeddingSequence u = embed(embedding, anchor);
  ot::EmbeddingSequence vp = embed(embedding, positive);
  ot::EmbeddingSequence vn = embed(embedding, negative);
  ot::PairSolution pos = ot::solve_pair(u, vp, config);
  ot::PairSolution neg = ot::solve_pair(u, vn, config);

  double z = pos.distance - neg.distance;
  TripletEval eval;
  eval.loss = softplus(z);
  double weight = sigmoid(z);
  Eigen::MatrixXd grad_pos =
      Eigen::MatrixXd::Zero(embedding.weights.rows(), embedding.weights.cols());
  Eigen::MatrixXd grad_neg = grad_pos;
  detail::add_plan_weighted_cost_grad(anchor, positive, u.frames, vp.frames,
                                      pos.plan.entries, 1.0, grad_pos);
  detail::add_plan_weighted_cost_grad(anchor, negative, u.frames, vn.frames,
                                      neg.plan.entries, 1.0, grad_neg);
  // Elementwise difference first, so identical branches cancel exactly.
  eval.grad = weight * (grad_pos - grad_neg);
  return eval;
}

struct TrainResult {
  LinearEmbedding embedding;
  std::vector<double> loss_history;  // per-epoch mean triplet loss
};

// Minibatch gradient descent on the summed triplet NLL. Deterministic:
// the shuffle schedule is fixed by the seed and batch members are always
// reduced in slot order, so results do not depend on the thread budget.
inline TrainResult train_representation(const LinearEmbedding& initial,
                                        const std::vector<PreferenceTriplet>& dataset,
                                        const std::vector<env::Trajectory>& trajectories,
                                        const TrainConfig& config) {
  config.validate();
  TrainResult result{initial, {}};
  if (dataset.empty() || config.epochs == 0) return result;

  auto resolve = [&](int id) -> std::size_t {
    if (id < 0 || static_cast<std::size_t>(id) >= trajectories.size())
      throw UnresolvedTrajectoryId("train_representation: id " + std::to_string(id));
    return static_cast<std::size_t>(id);
  };
  std::vector<Eigen::MatrixXd> features(trajectories.size());
  std::vector<bool> materialized(trajectories.size(), false);
  for (const PreferenceTriplet& triplet : dataset)
    for (int id : {triplet.anchor_id, triplet.positive_id, triplet.negative_id}) {
      std::size_t k = resolve(id);
      if (!materialized[k]) {
        Eigen::MatrixXd full = observation_matrix(trajectories[k]);
        if (config.frame_stride == 1) {
          features[k] = std::move(full);
        } else {
          Eigen::Index kept = (full.cols() + config.frame_stride - 1) / config.frame_stride;
          features[k].resize(full.rows(), kept);
          for (Eigen::Index t = 0; t < kept; ++t)
            features[k].col(t) = full.col(t * config.frame_stride);
        }
        materialized[k] = true;
      }
    }

  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Eigen::MatrixXd weights = initial.weights;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive(config.seed, 0x50f1eull, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = shuffle_rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    LinearEmbedding current{weights};
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t count = std::min(n - start, static_cast<std::size_t>(config.batch_size));
      std::vector<TripletEval> evals(count);
      current.weights = weights;
      parallel_for(count, [&](std::size_t slot) {
        const PreferenceTriplet& t = dataset[order[start + slot]];
        evals[slot] = triplet_loss_and_grad(
            current, features[static_cast<std::size_t>(t.anchor_id)],
            features[static_cast<std::size_t>(t.positive_id)],
            features[static_cast<std::size_t>(t.negative_id)], config.sinkhorn);
      });
      Eigen::MatrixXd batch_grad = Eigen::MatrixXd::Zero(weights.rows(), weights.cols());
      for (const TripletEval& e : evals) {
        epoch_loss += e.loss;
        batch_grad += e.grad;
      }
      weights -= (config.learning_rate / static_cast<double>(count)) * batch_grad;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  result.embedding.weights = weights;
  return result;
}

}  // namespace rapl_lab::repr
