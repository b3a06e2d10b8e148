#pragma once

// Entropy-regularized optimal transport between embedded frame sequences:
// cosine cost construction, a log-domain Sinkhorn solver with a damped
// Newton polish on the dual, OT distance, the per-timestep OT reward,
// closest-expert selection, and the plan diagonality diagnostic.

#include "rapl_lab/common.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace rapl_lab::ot {

// Frames are columns; every column is one latent point of dimension n_e.
struct EmbeddingSequence {
  Eigen::MatrixXd frames;

  Eigen::Index dim() const { return frames.rows(); }
  Eigen::Index length() const { return frames.cols(); }
};

struct SinkhornConfig {
  double epsilon = 0.05;
  int max_iterations = 10000;
  double tolerance = 1e-8;
};

inline void validate(const SinkhornConfig& config) {
  if (!(config.epsilon > 0.0)) throw InvalidConfig("sinkhorn: epsilon must be > 0");
  if (!(config.tolerance > 0.0)) throw InvalidConfig("sinkhorn: tolerance must be > 0");
  if (config.max_iterations < 1) throw InvalidConfig("sinkhorn: max_iterations must be >= 1");
}

struct TransportPlan {
  Eigen::MatrixXd entries;
  double row_marginal = 0.0;  // 1 / T_a
  double col_marginal = 0.0;  // 1 / T_b
  double marginal_residual = 0.0;
  int iterations = 0;
};

constexpr double kZeroGuard = 1e-12;

inline double cosine_cost(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DimensionMismatch("cosine_cost: dimension mismatch");
  double na = a.norm(), nb = b.norm();
  if (na < kZeroGuard || nb < kZeroGuard) throw ZeroVector("cosine_cost: zero-norm input");
  return std::clamp(1.0 - a.dot(b) / (na * nb), 0.0, 2.0);
}

// T_a x T_b matrix of pairwise cosine distances between frame columns.
inline Eigen::MatrixXd cost_matrix(const EmbeddingSequence& a, const EmbeddingSequence& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch("cost_matrix: latent dimension mismatch");
  if (a.length() < 1 || b.length() < 1) throw ShapeMismatch("cost_matrix: empty sequence");
  Eigen::VectorXd na = a.frames.colwise().norm();
  Eigen::VectorXd nb = b.frames.colwise().norm();
  if (na.minCoeff() < kZeroGuard || nb.minCoeff() < kZeroGuard)
    throw ZeroVector("cost_matrix: zero-norm frame");
  Eigen::MatrixXd gram = a.frames.transpose() * b.frames;
  gram.array().colwise() /= na.array();
  gram.array().rowwise() /= nb.transpose().array();
  return (1.0 - gram.array()).cwiseMax(0.0).cwiseMin(2.0).matrix();
}

namespace detail {

// Row-wise log-sum-exp, stable for any finite input.
inline Eigen::VectorXd lse_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd mx = m.rowwise().maxCoeff();
  return (mx.array() + (m.colwise() - mx).array().exp().rowwise().sum().log()).matrix();
}

// Plan entries from potentials; exponent capped so an overshoot shows up
// as a huge residual instead of inf.
inline Eigen::MatrixXd plan_entries(const Eigen::MatrixXd& cost, double eps,
                                    const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
  Eigen::MatrixXd z = (((-cost).colwise() + f).rowwise() + g.transpose()) / eps;
  return z.array().min(30.0).exp().matrix();
}

inline double marginal_residual(const Eigen::MatrixXd& plan, double ra, double cb) {
  double r = (plan.rowwise().sum().array() - ra).abs().maxCoeff();
  double c = (plan.colwise().sum().array() - cb).abs().maxCoeff();
  return std::max(r, c);
}

}  // namespace detail

// Log-domain Sinkhorn with uniform marginals 1/T_a, 1/T_b. Plain sweeps
// carry the iterate into the quadratic basin; a damped Newton method on
// the concave dual finishes, which keeps degenerate instances (where the
// sweep contraction rate approaches 1) inside the iteration budget.
// Sweeps and Newton steps each count as one iteration.
inline TransportPlan sinkhorn(const Eigen::MatrixXd& cost, const SinkhornConfig& config) {
  validate(config);
  if (cost.size() == 0) throw ShapeMismatch("sinkhorn: empty cost");
  if (!cost.allFinite()) throw NonFinite("sinkhorn: non-finite cost");

  const Eigen::Index n = cost.rows(), m = cost.cols();
  const double eps = config.epsilon;
  const double ra = 1.0 / static_cast<double>(n);
  const double cb = 1.0 / static_cast<double>(m);
  const double la = -std::log(static_cast<double>(n));
  const double lb = -std::log(static_cast<double>(m));

  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m);

  auto do_sweep = [&] {
    Eigen::MatrixXd zg = ((-cost).rowwise() + g.transpose()) / eps;
    f = eps * (la - detail::lse_rows(zg).array()).matrix();
    Eigen::MatrixXd zf = ((-cost).colwise() + f).transpose() / eps;
    g = eps * (lb - detail::lse_rows(zf).array()).matrix();
  };

  int it = 0;
  double res = std::numeric_limits<double>::infinity();
  constexpr double kSwitchResidual = 1e-3;
  constexpr int kSwitchIteration = 500;

  while (it < config.max_iterations) {
    do_sweep();
    ++it;
    if (it % 4 != 0 && it < kSwitchIteration) continue;
    res = detail::marginal_residual(detail::plan_entries(cost, eps, f, g), ra, cb);
    if (res < config.tolerance || res < kSwitchResidual || it >= kSwitchIteration) break;
  }
  if (!f.allFinite() || !g.allFinite()) throw NonFinite("sinkhorn: potentials diverged");

  // Dual objective to maximize: <f,a> + <g,b> - eps * mass(plan).
  auto dual = [&](const Eigen::VectorXd& ff, const Eigen::VectorXd& gg) {
    return ff.sum() * ra + gg.sum() * cb -
           eps * detail::plan_entries(cost, eps, ff, gg).sum();
  };

  double tau = 1e-10;
  double obj = dual(f, g);
  while (it < config.max_iterations && res >= config.tolerance) {
    Eigen::MatrixXd plan = detail::plan_entries(cost, eps, f, g);
    Eigen::VectorXd rs = plan.rowwise().sum();
    Eigen::VectorXd cs = plan.colwise().sum();
    Eigen::VectorXd grad(n + m);
    grad.head(n) = (ra - rs.array()).matrix();
    grad.tail(m) = (cb - cs.array()).matrix();
    res = grad.cwiseAbs().maxCoeff();
    if (res < config.tolerance) break;

    Eigen::MatrixXd h(n + m, n + m);
    h.setZero();
    h.topLeftCorner(n, n).diagonal() = rs;
    h.bottomRightCorner(m, m).diagonal() = cs;
    h.topRightCorner(n, m) = plan;
    h.bottomLeftCorner(m, n) = plan.transpose();
    h /= eps;

    bool stepped = false;
    for (int attempt = 0; attempt < 40 && !stepped; ++attempt) {
      Eigen::MatrixXd damped = h;
      damped.diagonal().array() += tau;
      Eigen::VectorXd d = damped.ldlt().solve(grad);
      if (d.allFinite()) {
        double t = 1.0;
        for (int ls = 0; ls < 30; ++ls) {
          Eigen::VectorXd f2 = f + t * d.head(n);
          Eigen::VectorXd g2 = g + t * d.tail(m);
          double o2 = dual(f2, g2);
          if (std::isfinite(o2) && o2 > obj) {
            f = std::move(f2);
            g = std::move(g2);
            obj = o2;
            tau = std::max(tau / 3.0, 1e-14);
            stepped = true;
            break;
          }
          t *= 0.5;
        }
      }
      if (!stepped) tau = std::max(tau * 10.0, 1e-12);
    }
    if (!stepped) {
      do_sweep();  // a plain sweep always makes progress
      obj = dual(f, g);
    }
    ++it;
  }

  if (!f.allFinite() || !g.allFinite()) throw NonFinite("sinkhorn: potentials diverged");

  TransportPlan result;
  result.entries = detail::plan_entries(cost, eps, f, g);
  result.row_marginal = ra;
  result.col_marginal = cb;
  result.marginal_residual = detail::marginal_residual(result.entries, ra, cb);
  result.iterations = it;
  if (!result.entries.allFinite()) throw NonFinite("sinkhorn: plan non-finite");
  return result;
}

inline double ot_distance(const Eigen::MatrixXd& cost, const TransportPlan& plan) {
  if (cost.rows() != plan.entries.rows() || cost.cols() != plan.entries.cols())
    throw ShapeMismatch("ot_distance: cost/plan shape mismatch");
  return (cost.array() * plan.entries.array()).sum();
}

// Cost, converged plan and distance for one sequence pair; the building
// block shared by the public per-pair operations.
struct PairSolution {
  Eigen::MatrixXd cost;
  TransportPlan plan;
  double distance = 0.0;
};

inline PairSolution solve_pair(const EmbeddingSequence& a, const EmbeddingSequence& b,
                               const SinkhornConfig& config) {
  PairSolution out;
  out.cost = cost_matrix(a, b);
  out.plan = sinkhorn(out.cost, config);
  out.distance = ot_distance(out.cost, out.plan);
  return out;
}

inline RewardTrace reward_trace_from(const PairSolution& sol) {
  const Eigen::Index ta = sol.cost.rows();
  RewardTrace trace(static_cast<std::size_t>(ta));
  for (Eigen::Index t = 0; t < ta; ++t)
    trace[static_cast<std::size_t>(t)] =
        -(sol.cost.row(t).array() * sol.plan.entries.row(t).array()).sum();
  return trace;
}

// r_t = -sum_t' c_{t,t'} mu*_{t,t'}; entries lie in [-2/T_a, 0] and sum
// to -ot_distance.
inline RewardTrace ot_reward_trace(const EmbeddingSequence& robot,
                                   const EmbeddingSequence& expert,
                                   const SinkhornConfig& config) {
  return reward_trace_from(solve_pair(robot, expert, config));
}

inline std::size_t select_closest_expert(const EmbeddingSequence& robot,
                                         const std::vector<EmbeddingSequence>& experts,
                                         const SinkhornConfig& config) {
  if (experts.empty()) throw EmptyExpertSet("select_closest_expert: no experts");
  std::size_t best = 0;
  double best_distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < experts.size(); ++i) {
    double d = solve_pair(robot, experts[i], config).distance;
    if (d < best_distance) {
      best_distance = d;
      best = i;
    }
  }
  return best;
}

// Diagonal mass of a square coupling: 1 for the synchronized plan, 1/T
// for the uniform plan, 0 for the anti-diagonal plan.
inline double plan_diagonality(const TransportPlan& plan) {
  if (plan.entries.rows() != plan.entries.cols())
    throw NonSquare("plan_diagonality: plan not square");
  return std::clamp(plan.entries.trace(), 0.0, 1.0);
}

}  // namespace rapl_lab::ot
