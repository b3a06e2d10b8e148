#pragma once

// Deterministic planar pushing environments: avoid, group and clutter
// tasks with closed-form ground-truth rewards, a kinematic point-pusher
// step rule, and a frozen random Fourier feature lift standing in for a
// pre-trained visual backbone.

#include "rapl_lab/common.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rapl_lab::env {

enum class TaskKind { Avoid, Group, Clutter };

inline const char* task_name(TaskKind task) {
  switch (task) {
    case TaskKind::Avoid: return "avoid";
    case TaskKind::Group: return "group";
    case TaskKind::Clutter: return "clutter";
  }
  return "?";
}

inline TaskKind task_from_name(const std::string& name) {
  if (name == "avoid") return TaskKind::Avoid;
  if (name == "group") return TaskKind::Group;
  if (name == "clutter") return TaskKind::Clutter;
  throw InvalidConfig("unknown task: " + name);
}

struct Embodiment {
  std::string name;
  double contact_radius = 0.0;
  double max_step = 0.0;
  bool two_contact_points = false;
  int id = 0;
};

inline Embodiment embodiment_by_name(const std::string& name) {
  if (name == "small") return {"small", 0.03, 0.04, false, 0};
  if (name == "medium") return {"medium", 0.06, 0.06, false, 1};
  if (name == "gripper") return {"gripper", 0.06, 0.06, true, 2};
  throw InvalidConfig("unknown embodiment: " + name);
}

constexpr int kEmbodimentCount = 3;
constexpr double kGoalRadius = 0.1;
constexpr double kSafetyDistance = 0.15;
constexpr int kDefaultHorizon = 40;
constexpr std::uint64_t kDefaultLiftSeed = 0x11f7u;

// Arena is the unit square. Object coordinates only; derived distances
// are always recomputed from positions.
struct EnvState {
  TaskKind task = TaskKind::Group;
  int embodiment_id = 0;
  Eigen::Vector2d agent = Eigen::Vector2d::Zero();
  double theta = 0.0;
  // Avoid: [object]; Group: [object1, object2];
  // Clutter: [rect1, rect2, cube1..cube4]
  std::vector<Eigen::Vector2d> objects;
  std::vector<Eigen::Vector2d> cube_init;  // Clutter only, 4 entries
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  Eigen::Vector2d obstacle = Eigen::Vector2d::Zero();  // Avoid only
  double d_safety = kSafetyDistance;                   // Avoid only
};

namespace detail {

inline Eigen::Vector2d clamp_to_arena(const Eigen::Vector2d& p) {
  return {std::clamp(p.x(), 0.0, 1.0), std::clamp(p.y(), 0.0, 1.0)};
}

}  // namespace detail

// Kinematic contact rule: the agent moves by the clipped action; any
// object within contact_radius of a post-move contact point is displaced
// by the motion component along the contact-point-to-object direction
// (pushing only, no pulling), then clamped to the arena.
inline EnvState step(const EnvState& state, const Eigen::Vector2d& action,
                     const Embodiment& embodiment) {
  if (!action.allFinite()) throw NonFiniteAction("step: non-finite action");

  EnvState next = state;
  Eigen::Vector2d motion = action;
  double speed = motion.norm();
  if (speed > embodiment.max_step) motion *= embodiment.max_step / speed;
  next.agent = detail::clamp_to_arena(state.agent + motion);
  Eigen::Vector2d actual = next.agent - state.agent;
  double moved = actual.norm();
  if (moved > 1e-15) next.theta = std::atan2(actual.y(), actual.x());

  // Contact is detected at the post-move contact points; the push ray is
  // the pre-move agent-to-object direction, so a trailing agent carries an
  // object at a constant gap instead of overrunning it.
  std::vector<Eigen::Vector2d> post_contacts, pre_contacts;
  post_contacts.push_back(next.agent);
  pre_contacts.push_back(state.agent);
  if (embodiment.two_contact_points && moved > 1e-15) {
    Eigen::Vector2d perp(-actual.y() / moved, actual.x() / moved);
    double off = 0.5 * embodiment.contact_radius;
    post_contacts[0] = next.agent + off * perp;
    post_contacts.push_back(next.agent - off * perp);
    pre_contacts[0] = state.agent + off * perp;
    pre_contacts.push_back(state.agent - off * perp);
  }

  for (auto& object : next.objects) {
    std::size_t nearest = 0;
    double best = (object - post_contacts[0]).norm();
    for (std::size_t k = 1; k < post_contacts.size(); ++k) {
      double d = (object - post_contacts[k]).norm();
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    if (best >= embodiment.contact_radius) continue;
    Eigen::Vector2d ray = object - pre_contacts[nearest];
    double gap = ray.norm();
    Eigen::Vector2d direction;
    if (gap > 1e-12) {
      direction = ray / gap;
    } else if (moved > 1e-15) {
      direction = actual / moved;
    } else {
      continue;
    }
    double along = actual.dot(direction);
    if (along <= 0.0) continue;
    object = detail::clamp_to_arena(object + along * direction);
  }
  return next;
}

inline double gt_reward(const EnvState& state, TaskKind task) {
  if (state.task != task) throw TaskMismatch("gt_reward: state/task mismatch");
  switch (task) {
    case TaskKind::Avoid: {
      double d_goal2obj = (state.goal - state.objects[0]).norm();
      double d_obs2obj = (state.obstacle - state.objects[0]).norm();
      return -d_goal2obj - 2.0 * (d_obs2obj < state.d_safety ? 1.0 : 0.0);
    }
    case TaskKind::Group: {
      double d1 = (state.goal - state.objects[0]).norm();
      double d2 = (state.goal - state.objects[1]).norm();
      return -std::max(d1, d2) - (state.objects[0] - state.objects[1]).norm();
    }
    case TaskKind::Clutter: {
      double d1 = (state.goal - state.objects[0]).norm();
      double d2 = (state.goal - state.objects[1]).norm();
      double reward =
          -std::max(d1, d2) - (state.objects[0] - state.objects[1]).norm();
      for (int i = 0; i < 4; ++i)
        reward -= 0.1 * (state.objects[static_cast<std::size_t>(2 + i)] -
                         state.cube_init[static_cast<std::size_t>(i)])
                            .norm();
      return reward;
    }
  }
  throw TaskMismatch("gt_reward: unknown task");
}

// Task-specific flattening fed to the feature lift. Positions plus the
// derived distances the ground-truth rewards read.
inline Eigen::VectorXd flatten_state(const EnvState& state) {
  switch (state.task) {
    case TaskKind::Avoid: {
      Eigen::VectorXd s(7);
      s << state.agent.x(), state.agent.y(), state.theta, state.objects[0].x(),
          state.objects[0].y(), (state.goal - state.objects[0]).norm(),
          (state.obstacle - state.objects[0]).norm();
      return s;
    }
    case TaskKind::Group: {
      Eigen::VectorXd s(9);
      s << state.agent.x(), state.agent.y(), state.theta, state.objects[0].x(),
          state.objects[0].y(), state.objects[1].x(), state.objects[1].y(),
          (state.goal - state.objects[0]).norm(),
          (state.goal - state.objects[1]).norm();
      return s;
    }
    case TaskKind::Clutter: {
      Eigen::VectorXd s(21);
      s(0) = state.agent.x();
      s(1) = state.agent.y();
      s(2) = state.theta;
      for (int i = 0; i < 6; ++i) {
        s(3 + 2 * i) = state.objects[static_cast<std::size_t>(i)].x();
        s(4 + 2 * i) = state.objects[static_cast<std::size_t>(i)].y();
      }
      for (int i = 0; i < 6; ++i)
        s(15 + i) = (state.goal - state.objects[static_cast<std::size_t>(i)]).norm();
      return s;
    }
  }
  throw TaskMismatch("flatten_state: unknown task");
}

constexpr int kFeatureDim = 64;

namespace detail {

struct Lift {
  Eigen::MatrixXd omega;  // kFeatureDim x input_dim
  Eigen::VectorXd bias;   // kFeatureDim
};

// Frozen per (lift_seed, task); the embodiment one-hot is part of the
// lifted input so embodiment identity is visible to the representation.
inline const Lift& lift_for(std::uint64_t lift_seed, TaskKind task, int input_dim) {
  static std::map<std::pair<std::uint64_t, int>, Lift> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  auto key = std::make_pair(lift_seed, static_cast<int>(task));
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  constexpr double kOmegaScale = 1.5;
  constexpr double two_pi = 6.283185307179586476925286766559;
  Rng rng(derive(lift_seed, 0x11f7ull, static_cast<std::uint64_t>(task)));
  Lift lift;
  lift.omega.resize(kFeatureDim, input_dim);
  for (int i = 0; i < kFeatureDim; ++i)
    for (int j = 0; j < input_dim; ++j) lift.omega(i, j) = kOmegaScale * rng.gaussian();
  lift.bias.resize(kFeatureDim);
  for (int i = 0; i < kFeatureDim; ++i) lift.bias(i) = rng.uniform(0.0, two_pi);
  return cache.emplace(key, std::move(lift)).first->second;
}

}  // namespace detail

// Random Fourier feature lift of the flattened state with the embodiment
// one-hot appended: features_i = cos(<omega_i, s> + b_i).
inline Eigen::VectorXd observe(const EnvState& state, std::uint64_t lift_seed) {
  Eigen::VectorXd flat = flatten_state(state);
  Eigen::VectorXd input(flat.size() + kEmbodimentCount);
  input.head(flat.size()) = flat;
  input.tail(kEmbodimentCount).setZero();
  input(flat.size() + state.embodiment_id) = 1.0;
  const detail::Lift& lift =
      detail::lift_for(lift_seed, state.task, static_cast<int>(input.size()));
  return ((lift.omega * input + lift.bias).array()).cos();
}

// Initial placements: tight jitter bands well away from the goal, so a
// fixed task context distribution stays solvable by open-loop plans.
inline EnvState make_initial_state(TaskKind task, const Embodiment& embodiment,
                                   std::uint64_t seed) {
  Rng rng(derive(seed, 0x57a7eull));
  auto jitter = [&rng](double x, double y) {
    return Eigen::Vector2d(x + rng.uniform(-0.01, 0.01), y + rng.uniform(-0.01, 0.01));
  };

  EnvState state;
  state.task = task;
  state.embodiment_id = embodiment.id;
  state.goal = Eigen::Vector2d(0.78, 0.78);
  state.agent = jitter(0.22, 0.22);
  state.theta = rng.uniform(0.0, 6.283185307179586476925286766559);
  switch (task) {
    case TaskKind::Avoid:
      state.obstacle = Eigen::Vector2d(0.62, 0.62);
      state.d_safety = kSafetyDistance;
      state.objects = {jitter(0.40, 0.40)};
      break;
    case TaskKind::Group:
      // Collinear with the agent and goal: pushing the rear object first
      // shrinks both the max goal distance and the separation, so the
      // reward improves monotonically along a sweep.
      state.objects = {jitter(0.40, 0.40), jitter(0.54, 0.54)};
      break;
    case TaskKind::Clutter:
      state.objects = {jitter(0.40, 0.40), jitter(0.54, 0.54), jitter(0.35, 0.68),
                       jitter(0.68, 0.35), jitter(0.30, 0.30), jitter(0.62, 0.48)};
      state.cube_init = {state.objects[2], state.objects[3], state.objects[4],
                         state.objects[5]};
      break;
  }
  return state;
}

// Canonical success state used as the goal observation for the
// goal-distance baseline: objects resting at the goal center.
inline EnvState make_goal_state(TaskKind task, const Embodiment& embodiment) {
  EnvState state;
  state.task = task;
  state.embodiment_id = embodiment.id;
  state.goal = Eigen::Vector2d(0.78, 0.78);
  state.agent = Eigen::Vector2d(0.66, 0.66);
  state.theta = 0.7853981633974483;
  switch (task) {
    case TaskKind::Avoid:
      state.obstacle = Eigen::Vector2d(0.62, 0.62);
      state.d_safety = kSafetyDistance;
      state.objects = {state.goal};
      break;
    case TaskKind::Group:
      state.objects = {state.goal, state.goal};
      break;
    case TaskKind::Clutter:
      state.objects = {state.goal, state.goal, Eigen::Vector2d(0.35, 0.68),
                       Eigen::Vector2d(0.68, 0.35), Eigen::Vector2d(0.30, 0.30),
                       Eigen::Vector2d(0.62, 0.48)};
      state.cube_init = {state.objects[2], state.objects[3], state.objects[4],
                         state.objects[5]};
      break;
  }
  return state;
}

struct Trajectory {
  TaskKind task = TaskKind::Group;
  std::string embodiment;
  std::uint64_t seed = 0;
  std::vector<EnvState> states;              // length T + 1
  std::vector<Eigen::VectorXd> observations;  // length T, each kFeatureDim
  RewardTrace gt_rewards;                     // length T, from states[t + 1]
};

inline double gt_return(const Trajectory& trajectory) {
  double total = 0.0;
  for (double r : trajectory.gt_rewards) total += r;
  return total;
}

// Per-step agent displacements recovered from consecutive states: the
// replayable surrogate for a stored trajectory's action sequence, with the
// step-size and arena clamps already folded in.
inline Eigen::MatrixXd applied_actions(const Trajectory& trajectory) {
  if (trajectory.states.size() < 2)
    throw InvalidConfig("applied_actions: trajectory has no transitions");
  Eigen::MatrixXd actions(static_cast<Eigen::Index>(trajectory.states.size()) - 1, 2);
  for (Eigen::Index t = 0; t < actions.rows(); ++t)
    actions.row(t) = (trajectory.states[static_cast<std::size_t>(t) + 1].agent -
                      trajectory.states[static_cast<std::size_t>(t)].agent)
                         .transpose();
  return actions;
}

using FeedbackPolicy = std::function<Eigen::Vector2d(const EnvState&, int)>;

inline Trajectory rollout(const FeedbackPolicy& policy, TaskKind task,
                          const Embodiment& embodiment, int horizon, std::uint64_t seed,
                          std::uint64_t lift_seed = kDefaultLiftSeed) {
  if (horizon < 1) throw InvalidConfig("rollout: horizon must be >= 1");
  Trajectory trajectory;
  trajectory.task = task;
  trajectory.embodiment = embodiment.name;
  trajectory.seed = seed;
  trajectory.states.reserve(static_cast<std::size_t>(horizon) + 1);
  trajectory.observations.reserve(static_cast<std::size_t>(horizon));
  trajectory.gt_rewards.reserve(static_cast<std::size_t>(horizon));
  trajectory.states.push_back(make_initial_state(task, embodiment, seed));
  for (int t = 0; t < horizon; ++t) {
    EnvState next = step(trajectory.states.back(), policy(trajectory.states.back(), t),
                         embodiment);
    trajectory.observations.push_back(observe(next, lift_seed));
    trajectory.gt_rewards.push_back(gt_reward(next, task));
    trajectory.states.push_back(std::move(next));
  }
  return trajectory;
}

// Open-loop variant: row t of the action matrix is the step-t action.
inline Trajectory rollout(const Eigen::MatrixXd& actions, TaskKind task,
                          const Embodiment& embodiment, std::uint64_t seed,
                          std::uint64_t lift_seed = kDefaultLiftSeed) {
  if (actions.cols() != 2) throw InvalidConfig("rollout: actions must be T x 2");
  return rollout(
      [&actions](const EnvState&, int t) {
        return Eigen::Vector2d(actions(t, 0), actions(t, 1));
      },
      task, embodiment, static_cast<int>(actions.rows()), seed, lift_seed);
}

}  // namespace rapl_lab::env
