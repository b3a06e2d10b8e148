#include "rapl_lab/env.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace rapl_lab;
using namespace rapl_lab::env;

namespace {

bool states_equal(const EnvState& a, const EnvState& b) {
  if (a.task != b.task || a.embodiment_id != b.embodiment_id) return false;
  if (a.agent != b.agent || a.theta != b.theta) return false;
  if (a.objects.size() != b.objects.size()) return false;
  for (std::size_t i = 0; i < a.objects.size(); ++i)
    if (a.objects[i] != b.objects[i]) return false;
  return a.goal == b.goal;
}

const std::vector<TaskKind> kAllTasks = {TaskKind::Avoid, TaskKind::Group,
                                         TaskKind::Clutter};
const std::vector<const char*> kAllEmbodiments = {"small", "medium", "gripper"};

}  // namespace

TEST_CASE("zero action leaves the state unchanged", "[env]") {
  for (TaskKind task : kAllTasks) {
    for (const char* name : kAllEmbodiments) {
      Embodiment emb = embodiment_by_name(name);
      EnvState s0 = make_initial_state(task, emb, 11);
      EnvState s1 = step(s0, Eigen::Vector2d::Zero(), emb);
      REQUIRE(states_equal(s0, s1));
    }
  }
}

TEST_CASE("no displacement without contact", "[env]") {
  Embodiment emb = embodiment_by_name("small");
  EnvState s = make_initial_state(TaskKind::Avoid, emb, 3);
  s.agent = Eigen::Vector2d(0.1, 0.1);
  s.objects[0] = Eigen::Vector2d(0.9, 0.9);
  EnvState next = step(s, Eigen::Vector2d(0.01, 0.0), emb);
  REQUIRE(next.agent.x() == Catch::Approx(0.11).margin(1e-15));
  REQUIRE(next.agent.y() == 0.1);
  REQUIRE(next.objects[0] == s.objects[0]);
}

TEST_CASE("contact pushes the object by the motion component toward it", "[env]") {
  Embodiment emb = embodiment_by_name("small");
  EnvState s = make_initial_state(TaskKind::Avoid, emb, 5);
  s.agent = Eigen::Vector2d(0.50, 0.5);
  s.objects[0] = Eigen::Vector2d(0.525, 0.5);
  EnvState next = step(s, Eigen::Vector2d(0.02, 0.0), emb);
  // Motion aims straight at the object, so the full 0.02 transfers.
  REQUIRE(next.objects[0].x() == Catch::Approx(0.545).margin(1e-15));
  REQUIRE(next.objects[0].y() == 0.5);
  REQUIRE(next.theta == 0.0);
}

TEST_CASE("retreating from a touching object does not drag it", "[env]") {
  Embodiment emb = embodiment_by_name("small");
  EnvState s = make_initial_state(TaskKind::Avoid, emb, 5);
  s.agent = Eigen::Vector2d(0.50, 0.5);
  s.objects[0] = Eigen::Vector2d(0.51, 0.5);
  EnvState next = step(s, Eigen::Vector2d(-0.02, 0.0), emb);
  REQUIRE(next.objects[0] == s.objects[0]);
}

TEST_CASE("action norm is clipped to max_step", "[env]") {
  Embodiment emb = embodiment_by_name("small");
  EnvState s = make_initial_state(TaskKind::Group, emb, 9);
  s.agent = Eigen::Vector2d(0.5, 0.5);
  EnvState next = step(s, Eigen::Vector2d(10.0, 0.0), emb);
  REQUIRE((next.agent - s.agent).norm() == Catch::Approx(emb.max_step).margin(1e-15));
}

TEST_CASE("gripper contact points act symmetrically about the motion axis", "[env]") {
  Embodiment grip = embodiment_by_name("gripper");
  EnvState s = make_initial_state(TaskKind::Group, grip, 13);
  s.agent = Eigen::Vector2d(0.50, 0.5);
  s.objects[0] = Eigen::Vector2d(0.54, 0.53);
  s.objects[1] = Eigen::Vector2d(0.54, 0.47);
  EnvState next = step(s, Eigen::Vector2d(0.02, 0.0), grip);
  REQUIRE(next.objects[0].x() > 0.54);  // each tip pushes its own object
  REQUIRE(next.objects[0].x() == Catch::Approx(next.objects[1].x()).margin(1e-12));
  REQUIRE(next.objects[0].y() - 0.5 == Catch::Approx(0.5 - next.objects[1].y()).margin(1e-12));

  // A single-point embodiment with the same radius pushes the two objects
  // along different rays than the gripper tips do.
  Embodiment med = embodiment_by_name("medium");
  EnvState sm = s;
  sm.embodiment_id = med.id;
  EnvState nm = step(sm, Eigen::Vector2d(0.02, 0.0), med);
  REQUIRE(nm.objects[0] != next.objects[0]);
}

TEST_CASE("non-finite actions are rejected", "[env]") {
  Embodiment emb = embodiment_by_name("medium");
  EnvState s = make_initial_state(TaskKind::Avoid, emb, 2);
  REQUIRE_THROWS_AS(
      step(s, Eigen::Vector2d(std::nan(""), 0.0), emb), NonFiniteAction);
}

TEST_CASE("ground-truth rewards match the closed forms", "[env]") {
  Embodiment emb = embodiment_by_name("small");

  EnvState avoid;
  avoid.task = TaskKind::Avoid;
  avoid.goal = Eigen::Vector2d(0.0, 0.0);
  avoid.objects = {Eigen::Vector2d(0.0, 1.0)};
  avoid.obstacle = Eigen::Vector2d(0.0, 0.5);
  avoid.d_safety = 0.3;
  REQUIRE(gt_reward(avoid, TaskKind::Avoid) == -1.0);
  avoid.obstacle = Eigen::Vector2d(0.0, 0.8);
  REQUIRE(gt_reward(avoid, TaskKind::Avoid) == -3.0);

  EnvState group = make_initial_state(TaskKind::Group, emb, 1);
  group.objects[0] = group.goal;
  group.objects[1] = group.goal;
  REQUIRE(gt_reward(group, TaskKind::Group) == 0.0);

  EnvState clutter = make_initial_state(TaskKind::Clutter, emb, 1);
  clutter.objects[0] = clutter.goal;
  clutter.objects[1] = clutter.goal;
  for (int i = 0; i < 4; ++i)
    clutter.objects[static_cast<std::size_t>(2 + i)] = clutter.cube_init[static_cast<std::size_t>(i)];
  REQUIRE(gt_reward(clutter, TaskKind::Clutter) == 0.0);

  REQUIRE_THROWS_AS(gt_reward(group, TaskKind::Avoid), TaskMismatch);
}

TEST_CASE("cube displacement is penalized in clutter", "[env]") {
  Embodiment emb = embodiment_by_name("small");
  EnvState clutter = make_initial_state(TaskKind::Clutter, emb, 1);
  double base = gt_reward(clutter, TaskKind::Clutter);
  clutter.objects[2] += Eigen::Vector2d(0.0, 0.1);
  REQUIRE(gt_reward(clutter, TaskKind::Clutter) ==
          Catch::Approx(base - 0.01).margin(1e-12));
}

TEST_CASE("avoid reward drops by exactly 2 when the indicator fires", "[env]") {
  EnvState s;
  s.task = TaskKind::Avoid;
  s.goal = Eigen::Vector2d(0.5, 0.5);
  s.obstacle = Eigen::Vector2d(0.85, 0.5);
  s.d_safety = 0.15;
  s.objects = {s.goal + Eigen::Vector2d(0.25, 0.0)};  // d_obs2obj = 0.1
  double inside = gt_reward(s, TaskKind::Avoid);
  s.objects[0] = s.goal + Eigen::Vector2d(0.0, 0.25);  // same d_goal2obj, far from zone
  double outside = gt_reward(s, TaskKind::Avoid);
  REQUIRE(inside - outside == -2.0);
}

TEST_CASE("rewards are never positive", "[env]") {
  for (TaskKind task : kAllTasks) {
    Embodiment emb = embodiment_by_name("medium");
    Rng rng(77);
    auto policy = [&rng](const EnvState&, int) {
      return Eigen::Vector2d(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    };
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Trajectory traj = rollout(policy, task, emb, 30, seed);
      for (double r : traj.gt_rewards) REQUIRE(r <= 0.0);
    }
  }
}

TEST_CASE("all positions stay inside the arena", "[env]") {
  for (TaskKind task : kAllTasks) {
    for (const char* name : kAllEmbodiments) {
      Embodiment emb = embodiment_by_name(name);
      Rng rng(31);
      EnvState s = make_initial_state(task, emb, 4);
      for (int t = 0; t < 200; ++t) {
        s = step(s, Eigen::Vector2d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)),
                 emb);
        REQUIRE(s.agent.x() >= 0.0);
        REQUIRE(s.agent.x() <= 1.0);
        REQUIRE(s.agent.y() >= 0.0);
        REQUIRE(s.agent.y() <= 1.0);
        for (const auto& p : s.objects) {
          REQUIRE(p.x() >= 0.0);
          REQUIRE(p.x() <= 1.0);
          REQUIRE(p.y() >= 0.0);
          REQUIRE(p.y() <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("observe is deterministic and 64-dimensional", "[env]") {
  Embodiment emb = embodiment_by_name("small");
  EnvState s = make_initial_state(TaskKind::Group, emb, 21);
  Eigen::VectorXd f1 = observe(s, 999);
  Eigen::VectorXd f2 = observe(s, 999);
  REQUIRE(f1.size() == 64);
  REQUIRE(f1 == f2);
  REQUIRE((f1.array().abs() <= 1.0).all());

  Eigen::VectorXd g = observe(s, 1000);
  REQUIRE(f1 != g);  // different lift seed, different frozen features
}

TEST_CASE("distinct states produce distinct features", "[env]") {
  Embodiment emb = embodiment_by_name("small");
  std::vector<Eigen::VectorXd> features;
  features.reserve(1000);
  for (std::uint64_t seed = 0; seed < 1000; ++seed)
    features.push_back(observe(make_initial_state(TaskKind::Group, emb, seed), 7));
  int collisions = 0;
  for (std::size_t i = 0; i < features.size(); ++i)
    for (std::size_t j = i + 1; j < features.size(); ++j)
      if (features[i] == features[j]) ++collisions;
  REQUIRE(collisions == 0);
}

TEST_CASE("embodiment identity is visible in the features", "[env]") {
  EnvState s = make_initial_state(TaskKind::Group, embodiment_by_name("small"), 8);
  EnvState m = s;
  m.embodiment_id = embodiment_by_name("medium").id;
  REQUIRE(observe(s, 7) != observe(m, 7));
}

TEST_CASE("zero policy keeps every state at the initial state", "[env]") {
  Embodiment emb = embodiment_by_name("medium");
  Trajectory traj =
      rollout(Eigen::MatrixXd::Zero(40, 2), TaskKind::Group, emb, 17);
  REQUIRE(traj.states.size() == 41);
  REQUIRE(traj.observations.size() == 40);
  REQUIRE(traj.gt_rewards.size() == 40);
  for (const EnvState& s : traj.states) REQUIRE(states_equal(s, traj.states[0]));
}

TEST_CASE("rollouts are bitwise reproducible", "[env]") {
  Embodiment emb = embodiment_by_name("gripper");
  auto policy = [](const EnvState& s, int t) {
    return Eigen::Vector2d(0.03 * std::cos(0.2 * t), 0.03 * std::sin(0.2 * t) +
                                                         0.001 * s.agent.x());
  };
  Trajectory a = rollout(policy, TaskKind::Clutter, emb, 40, 23);
  Trajectory b = rollout(policy, TaskKind::Clutter, emb, 40, 23);
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t t = 0; t < a.states.size(); ++t)
    REQUIRE(states_equal(a.states[t], b.states[t]));
  for (std::size_t t = 0; t < a.observations.size(); ++t) {
    REQUIRE(a.observations[t] == b.observations[t]);
    REQUIRE(a.gt_rewards[t] == b.gt_rewards[t]);
  }
}

TEST_CASE("stored reward and observation traces match recomputation", "[env]") {
  Embodiment emb = embodiment_by_name("medium");
  Rng rng(55);
  auto policy = [&rng](const EnvState&, int) {
    return Eigen::Vector2d(rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06));
  };
  for (TaskKind task : kAllTasks) {
    Trajectory traj = rollout(policy, task, emb, 25, 91, 424);
    for (std::size_t t = 0; t < traj.gt_rewards.size(); ++t) {
      REQUIRE(traj.gt_rewards[t] == gt_reward(traj.states[t + 1], task));
      REQUIRE(traj.observations[t] == observe(traj.states[t + 1], 424));
    }
  }
}

TEST_CASE("initial placements keep objects away from the goal", "[env]") {
  for (TaskKind task : kAllTasks) {
    Embodiment emb = embodiment_by_name("small");
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      EnvState s = make_initial_state(task, emb, seed);
      REQUIRE((s.goal - s.agent).norm() > kGoalRadius);
      for (const auto& p : s.objects) REQUIRE((s.goal - p).norm() > kGoalRadius);
      REQUIRE(s.agent.x() >= 0.0);
      REQUIRE(s.agent.y() >= 0.0);
    }
  }
}

TEST_CASE("rollout rejects an empty horizon", "[env]") {
  Embodiment emb = embodiment_by_name("small");
  REQUIRE_THROWS_AS(
      rollout([](const EnvState&, int) { return Eigen::Vector2d::Zero(); },
              TaskKind::Group, emb, 0, 1),
      InvalidConfig);
}
