#include "rapl_lab/dpo.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace rapl_lab;
using namespace rapl_lab::dpo;

namespace {

policy::ActionSequencePolicy make_policy(int horizon, double std_value,
                                         std::uint64_t seed) {
  Rng rng(derive(seed, 0xfa11ull));
  policy::ActionSequencePolicy p;
  p.mean.resize(horizon, 2);
  for (int t = 0; t < horizon; ++t)
    for (int d = 0; d < 2; ++d) p.mean(t, d) = 0.01 * rng.gaussian();
  p.std = Eigen::MatrixXd::Constant(horizon, 2, std_value);
  return p;
}

std::vector<PreferencePair> make_pairs(const policy::ActionSequencePolicy& reference,
                                       int n, std::uint64_t seed) {
  // Preferred sequences hug the reference mean, dispreferred wander, so the
  // pairs carry a learnable signal without any environment rollouts.
  Rng rng(derive(seed, 0x9a17ull));
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < n; ++i) {
    PreferencePair pair;
    pair.context_seed = static_cast<std::uint64_t>(i);
    pair.preferred = reference.mean;
    pair.dispreferred = reference.mean;
    for (Eigen::Index t = 0; t < reference.mean.rows(); ++t)
      for (Eigen::Index d = 0; d < 2; ++d) {
        pair.preferred(t, d) += 0.2 * reference.std(t, d) * rng.gaussian();
        pair.dispreferred(t, d) += 1.5 * reference.std(t, d) * rng.gaussian();
      }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

double mean_loss(const std::vector<PreferencePair>& pairs,
                 const policy::ActionSequencePolicy& policy,
                 const policy::ActionSequencePolicy& reference, double alpha) {
  double total = 0.0;
  for (const PreferencePair& pair : pairs) total += dpo_loss(pair, policy, reference, alpha);
  return total / static_cast<double>(pairs.size());
}

bool identical(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("reference fit matches demo action statistics", "[dpo]") {
  env::Embodiment small = env::embodiment_by_name("small");
  // Tiny actions far from walls and objects: the realized displacement is
  // exactly the requested action, so the fit is checkable in closed form.
  Eigen::MatrixXd actions(6, 2);
  Rng rng(7);
  for (int t = 0; t < 6; ++t)
    for (int d = 0; d < 2; ++d) actions(t, d) = 0.002 * rng.uniform(-1.0, 1.0);
  env::Trajectory demo = env::rollout(actions, env::TaskKind::Group, small, 5);

  policy::ActionSequencePolicy reference = fit_reference({demo}, 0.03, 11);
  REQUIRE(reference.mean.rows() == 6);
  REQUIRE((reference.mean - actions).cwiseAbs().maxCoeff() < 1e-15);
  REQUIRE((reference.std.array() == 0.03).all());

  // Log-density at the mean is the pure normalization term.
  double expected = 0.0;
  for (int t = 0; t < 6; ++t)
    for (int d = 0; d < 2; ++d) expected -= std::log(std::sqrt(2.0 * M_PI) * 0.03);
  REQUIRE(log_density(reference, reference.mean) == Catch::Approx(expected).margin(1e-12));

  // Two identical demos: sample std is zero, floored at noise_scale.
  policy::ActionSequencePolicy two = fit_reference({demo, demo}, 0.05, 11);
  REQUIRE(identical(two.mean, reference.mean));
  REQUIRE((two.std.array() == 0.05).all());

  REQUIRE_THROWS_AS(fit_reference({}, 0.02, 0), EmptyDemos);
  REQUIRE_THROWS_AS(fit_reference({demo}, 0.0, 0), InvalidConfig);
  env::Trajectory shorter = env::rollout(actions.topRows(3), env::TaskKind::Group, small, 5);
  REQUIRE_THROWS_AS(fit_reference({demo, shorter}, 0.02, 0), DimensionMismatch);
}

TEST_CASE("log density guards shape and finiteness", "[dpo]") {
  policy::ActionSequencePolicy p = make_policy(4, 0.02, 3);
  REQUIRE_THROWS_AS(log_density(p, Eigen::MatrixXd::Zero(5, 2)), DimensionMismatch);
  Eigen::MatrixXd bad = p.mean;
  bad(1, 1) = std::nan("");
  REQUIRE_THROWS_AS(log_density(p, bad), NonFiniteDensity);
}

TEST_CASE("dpo loss is log 2 at the reference and for alpha zero", "[dpo]") {
  policy::ActionSequencePolicy reference = make_policy(5, 0.02, 21);
  std::vector<PreferencePair> pairs = make_pairs(reference, 4, 22);
  const double log2 = std::log(2.0);

  for (const PreferencePair& pair : pairs) {
    REQUIRE(dpo_loss(pair, reference, reference, 1.0) ==
            Catch::Approx(log2).margin(1e-12));
    REQUIRE(dpo_loss(pair, reference, reference, 7.3) ==
            Catch::Approx(log2).margin(1e-12));
  }

  policy::ActionSequencePolicy other = make_policy(5, 0.05, 23);
  for (const PreferencePair& pair : pairs)
    REQUIRE(dpo_loss(pair, other, reference, 0.0) == Catch::Approx(log2).margin(1e-12));
}

TEST_CASE("swapped-role dpo probabilities sum to one", "[dpo]") {
  policy::ActionSequencePolicy reference = make_policy(6, 0.03, 31);
  policy::ActionSequencePolicy tuned = make_policy(6, 0.02, 32);
  std::vector<PreferencePair> pairs = make_pairs(reference, 8, 33);
  for (const PreferencePair& pair : pairs) {
    PreferencePair swapped{pair.context_seed, pair.dispreferred, pair.preferred};
    double p = std::exp(-dpo_loss(pair, tuned, reference, 1.7));
    double q = std::exp(-dpo_loss(swapped, tuned, reference, 1.7));
    REQUIRE(p + q == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("analytic dpo gradient matches finite differences", "[dpo]") {
  // One GD epoch from the reference recovers the analytic mean-loss
  // gradient as (before - after) / lr; central differences of the mean
  // loss provide the oracle, coordinate by coordinate.
  const double lr = 1e-6;
  const double h = 1e-6;
  int checked = 0;
  for (std::uint64_t instance = 0; instance < 20; ++instance) {
    policy::ActionSequencePolicy reference = make_policy(3, 0.05, 100 + instance);
    std::vector<PreferencePair> pairs = make_pairs(reference, 3, 200 + instance);
    double alpha = 0.5 + 0.25 * static_cast<double>(instance % 5);

    DpoConfig config;
    config.alpha = alpha;
    config.learning_rate = lr;
    config.epochs = 1;
    policy::ActionSequencePolicy stepped = dpo_finetune(reference, pairs, config);
    Eigen::MatrixXd grad_mean = (reference.mean - stepped.mean) / lr;
    Eigen::MatrixXd grad_std = (reference.std - stepped.std) / lr;

    for (Eigen::Index t = 0; t < 3; ++t)
      for (Eigen::Index d = 0; d < 2; ++d) {
        auto fd = [&](bool on_std) {
          policy::ActionSequencePolicy plus = reference;
          policy::ActionSequencePolicy minus = reference;
          (on_std ? plus.std(t, d) : plus.mean(t, d)) += h;
          (on_std ? minus.std(t, d) : minus.mean(t, d)) -= h;
          return (mean_loss(pairs, plus, reference, alpha) -
                  mean_loss(pairs, minus, reference, alpha)) /
                 (2.0 * h);
        };
        double fd_mean = fd(false);
        double fd_std = fd(true);
        double scale_mean = std::max(std::abs(fd_mean), 1e-3);
        double scale_std = std::max(std::abs(fd_std), 1e-3);
        REQUIRE(std::abs(grad_mean(t, d) - fd_mean) / scale_mean < 1e-4);
        REQUIRE(std::abs(grad_std(t, d) - fd_std) / scale_std < 1e-4);
        ++checked;
      }
  }
  REQUIRE(checked == 20 * 6);
}

TEST_CASE("finetuning decreases the mean loss and favors preferred sequences",
          "[dpo]") {
  policy::ActionSequencePolicy reference = make_policy(8, 0.03, 41);
  std::vector<PreferencePair> pairs = make_pairs(reference, 16, 42);

  DpoConfig config;
  config.learning_rate = 1e-5;
  config.epochs = 50;
  double before = mean_loss(pairs, reference, reference, config.alpha);
  REQUIRE(before == Catch::Approx(std::log(2.0)).margin(1e-12));

  policy::ActionSequencePolicy tuned = dpo_finetune(reference, pairs, config);
  double after = mean_loss(pairs, tuned, reference, config.alpha);
  REQUIRE(after < before);

  // The first step from the reference raises preferred density on average.
  double gain = 0.0;
  for (const PreferencePair& pair : pairs)
    gain += log_density(tuned, pair.preferred) - log_density(reference, pair.preferred);
  REQUIRE(gain > 0.0);

  REQUIRE((tuned.std.array() >= kStdFloor).all());

  // Determinism and the zero-epoch identity.
  policy::ActionSequencePolicy again = dpo_finetune(reference, pairs, config);
  REQUIRE(identical(again.mean, tuned.mean));
  REQUIRE(identical(again.std, tuned.std));
  DpoConfig idle = config;
  idle.epochs = 0;
  policy::ActionSequencePolicy untouched = dpo_finetune(reference, pairs, idle);
  REQUIRE(identical(untouched.mean, reference.mean));
  REQUIRE(identical(untouched.std, reference.std));

  REQUIRE_THROWS_AS(dpo_finetune(reference, {}, config), InvalidConfig);
  DpoConfig bad = config;
  bad.alpha = 0.0;
  REQUIRE_THROWS_AS(dpo_finetune(reference, pairs, bad), InvalidConfig);
  bad = config;
  bad.learning_rate = 0.0;
  REQUIRE_THROWS_AS(dpo_finetune(reference, pairs, bad), InvalidConfig);
  bad = config;
  bad.epochs = -1;
  REQUIRE_THROWS_AS(dpo_finetune(reference, pairs, bad), InvalidConfig);
}

TEST_CASE("synthetic rankings agree with the labeling scorer", "[dpo]") {
  env::Embodiment small = env::embodiment_by_name("small");
  env::TaskKind task = env::TaskKind::Group;
  // Bias the reference toward the object cluster so sampled rollouts make
  // contact; two no-contact rollouts tie exactly on GT return.
  policy::ActionSequencePolicy reference = make_policy(env::kDefaultHorizon, 0.02, 51);
  reference.mean.array() += 0.008;

  policy::RewardScorer gt = [](const env::Trajectory& t) { return t.gt_rewards; };
  std::vector<PreferencePair> pairs = synth_rankings(reference, gt, task, small, 6, 99);
  REQUIRE(pairs.size() == 6);
  for (const PreferencePair& pair : pairs) {
    REQUIRE(!identical(pair.preferred, pair.dispreferred));
    double plus = env::gt_return(env::rollout(pair.preferred, task, small, pair.context_seed));
    double minus =
        env::gt_return(env::rollout(pair.dispreferred, task, small, pair.context_seed));
    REQUIRE(plus > minus);
  }

  std::vector<PreferencePair> again = synth_rankings(reference, gt, task, small, 6, 99);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    REQUIRE(again[i].context_seed == pairs[i].context_seed);
    REQUIRE(identical(again[i].preferred, pairs[i].preferred));
    REQUIRE(identical(again[i].dispreferred, pairs[i].dispreferred));
  }

  policy::RewardScorer constant = [](const env::Trajectory& t) {
    return RewardTrace(t.gt_rewards.size(), 1.0);
  };
  REQUIRE_THROWS_AS(synth_rankings(reference, constant, task, small, 1, 7),
                    RetryExhausted);
  REQUIRE_THROWS_AS(synth_rankings(reference, gt, task, small, 0, 7), InvalidConfig);
}

TEST_CASE("alignment score counts calibrated successes over fresh contexts",
          "[dpo]") {
  env::Embodiment small = env::embodiment_by_name("small");
  env::TaskKind task = env::TaskKind::Group;
  policy::ActionSequencePolicy idle = make_policy(env::kDefaultHorizon, 0.02, 61);

  policy::Calibration lenient;
  lenient.set(task, small.name, -1e9);
  REQUIRE(alignment_score(idle, task, small, lenient) == 1.0);

  policy::Calibration strict;
  strict.set(task, small.name, 1.0);  // returns are nonpositive, unreachable
  REQUIRE(alignment_score(idle, task, small, strict) == 0.0);

  double single = alignment_score(idle, task, small, lenient, 1, 77);
  REQUIRE((single == 0.0 || single == 1.0));

  REQUIRE_THROWS_AS(alignment_score(idle, task, small, lenient, 0), InvalidConfig);
}
