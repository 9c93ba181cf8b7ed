#include "doctest.h"

#include <cmath>

#include "cmrl/oracles.hpp"

using namespace cmrl;
using namespace cmrl::oracles;

namespace {

int successes(const envs::MetaEpisodeBatch& batch, const envs::Task& task) {
  int n = 0;
  for (const auto& step : batch.exploit.steps) {
    if (step.acting[0] && step.goal[0] == task.rewarded_goal()) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("optimal Monty-Hall values") {
  const MontyHallValue full = monty_hall_optimal_value(10, 10);
  CHECK(full.exploit_return == doctest::Approx(0.1));
  CHECK(full.success_probability == 1.0);
  CHECK(full.noop_dominates);
  REQUIRE(full.naive_meta_return.size() == 11);
  CHECK(full.naive_meta_return[0] == 0.0);
  // Probing every door hits nine bombs and the gold door, then exploits gold.
  CHECK(full.naive_meta_return[10] == doctest::Approx(-9.0 + 0.1 + 0.1));
  for (double v : full.naive_meta_return) CHECK(v <= 0.0);

  const MontyHallValue two = monty_hall_optimal_value(2, 1);
  CHECK(two.success_probability == 1.0);
  CHECK(two.exploit_return == doctest::Approx(0.1));

  const MontyHallValue none = monty_hall_optimal_value(10, 0);
  CHECK(none.exploit_return == 0.0);
  CHECK(none.success_probability == doctest::Approx(0.1));

  // Each probe reveals one more door, so success grows with the budget.
  double prev = 0.0;
  for (int k = 0; k <= 9; ++k) {
    const double p = monty_hall_optimal_value(10, k).success_probability;
    CHECK(p >= prev);
    prev = p;
  }
  CHECK_THROWS(monty_hall_optimal_value(0, 1));
}

TEST_CASE("script specs") {
  const ScriptSpec both = parse_script_spec("scripted:sweep+oracle");
  CHECK(both.explore == ScriptKind::kSweep);
  CHECK(both.exploit == ScriptKind::kOracle);
  const ScriptSpec one = parse_script_spec("scripted:noop");
  CHECK(one.exploit == ScriptKind::kNoop);
  CHECK_THROWS(parse_script_spec("sweep"));
  CHECK_THROWS(parse_script_spec("scripted:teleport"));
  CHECK(script_kind_from_string(to_string(ScriptKind::kUniform)) == ScriptKind::kUniform);
}

TEST_CASE("scripted rollouts") {
  const envs::EnvClass env({envs::EnvKind::kMontyHall, 10});
  Rng rng(6);

  SUBCASE("noop visits nothing") {
    const auto task = env.sample_task(rng);
    const auto batch = scripted_rollout(env, *task, 10, ScriptKind::kNoop, ScriptKind::kNoop, rng);
    CHECK(batch.explore_goals[0].empty());
    CHECK(successes(batch, *task) == 0);
  }
  SUBCASE("sweep opens door k in rollout k") {
    const auto task = env.sample_task(rng);
    const auto batch = scripted_rollout(env, *task, 10, ScriptKind::kSweep, ScriptKind::kOracle, rng);
    CHECK(batch.explore_goals[0].size() == 10);
    for (int k = 0; k < 10; ++k) CHECK(batch.explore[static_cast<std::size_t>(k)].steps[0].action[0] == k + 1);
    CHECK(successes(batch, *task) == 1);
  }
  SUBCASE("uniform exploit succeeds at chance") {
    int wins = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const auto task = env.sample_task(rng);
      wins += successes(scripted_rollout(env, *task, 1, ScriptKind::kNoop, ScriptKind::kUniform, rng), *task);
    }
    CHECK(std::abs(wins / double(n) - 1.0 / 11.0) < 0.005);
  }
}

TEST_CASE("scripts on other environments") {
  envs::EnvConfig cfg{envs::EnvKind::kReacher, 3};
  cfg.horizon = 10;
  const envs::EnvClass env(cfg);
  Rng rng(7);
  const auto task = env.sample_task(rng);
  const auto batch = scripted_rollout(env, *task, 2, ScriptKind::kNoop, ScriptKind::kNoop, rng);
  CHECK(batch.explore_goals[0].empty());
  CHECK(batch.exploit.steps.size() == 10);
  for (const auto& step : batch.exploit.steps) CHECK(step.action[0] == env.noop_action());
  CHECK_THROWS(ScriptedAgent(env, 2, ScriptKind::kSweep, ScriptKind::kNoop));
}
