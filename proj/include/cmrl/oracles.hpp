#pragma once

#include <string>
#include <vector>

#include "cmrl/envs.hpp"
#include "cmrl/objectives.hpp"

// Scripted agents and exact Monty-Hall values. Deliberately independent of
// the agents and trainer modules so they can cross-check them.
namespace cmrl::oracles {

enum class ScriptKind { kNoop, kSweep, kOracle, kUniform };

std::string to_string(ScriptKind k);
ScriptKind script_kind_from_string(const std::string& s);

// Concurrent agent with K explore rollouts emitting fixed distributions:
//   noop    - the environment's no-op action
//   sweep   - rollout k opens door k (Monty-Hall only; extra rollouts no-op)
//   oracle  - exploit only: the rewarded door, read from the task (Monty-Hall)
//   uniform - every action equally likely
class ScriptedAgent final : public envs::MetaAgent {
 public:
  ScriptedAgent(const envs::EnvClass& env, int k_explore, ScriptKind explore, ScriptKind exploit);

  envs::AgentLayout layout() const override { return {true, k_explore_}; }
  void begin(std::span<const envs::Task* const> tasks) override;
  std::vector<envs::PolicyBatch> explore_step(std::span<const envs::Tensor> inputs,
                                              std::span<const std::uint8_t> live,
                                              const envs::StepContext& ctx) override;
  void end_explore() override {}
  envs::PolicyBatch exploit_step(const envs::Tensor& input, const envs::StepContext& ctx) override;

 private:
  envs::PolicyBatch policy(ScriptKind kind, int rollout) const;

  envs::EnvKind env_kind_;
  int actions_;
  int noop_;
  int k_explore_;
  ScriptKind explore_;
  ScriptKind exploit_;
  std::vector<const envs::Task*> tasks_;
};

// Parses "scripted:<explore>[+<exploit>]"; exploit defaults to explore.
struct ScriptSpec {
  ScriptKind explore = ScriptKind::kNoop;
  ScriptKind exploit = ScriptKind::kNoop;
};
ScriptSpec parse_script_spec(const std::string& spec);

struct MontyHallValue {
  double exploit_return = 0.0;       // optimal expected exploit return
  double success_probability = 0.0;  // best achievable exploit success
  // Naive objective summing every sub-episode's reward, per number of doors
  // probed during exploration (index 0 = probe nothing).
  std::vector<double> naive_meta_return;
  bool noop_dominates = false;  // probing nothing beats every probing policy
};

// Exact enumeration over the gold door. Explore probes distinct doors; the
// exploit step either opens the known or inferred gold door, or takes the
// better of guessing and NOOP. Under the exploit-only objective optimal
// exploration probes min(K, N) doors.
MontyHallValue monty_hall_optimal_value(int n_doors, int k_explore);

// One meta-episode of a scripted agent on a fixed task.
envs::MetaEpisodeBatch scripted_rollout(const envs::EnvClass& env, const envs::Task& task,
                                        int k_explore, ScriptKind explore, ScriptKind exploit,
                                        Rng& rng);

}  // namespace cmrl::oracles
