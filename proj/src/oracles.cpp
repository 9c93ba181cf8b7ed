#include "cmrl/oracles.hpp"

#include <algorithm>
#include <stdexcept>

namespace cmrl::oracles {

std::string to_string(ScriptKind k) {
  switch (k) {
    case ScriptKind::kNoop: return "noop";
    case ScriptKind::kSweep: return "sweep";
    case ScriptKind::kOracle: return "oracle";
    case ScriptKind::kUniform: return "uniform";
  }
  return "?";
}

ScriptKind script_kind_from_string(const std::string& s) {
  for (auto k : {ScriptKind::kNoop, ScriptKind::kSweep, ScriptKind::kOracle, ScriptKind::kUniform}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown scripted agent kind: " + s);
}

ScriptSpec parse_script_spec(const std::string& spec) {
  const std::string prefix = "scripted:";
  if (spec.rfind(prefix, 0) != 0) throw std::invalid_argument("not a scripted agent: " + spec);
  const std::string body = spec.substr(prefix.size());
  const auto plus = body.find('+');
  ScriptSpec out;
  out.explore = script_kind_from_string(body.substr(0, plus));
  out.exploit = plus == std::string::npos ? out.explore : script_kind_from_string(body.substr(plus + 1));
  return out;
}

ScriptedAgent::ScriptedAgent(const envs::EnvClass& env, int k_explore, ScriptKind explore,
                             ScriptKind exploit)
    : env_kind_(env.config().kind),
      actions_(env.spec().action_count),
      noop_(env.noop_action()),
      k_explore_(k_explore),
      explore_(explore),
      exploit_(exploit) {
  if (k_explore < 1) throw std::invalid_argument("scripted agent needs k_explore >= 1");
  const bool monty = env_kind_ == envs::EnvKind::kMontyHall;
  if ((explore == ScriptKind::kSweep || exploit == ScriptKind::kOracle) && !monty) {
    throw std::invalid_argument("scripted sweep/oracle agents exist only for monty_hall, not " +
                                envs::to_string(env_kind_));
  }
  if (explore == ScriptKind::kOracle) throw std::invalid_argument("oracle is an exploit-only script");
  if (exploit == ScriptKind::kSweep) throw std::invalid_argument("sweep is an explore-only script");
}

void ScriptedAgent::begin(std::span<const envs::Task* const> tasks) {
  tasks_.assign(tasks.begin(), tasks.end());
}

envs::PolicyBatch ScriptedAgent::policy(ScriptKind kind, int rollout) const {
  const int rows = static_cast<int>(tasks_.size());
  envs::PolicyBatch p{envs::Tensor::matrix(rows, actions_), std::vector<double>(tasks_.size(), 0.0)};
  for (int b = 0; b < rows; ++b) {
    switch (kind) {
      case ScriptKind::kNoop: p.probs.at(b, noop_) = 1.0; break;
      case ScriptKind::kUniform:
        for (int a = 0; a < actions_; ++a) p.probs.at(b, a) = 1.0 / actions_;
        break;
      case ScriptKind::kSweep:
        p.probs.at(b, rollout + 1 < actions_ ? rollout + 1 : noop_) = 1.0;
        break;
      case ScriptKind::kOracle:
        p.probs.at(b, tasks_[static_cast<std::size_t>(b)]->rewarded_goal() + 1) = 1.0;
        break;
    }
  }
  return p;
}

std::vector<envs::PolicyBatch> ScriptedAgent::explore_step(std::span<const envs::Tensor> inputs,
                                                           std::span<const std::uint8_t> /*live*/,
                                                           const envs::StepContext& /*ctx*/) {
  if (static_cast<int>(inputs.size()) != k_explore_) {
    throw std::invalid_argument("scripted agent got the wrong number of rollout inputs");
  }
  std::vector<envs::PolicyBatch> out;
  for (int k = 0; k < k_explore_; ++k) out.push_back(policy(explore_, k));
  return out;
}

envs::PolicyBatch ScriptedAgent::exploit_step(const envs::Tensor& /*input*/,
                                              const envs::StepContext& /*ctx*/) {
  return policy(exploit_, 0);
}

MontyHallValue monty_hall_optimal_value(int n_doors, int k_explore) {
  if (n_doors < 1 || k_explore < 0) throw std::invalid_argument("monty_hall_optimal_value: bad sizes");
  const int n = n_doors;
  MontyHallValue out;

  // Value of the exploit step for gold door g after probing doors [0, k).
  struct Exploit {
    double ret;
    double success;
  };
  auto exploit_after = [&](int k, int g) -> Exploit {
    if (g < k) return {envs::kGoldReward, 1.0};
    const int m = n - k;  // unprobed doors, gold among them
    if (m == 1) return {envs::kGoldReward, 1.0};
    // Guessing wins with probability 1/m; NOOP guarantees 0.
    const double guess = (envs::kGoldReward + (m - 1) * envs::kBombReward) / m;
    return {std::max(0.0, guess), 1.0 / m};
  };

  const int probes = std::min(k_explore, n);
  double ret = 0.0;
  double success = 0.0;
  for (int g = 0; g < n; ++g) {
    const Exploit e = exploit_after(probes, g);
    ret += e.ret;
    success += e.success;
  }
  // Averages over the uniformly placed gold door.
  out.exploit_return = ret / n;
  out.success_probability = success / n;

  for (int k = 0; k <= std::min(k_explore, n); ++k) {
    double total = 0.0;
    for (int g = 0; g < n; ++g) {
      double explore = 0.0;
      for (int d = 0; d < k; ++d) explore += d == g ? envs::kGoldReward : envs::kBombReward;
      total += explore + exploit_after(k, g).ret;
    }
    out.naive_meta_return.push_back(total / n);
  }
  out.noop_dominates = std::all_of(out.naive_meta_return.begin() + 1, out.naive_meta_return.end(),
                                   [&](double v) { return v < out.naive_meta_return[0]; });
  return out;
}

envs::MetaEpisodeBatch scripted_rollout(const envs::EnvClass& env, const envs::Task& task,
                                        int k_explore, ScriptKind explore, ScriptKind exploit,
                                        Rng& rng) {
  ScriptedAgent agent(env, k_explore, explore, exploit);
  envs::MetaEpisodeConfig mcfg;
  mcfg.k_explore = k_explore;
  mcfg.horizon = env.config().horizon;
  const envs::Task* one[] = {&task};
  return envs::run_meta_episodes(mcfg, env.spec(), one, agent, rng);
}

}  // namespace cmrl::oracles
