#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmrl/agents.hpp"
#include "cmrl/envs.hpp"
#include "cmrl/rng.hpp"

namespace cmrl::objectives {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

enum class RewardScheme {
  kSeparate,
  kShared,
  kZeroUntilExploit,
  kMaxUntilExploit,
  kStDevUntilExploit,
  kMaxPlusStDevUntilExploit,
};

std::string to_string(RewardScheme s);
RewardScheme reward_scheme_from_string(const std::string& s);

// Whether explore rewards are shared per aligned step or per rollout total.
enum class Granularity { kPerStep, kPerEpisode };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);

// Training rewards for the rollouts acting at one aligned step. The exploit
// phase passes rewards through unchanged.
std::vector<double> apply_reward_scheme(RewardScheme scheme, envs::Phase phase,
                                        std::span<const double> env_rewards);

// Training rewards laid out like the batch records: explore[s][t][b] and
// exploit[t][b]. Non-acting entries are 0.
struct TrainingRewards {
  std::vector<std::vector<std::vector<double>>> explore;
  std::vector<std::vector<double>> exploit;
};

TrainingRewards shape_rewards(const envs::MetaEpisodeBatch& batch, RewardScheme scheme,
                              Granularity granularity = Granularity::kPerStep);

// Uniform derangement of [0, k) by rejection sampling.
std::vector<int> sample_derangement(int k, Rng& rng);

enum class DivergenceKind { kSymKL, kJS };

std::string to_string(DivergenceKind k);
DivergenceKind divergence_kind_from_string(const std::string& s);

struct DivergenceSpec {
  DivergenceKind kind = DivergenceKind::kJS;
  double lambda = 0.0;
  int derangements = 1;
};

double sym_kl(std::span<const double> p, std::span<const double> q);
double js(std::span<const double> p, std::span<const double> q);

// Row-wise divergence between p [B, A] on the graph and constant q [B, A];
// returns [B, 1].
NodeId divergence_rows(Graph& g, DivergenceKind kind, NodeId p, const Tensor& q);

// L_D estimated with spec.derangements sampled derangements: rollout k is
// replayed on rollout P(k)'s recorded explore inputs and compared with the
// cached distributions of P(k) at P(k)'s acting steps. Summed over rollouts,
// steps and derangements, averaged over the batch. Returns -1 when the
// divergence is undefined (fewer than two rollouts).
NodeId divergence_loss(Graph& g, const envs::MetaEpisodeBatch& batch, const agents::Network& net,
                       const DivergenceSpec& spec, Rng& rng);

}  // namespace cmrl::objectives
