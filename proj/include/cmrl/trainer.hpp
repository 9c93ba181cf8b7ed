#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmrl/agents.hpp"
#include "cmrl/envs.hpp"
#include "cmrl/nn.hpp"
#include "cmrl/objectives.hpp"
#include "cmrl/rng.hpp"

namespace cmrl::trainer {

using ad::Graph;
using ad::NodeId;

enum class AgentKind { kRL2, kERL2, kCmrlCentral, kCmrlMeta };

std::string to_string(AgentKind k);
AgentKind agent_kind_from_string(const std::string& s);
agents::Architecture architecture_of(AgentKind k);

struct TrainConfig {
  envs::EnvConfig env;
  AgentKind agent = AgentKind::kCmrlCentral;
  int k_explore = 10;
  int hidden = 16;
  int meta_hidden = 16;
  int exploit_hidden = 16;
  objectives::RewardScheme scheme = objectives::RewardScheme::kMaxUntilExploit;
  objectives::Granularity granularity = objectives::Granularity::kPerStep;
  objectives::DivergenceSpec divergence;
  double lr = 5e-4;
  double gamma = 0.99;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double clip_norm = 5.0;
  bool normalize_advantages = false;
  int batch_size = 128;
  int total_updates = 10000;
  int checkpoint_every = 250;
  int keep_checkpoints = 0;  // 0 keeps every checkpoint
  int eval_meta_episodes = 1280;
  int eval_batch_size = 128;
  std::uint64_t seed = 0;
  bool log_wallclock = false;

  void validate() const;
  agents::AgentConfig agent_config() const;
  envs::MetaEpisodeConfig meta_config() const;
};

// Discounted return-to-go along one chain of steps. A terminal flag ends
// accumulation at that step; masked (padded) steps get 0 and are skipped.
std::vector<double> compute_returns(std::span<const double> rewards, double gamma,
                                    std::span<const std::uint8_t> terminal,
                                    std::span<const std::uint8_t> mask);

// Returns laid out like objectives::TrainingRewards. Each explore stream is
// chained with the exploit sub-episode of its meta-episode, so exploit
// reward reaches explore decisions (the only signal under ZeroUntilExploit).
objectives::TrainingRewards batch_returns(const envs::MetaEpisodeBatch& batch,
                                          const objectives::TrainingRewards& rewards,
                                          double gamma);

struct LossBreakdown {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double divergence = 0.0;
  double total = 0.0;
};

struct LossCoefficients {
  double value = 0.5;
  double entropy = 0.01;
  double divergence = 0.0;
  bool normalize_advantages = false;
};

struct LossGraph {
  NodeId total = -1;
  LossBreakdown values;
  int steps = 0;  // unpadded steps the loss is normalized by
};

// A2C loss on the nodes the agent recorded while acting:
//   total = policy + c_v * value - c_e * entropy - lambda * divergence.
// `divergence` may be -1 (absent).
LossGraph a2c_loss(Graph& g, const envs::MetaEpisodeBatch& batch,
                   const agents::NeuralAgent& agent, const objectives::TrainingRewards& returns,
                   const LossCoefficients& coef, NodeId divergence);

struct UpdateStats {
  LossBreakdown loss;
  double grad_norm = 0.0;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  Trainer(TrainConfig cfg, nn::ParamStore params, RngStreams rng, std::int64_t update);

  UpdateStats step();

  const TrainConfig& config() const noexcept { return cfg_; }
  const envs::EnvClass& env() const noexcept { return env_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  const RngStreams& rng() const noexcept { return rng_; }
  std::int64_t update() const noexcept { return update_; }

 private:
  TrainConfig cfg_;
  envs::EnvClass env_;
  nn::ParamStore params_;
  RngStreams rng_;
  std::int64_t update_ = 0;
  bool warned_divergence_ = false;
};

struct MetricsRow {
  std::int64_t update = 0;
  double success_rate = 0.0;
  double mean_exploit_return = 0.0;
  double visited_goals = 0.0;
  LossBreakdown loss;  // mean over the updates since the previous row
  double wallclock_s = 0.0;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;  // checkpoint directory
  std::string resolved_config;                  // stored in every checkpoint
  std::optional<std::int64_t> stop_after;       // stop early (resume tests)
  bool verbose = false;
};

// Trains with evaluation at update 0 and every checkpoint_every updates
// (plus the final update), writing metrics.csv and ckpt_<update>/ into
// out_dir. Returns the final trainer state.
Trainer train(const TrainConfig& cfg, const TrainOptions& opts);

}  // namespace cmrl::trainer
