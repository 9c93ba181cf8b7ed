#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmrl/envs.hpp"
#include "cmrl/nn.hpp"
#include "cmrl/trainer.hpp"

namespace cmrl::eval {

struct EvalResult {
  double success_rate = 0.0;
  double mean_exploit_return = 0.0;
  double visited_goals = 0.0;
  int meta_episodes = 0;
};

// Runs a batch of meta-episodes on the given tasks.
using BatchRunner = std::function<envs::MetaEpisodeBatch(std::span<const envs::Task* const>, Rng&)>;

// Tasks and actions come from independent streams derived from `seed`.
EvalResult evaluate(const envs::EnvClass& env, const BatchRunner& run, int n, int batch_size,
                    std::uint64_t seed);

// Runner for a trained (or freshly initialized) parameter set.
BatchRunner neural_runner(const nn::ParamStore& params, const trainer::TrainConfig& cfg);
// Runner for any MetaAgent (scripted oracles).
BatchRunner agent_runner(envs::MetaAgent& agent, const envs::MetaEpisodeConfig& mcfg,
                         const envs::MdpSpec& spec);

// Sampled-action evaluation of n meta-episodes (default 1280 = 10 x 128).
EvalResult evaluate_checkpoint(const nn::ParamStore& params, const trainer::TrainConfig& cfg,
                               std::uint64_t seed, int n = 1280);

// Seed of the evaluation at a given update of a run.
std::uint64_t eval_seed(std::uint64_t run_seed, std::int64_t update);

struct CurvePoint {
  std::int64_t update = 0;
  double success_rate = 0.0;
  double visited_goals = 0.0;
  double mean_exploit_return = 0.0;
};

using LearningCurve = std::vector<CurvePoint>;

LearningCurve read_learning_curve(const std::filesystem::path& metrics_csv);

// Trapezoidal area under success rate (percent) over updates divided by the
// checkpoint interval.
double auc(const LearningCurve& curve, double interval = 250.0);

// First update whose success rate reaches threshold.
std::optional<std::int64_t> updates_until(const LearningCurve& curve, double threshold);

struct VisitationMap {
  int width = 0;
  int height = 0;
  std::vector<long long> occurrences;  // [y * width + x]
  std::vector<long long> visits;

  // NaN where the bin never held a goal.
  double frequency(int x, int y) const;
  // Mean frequency over bins with data.
  double mean_frequency() const;
};

VisitationMap visitation_heatmap(const envs::EnvClass& env, const BatchRunner& run, int n,
                                 int batch_size, std::uint64_t seed);

// 100 * (freq_a - freq_b) / max(freq_b, eps_bin); NaN where either is empty.
std::vector<double> percent_change(const VisitationMap& a, const VisitationMap& b,
                                   double eps_bin = 1e-3);

// CSV with header bin_x,bin_y,occurrences,visits,frequency ("NA" if empty).
std::string heatmap_csv(const VisitationMap& m);
std::string percent_change_csv(const VisitationMap& a, const VisitationMap& b);

}  // namespace cmrl::eval
