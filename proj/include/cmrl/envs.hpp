#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cmrl/autodiff.hpp"
#include "cmrl/rng.hpp"

namespace cmrl::envs {

using ad::Tensor;

struct MdpSpec {
  int action_count = 0;
  int obs_dim = 0;
  int horizon = 1;
  double discount = 0.99;
};

struct Transition {
  double reward = 0.0;
  bool done = false;
  int goal = -1;  // absorbing goal entered by this step, -1 if none
};

// Mutable state of one sub-episode.
class Episode {
 public:
  virtual ~Episode() = default;
  virtual void observe(std::span<double> out) const = 0;
  virtual Transition step(int action) = 0;
};

// One sampled task instance. Every start() yields the same initial state.
class Task {
 public:
  virtual ~Task() = default;
  virtual std::unique_ptr<Episode> start() const = 0;
  virtual int goal_count() const = 0;
  virtual int rewarded_goal() const = 0;
  // Heatmap bin of goal i.
  virtual std::array<int, 2> goal_bin(int goal) const = 0;
};

// ---------------------------------------------------------------------------
// N-Monty-Hall

struct MontyHallTask {
  int n_doors = 10;
  int gold_door = 0;
};

inline constexpr double kGoldReward = 0.1;
inline constexpr double kBombReward = -1.0;

// Action 0 is NOOP; action d+1 opens door d. Always terminal.
Transition monty_hall_step(const MontyHallTask& task, int action);

// ---------------------------------------------------------------------------
// N-Color-Choice

enum class Heading : int { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

struct ColorChoiceState {
  Cell pos;
  Heading heading = Heading::kNorth;
};

enum ColorChoiceAction : int { kForward = 0, kTurnLeft = 1, kTurnRight = 2 };

inline constexpr int kViewDepth = 15;
inline constexpr int kViewWidth = 3;

struct ColorChoiceTask {
  int height = 7;
  int width = 7;
  std::vector<Cell> goals;
  std::vector<double> hidden_rewards;  // exactly one +1, rest -1
  ColorChoiceState start;

  int channels() const { return static_cast<int>(goals.size()) + 1; }
  int obs_dim() const { return channels() * kViewDepth * kViewWidth; }
  bool inside(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
};

// Egocentric C x 15 x 3 view, flattened channel-major. Row r is distance r+1
// ahead; column 0/1/2 is lateral offset left/center/right. Channel i < N marks
// goal i, channel N marks cells outside the interior.
void color_choice_observe(const ColorChoiceTask& task, const ColorChoiceState& state,
                          std::span<double> out);

struct ColorChoiceStep {
  std::vector<double> obs;
  Transition transition;
};

ColorChoiceStep color_choice_step(const ColorChoiceTask& task, ColorChoiceState& state,
                                  int action);

// ---------------------------------------------------------------------------
// N-Reacher (planar two-link arm, discretized torques)

struct ReacherParams {
  double l1 = 0.5;
  double l2 = 0.5;
  double alpha = 1.0;
  double dt = 0.1;
  double damping = 0.05;
  double omega_max = 4.0;
  double hit_distance = 0.1;
};

struct ReacherState {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double omega1 = 0.0;
  double omega2 = 0.0;
};

struct ReacherTask {
  ReacherParams params;
  std::vector<std::array<double, 2>> targets;
  std::vector<double> hidden_rewards;
  ReacherState start;

  int obs_dim() const { return 8 + 2 * static_cast<int>(targets.size()); }
};

inline constexpr int kReacherActions = 9;
// Action a maps to torques ((a / 3) - 1, (a % 3) - 1).
std::array<int, 2> reacher_torques(int action);
std::array<double, 2> end_effector(const ReacherParams& p, const ReacherState& s);

void reacher_observe(const ReacherTask& task, const ReacherState& state, std::span<double> out);

struct ReacherStep {
  std::vector<double> obs;
  Transition transition;
};

// Time limits are enforced by the meta-episode runner, not here.
ReacherStep reacher_step(const ReacherTask& task, ReacherState& state, int action);

// ---------------------------------------------------------------------------
// Environment classes

enum class EnvKind { kMontyHall, kColorChoice, kReacher };

std::string to_string(EnvKind k);
EnvKind env_kind_from_string(const std::string& s);

struct EnvConfig {
  EnvKind kind = EnvKind::kMontyHall;
  int n = 10;              // doors / goals / targets
  int grid_height = 7;
  int grid_width = 7;
  int horizon = 1;
  ReacherParams reacher;
  int heatmap_bins = 10;   // reacher quantization per axis
};

class EnvClass {
 public:
  explicit EnvClass(EnvConfig cfg);

  const EnvConfig& config() const noexcept { return cfg_; }
  MdpSpec spec() const;
  // Action that keeps the agent out of every absorbing goal.
  int noop_action() const;
  std::string fingerprint() const;
  std::array<int, 2> heatmap_shape() const;

  std::unique_ptr<Task> sample_task(Rng& rng) const;

 private:
  EnvConfig cfg_;
};

MontyHallTask sample_monty_hall(int n_doors, Rng& rng);
ColorChoiceTask sample_color_choice(int n_goals, int height, int width, Rng& rng);
ReacherTask sample_reacher(int n_targets, const ReacherParams& params, Rng& rng);

std::unique_ptr<Task> make_task(MontyHallTask t);
std::unique_ptr<Task> make_task(ColorChoiceTask t);
std::unique_ptr<Task> make_task(ReacherTask t, int bins);

// ---------------------------------------------------------------------------
// Meta-episodes

struct MetaEpisodeConfig {
  int k_explore = 1;
  int k_exploit = 1;
  int horizon = 1;
  bool shared_initial_state = true;

  int k_total() const { return k_explore + k_exploit; }
};

// Step input layout: [obs | one-hot previous action | previous reward |
// terminal flag | phase].
inline int input_dim(const MdpSpec& spec) { return spec.obs_dim + spec.action_count + 3; }

enum class Phase : int { kExplore = 0, kExploit = 1 };

struct StepContext {
  Phase phase = Phase::kExplore;
  int sub_episode = 0;  // sequential explore sub-episode index
  int t = 0;            // step within the sub-episode
};

struct PolicyBatch {
  Tensor probs;               // [B, A]
  std::vector<double> value;  // [B]
};

struct AgentLayout {
  bool concurrent = false;
  int streams = 1;  // K_explore when concurrent, 1 otherwise
};

// Batched policy driven by the meta-episode runner.
class MetaAgent {
 public:
  virtual ~MetaAgent() = default;
  virtual AgentLayout layout() const = 0;
  virtual void begin(std::span<const Task* const> tasks) = 0;
  // One network step for every explore stream. live[k * B + b] is 0 for rows
  // of a sequential stream whose sub-episode already ended (state must hold).
  virtual std::vector<PolicyBatch> explore_step(std::span<const Tensor> inputs,
                                                std::span<const std::uint8_t> live,
                                                const StepContext& ctx) = 0;
  virtual void end_explore() = 0;
  virtual PolicyBatch exploit_step(const Tensor& input, const StepContext& ctx) = 0;
};

struct StepRecord {
  Tensor input;                       // [B, I]
  std::vector<std::uint8_t> acting;   // [B]
  std::vector<int> action;            // [B], -1 where not acting
  std::vector<double> env_reward;     // [B]
  std::vector<int> goal;              // [B]
  Tensor probs;                       // [B, A]
  std::vector<double> value;          // [B]
  int sub_episode = 0;
};

struct StreamRecord {
  std::vector<StepRecord> steps;
};

struct MetaEpisodeBatch {
  int batch_size = 0;
  int action_count = 0;
  int input_dim = 0;
  bool concurrent = false;
  std::vector<StreamRecord> explore;
  StreamRecord exploit;
  std::vector<double> exploit_return;            // [B]
  std::vector<std::vector<int>> explore_goals;   // [B] sorted unique goals

  int acting_steps() const;
};

// Runs one meta-episode per task. Concurrent agents explore with K_explore
// time-aligned rollouts for H+1 network steps (the extra step absorbs the
// terminal transition); finished rollouts are fed padding. Sequential agents
// run K_explore sub-episodes back to back on one stream, the first input of
// each sub-episode carrying the previous terminal transition.
MetaEpisodeBatch run_meta_episodes(const MetaEpisodeConfig& cfg, const MdpSpec& spec,
                                   std::span<const Task* const> tasks, MetaAgent& agent,
                                   Rng& action_rng);

int sample_action(std::span<const double> probs, Rng& rng);

}  // namespace cmrl::envs
