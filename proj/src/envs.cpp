#include "cmrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace cmrl::envs {

// ---------------------------------------------------------------------------
// Monty-Hall

Transition monty_hall_step(const MontyHallTask& task, int action) {
  if (action < 0 || action > task.n_doors) {
    throw std::out_of_range("monty-hall action " + std::to_string(action) + " outside [0, " +
                            std::to_string(task.n_doors) + "]");
  }
  Transition tr;
  tr.done = true;
  if (action == 0) return tr;
  tr.goal = action - 1;
  tr.reward = tr.goal == task.gold_door ? kGoldReward : kBombReward;
  return tr;
}

MontyHallTask sample_monty_hall(int n_doors, Rng& rng) {
  if (n_doors < 1) throw std::invalid_argument("monty-hall needs at least one door");
  return {n_doors, uniform_int(rng, n_doors)};
}

namespace {

class MontyHallEpisode final : public Episode {
 public:
  explicit MontyHallEpisode(const MontyHallTask& t) : task_(t) {}
  void observe(std::span<double> out) const override { out[0] = 1.0; }
  Transition step(int action) override { return monty_hall_step(task_, action); }

 private:
  MontyHallTask task_;
};

class MontyHallTaskImpl final : public Task {
 public:
  explicit MontyHallTaskImpl(MontyHallTask t) : task_(t) {}
  std::unique_ptr<Episode> start() const override {
    return std::make_unique<MontyHallEpisode>(task_);
  }
  int goal_count() const override { return task_.n_doors; }
  int rewarded_goal() const override { return task_.gold_door; }
  std::array<int, 2> goal_bin(int goal) const override { return {goal, 0}; }

 private:
  MontyHallTask task_;
};

// ---------------------------------------------------------------------------
// Color-Choice

Cell forward_of(Heading h) {
  switch (h) {
    case Heading::kNorth: return {0, -1};
    case Heading::kEast: return {1, 0};
    case Heading::kSouth: return {0, 1};
    case Heading::kWest: return {-1, 0};
  }
  return {0, 0};
}

int goal_at(const ColorChoiceTask& task, Cell c) {
  for (std::size_t i = 0; i < task.goals.size(); ++i) {
    if (task.goals[i] == c) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

void color_choice_observe(const ColorChoiceTask& task, const ColorChoiceState& state,
                          std::span<double> out) {
  if (static_cast<int>(out.size()) != task.obs_dim()) {
    throw std::invalid_argument("color-choice observation buffer has wrong size");
  }
  std::fill(out.begin(), out.end(), 0.0);
  const Cell f = forward_of(state.heading);
  const Cell right{-f.y, f.x};
  const int wall = task.channels() - 1;
  const int plane = kViewDepth * kViewWidth;
  for (int d = 1; d <= kViewDepth; ++d) {
    for (int lat = -1; lat <= 1; ++lat) {
      const Cell c{state.pos.x + d * f.x + lat * right.x, state.pos.y + d * f.y + lat * right.y};
      const int cell = (d - 1) * kViewWidth + (lat + 1);
      if (!task.inside(c)) {
        out[static_cast<std::size_t>(wall * plane + cell)] = 1.0;
      } else if (const int g = goal_at(task, c); g >= 0) {
        out[static_cast<std::size_t>(g * plane + cell)] = 1.0;
      }
    }
  }
}

ColorChoiceStep color_choice_step(const ColorChoiceTask& task, ColorChoiceState& state,
                                  int action) {
  ColorChoiceStep out;
  switch (action) {
    case kForward: {
      const Cell f = forward_of(state.heading);
      const Cell next{state.pos.x + f.x, state.pos.y + f.y};
      if (task.inside(next)) state.pos = next;
      break;
    }
    case kTurnLeft:
      state.heading = static_cast<Heading>((static_cast<int>(state.heading) + 3) % 4);
      break;
    case kTurnRight:
      state.heading = static_cast<Heading>((static_cast<int>(state.heading) + 1) % 4);
      break;
    default:
      throw std::out_of_range("color-choice action " + std::to_string(action) +
                              " outside [0, 3)");
  }
  if (const int g = goal_at(task, state.pos); g >= 0) {
    out.transition = {task.hidden_rewards[static_cast<std::size_t>(g)], true, g};
  }
  out.obs.resize(static_cast<std::size_t>(task.obs_dim()));
  color_choice_observe(task, state, out.obs);
  return out;
}

ColorChoiceTask sample_color_choice(int n_goals, int height, int width, Rng& rng) {
  const int cells = height * width;
  if (n_goals < 1 || n_goals + 1 > cells) {
    throw std::invalid_argument("color-choice: cannot place " + std::to_string(n_goals) +
                                " goals and an agent in a " + std::to_string(height) + "x" +
                                std::to_string(width) + " grid");
  }
  ColorChoiceTask task;
  task.height = height;
  task.width = width;
  std::vector<int> free(static_cast<std::size_t>(cells));
  for (int i = 0; i < cells; ++i) free[static_cast<std::size_t>(i)] = i;
  // Partial Fisher-Yates: goals first, then the agent's start cell.
  for (int i = 0; i <= n_goals; ++i) {
    const int j = i + uniform_int(rng, cells - i);
    std::swap(free[static_cast<std::size_t>(i)], free[static_cast<std::size_t>(j)]);
  }
  for (int i = 0; i < n_goals; ++i) {
    const int c = free[static_cast<std::size_t>(i)];
    task.goals.push_back({c % width, c / width});
  }
  task.hidden_rewards.assign(static_cast<std::size_t>(n_goals), -1.0);
  task.hidden_rewards[static_cast<std::size_t>(uniform_int(rng, n_goals))] = 1.0;
  const int s = free[static_cast<std::size_t>(n_goals)];
  task.start.pos = {s % width, s / width};
  task.start.heading = static_cast<Heading>(uniform_int(rng, 4));
  return task;
}

namespace {

class ColorChoiceEpisode final : public Episode {
 public:
  explicit ColorChoiceEpisode(const ColorChoiceTask* t) : task_(t), state_(t->start) {}
  void observe(std::span<double> out) const override { color_choice_observe(*task_, state_, out); }
  Transition step(int action) override {
    return color_choice_step(*task_, state_, action).transition;
  }

 private:
  const ColorChoiceTask* task_;
  ColorChoiceState state_;
};

class ColorChoiceTaskImpl final : public Task {
 public:
  explicit ColorChoiceTaskImpl(ColorChoiceTask t) : task_(std::move(t)) {}
  std::unique_ptr<Episode> start() const override {
    return std::make_unique<ColorChoiceEpisode>(&task_);
  }
  int goal_count() const override { return static_cast<int>(task_.goals.size()); }
  int rewarded_goal() const override {
    return static_cast<int>(std::find(task_.hidden_rewards.begin(), task_.hidden_rewards.end(), 1.0) -
                            task_.hidden_rewards.begin());
  }
  std::array<int, 2> goal_bin(int goal) const override {
    const Cell c = task_.goals.at(static_cast<std::size_t>(goal));
    return {c.x, c.y};
  }

 private:
  ColorChoiceTask task_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Reacher

std::array<int, 2> reacher_torques(int action) {
  if (action < 0 || action >= kReacherActions) {
    throw std::out_of_range("reacher action " + std::to_string(action) + " outside [0, 9)");
  }
  return {action / 3 - 1, action % 3 - 1};
}

std::array<double, 2> end_effector(const ReacherParams& p, const ReacherState& s) {
  const double a = s.theta1;
  const double b = s.theta1 + s.theta2;
  return {p.l1 * std::cos(a) + p.l2 * std::cos(b), p.l1 * std::sin(a) + p.l2 * std::sin(b)};
}

void reacher_observe(const ReacherTask& task, const ReacherState& s, std::span<double> out) {
  if (static_cast<int>(out.size()) != task.obs_dim()) {
    throw std::invalid_argument("reacher observation buffer has wrong size");
  }
  const auto ee = end_effector(task.params, s);
  out[0] = std::cos(s.theta1);
  out[1] = std::sin(s.theta1);
  out[2] = std::cos(s.theta2);
  out[3] = std::sin(s.theta2);
  out[4] = s.omega1;
  out[5] = s.omega2;
  out[6] = ee[0];
  out[7] = ee[1];
  for (std::size_t i = 0; i < task.targets.size(); ++i) {
    out[8 + 2 * i] = task.targets[i][0];
    out[9 + 2 * i] = task.targets[i][1];
  }
}

ReacherStep reacher_step(const ReacherTask& task, ReacherState& s, int action) {
  const auto tau = reacher_torques(action);
  const ReacherParams& p = task.params;
  auto integrate = [&](double& omega, double& theta, int torque) {
    omega = omega * (1.0 - p.damping) + p.alpha * static_cast<double>(torque) * p.dt;
    omega = std::clamp(omega, -p.omega_max, p.omega_max);
    theta += omega * p.dt;
  };
  integrate(s.omega1, s.theta1, tau[0]);
  integrate(s.omega2, s.theta2, tau[1]);

  ReacherStep out;
  const auto ee = end_effector(p, s);
  for (std::size_t i = 0; i < task.targets.size(); ++i) {
    if (std::hypot(ee[0] - task.targets[i][0], ee[1] - task.targets[i][1]) < p.hit_distance) {
      out.transition = {task.hidden_rewards[i], true, static_cast<int>(i)};
      break;
    }
  }
  out.obs.resize(static_cast<std::size_t>(task.obs_dim()));
  reacher_observe(task, s, out.obs);
  return out;
}

ReacherTask sample_reacher(int n_targets, const ReacherParams& params, Rng& rng) {
  if (n_targets < 1) throw std::invalid_argument("reacher needs at least one target");
  ReacherTask task;
  task.params = params;
  const double pi = std::numbers::pi;
  task.start.theta1 = (2.0 * uniform01(rng) - 1.0) * pi;
  task.start.theta2 = (2.0 * uniform01(rng) - 1.0) * pi;
  const auto ee0 = end_effector(params, task.start);
  const double reach = params.l1 + params.l2;
  const double sep = 2.0 * params.hit_distance;
  int tries = 0;
  while (static_cast<int>(task.targets.size()) < n_targets) {
    if (++tries > 1000) {
      throw std::runtime_error("reacher: could not place " + std::to_string(n_targets) +
                               " separated targets after 1000 tries");
    }
    const double x = (2.0 * uniform01(rng) - 1.0) * reach;
    const double y = (2.0 * uniform01(rng) - 1.0) * reach;
    if (std::hypot(x, y) > reach) continue;
    if (std::hypot(x - ee0[0], y - ee0[1]) < sep) continue;
    bool ok = true;
    for (const auto& t : task.targets) {
      if (std::hypot(x - t[0], y - t[1]) < sep) ok = false;
    }
    if (ok) task.targets.push_back({x, y});
  }
  task.hidden_rewards.assign(static_cast<std::size_t>(n_targets), -1.0);
  task.hidden_rewards[static_cast<std::size_t>(uniform_int(rng, n_targets))] = 1.0;
  return task;
}

namespace {

class ReacherEpisode final : public Episode {
 public:
  explicit ReacherEpisode(const ReacherTask* t) : task_(t), state_(t->start) {}
  void observe(std::span<double> out) const override { reacher_observe(*task_, state_, out); }
  Transition step(int action) override { return reacher_step(*task_, state_, action).transition; }

 private:
  const ReacherTask* task_;
  ReacherState state_;
};

class ReacherTaskImpl final : public Task {
 public:
  ReacherTaskImpl(ReacherTask t, int bins) : task_(std::move(t)), bins_(bins) {}
  std::unique_ptr<Episode> start() const override {
    return std::make_unique<ReacherEpisode>(&task_);
  }
  int goal_count() const override { return static_cast<int>(task_.targets.size()); }
  int rewarded_goal() const override {
    return static_cast<int>(std::find(task_.hidden_rewards.begin(), task_.hidden_rewards.end(), 1.0) -
                            task_.hidden_rewards.begin());
  }
  std::array<int, 2> goal_bin(int goal) const override {
    const double reach = task_.params.l1 + task_.params.l2;
    const auto& t = task_.targets.at(static_cast<std::size_t>(goal));
    auto q = [&](double v) {
      const int b = static_cast<int>(std::floor((v + reach) / (2.0 * reach) * bins_));
      return std::clamp(b, 0, bins_ - 1);
    };
    return {q(t[0]), q(t[1])};
  }

 private:
  ReacherTask task_;
  int bins_;
};

}  // namespace

std::unique_ptr<Task> make_task(MontyHallTask t) { return std::make_unique<MontyHallTaskImpl>(t); }
std::unique_ptr<Task> make_task(ColorChoiceTask t) {
  return std::make_unique<ColorChoiceTaskImpl>(std::move(t));
}
std::unique_ptr<Task> make_task(ReacherTask t, int bins) {
  return std::make_unique<ReacherTaskImpl>(std::move(t), bins);
}

// ---------------------------------------------------------------------------
// Environment classes

std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::kMontyHall: return "monty_hall";
    case EnvKind::kColorChoice: return "color_choice";
    case EnvKind::kReacher: return "reacher";
  }
  return "?";
}

EnvKind env_kind_from_string(const std::string& s) {
  if (s == "monty_hall") return EnvKind::kMontyHall;
  if (s == "color_choice") return EnvKind::kColorChoice;
  if (s == "reacher") return EnvKind::kReacher;
  throw std::invalid_argument("unknown environment kind: " + s);
}

EnvClass::EnvClass(EnvConfig cfg) : cfg_(cfg) {
  if (cfg_.n < 1) throw std::invalid_argument("environment needs n >= 1");
  if (cfg_.horizon < 1) throw std::invalid_argument("environment needs horizon >= 1");
  if (cfg_.kind == EnvKind::kColorChoice && (cfg_.grid_height < 1 || cfg_.grid_width < 1)) {
    throw std::invalid_argument("color-choice grid must be non-empty");
  }
}

MdpSpec EnvClass::spec() const {
  MdpSpec s;
  s.horizon = cfg_.horizon;
  switch (cfg_.kind) {
    case EnvKind::kMontyHall:
      s.action_count = cfg_.n + 1;
      s.obs_dim = 1;
      break;
    case EnvKind::kColorChoice:
      s.action_count = 3;
      s.obs_dim = (cfg_.n + 1) * kViewDepth * kViewWidth;
      break;
    case EnvKind::kReacher:
      s.action_count = kReacherActions;
      s.obs_dim = 8 + 2 * cfg_.n;
      break;
  }
  return s;
}

int EnvClass::noop_action() const {
  switch (cfg_.kind) {
    case EnvKind::kMontyHall: return 0;
    case EnvKind::kColorChoice: return kTurnLeft;
    case EnvKind::kReacher: return 4;
  }
  return 0;
}

std::string EnvClass::fingerprint() const {
  std::ostringstream os;
  os << to_string(cfg_.kind) << ":n=" << cfg_.n << ":H=" << cfg_.horizon;
  if (cfg_.kind == EnvKind::kColorChoice) os << ":grid=" << cfg_.grid_height << "x" << cfg_.grid_width;
  if (cfg_.kind == EnvKind::kReacher) {
    const auto& r = cfg_.reacher;
    os << ":l=" << r.l1 << "," << r.l2 << ":alpha=" << r.alpha << ":dt=" << r.dt
       << ":damping=" << r.damping << ":wmax=" << r.omega_max << ":hit=" << r.hit_distance;
  }
  return os.str();
}

std::array<int, 2> EnvClass::heatmap_shape() const {
  switch (cfg_.kind) {
    case EnvKind::kMontyHall: return {cfg_.n, 1};
    case EnvKind::kColorChoice: return {cfg_.grid_width, cfg_.grid_height};
    case EnvKind::kReacher: return {cfg_.heatmap_bins, cfg_.heatmap_bins};
  }
  return {1, 1};
}

std::unique_ptr<Task> EnvClass::sample_task(Rng& rng) const {
  switch (cfg_.kind) {
    case EnvKind::kMontyHall: return make_task(sample_monty_hall(cfg_.n, rng));
    case EnvKind::kColorChoice:
      return make_task(sample_color_choice(cfg_.n, cfg_.grid_height, cfg_.grid_width, rng));
    case EnvKind::kReacher:
      return make_task(sample_reacher(cfg_.n, cfg_.reacher, rng), cfg_.heatmap_bins);
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Meta-episode runner

int sample_action(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (probs[a] > 0.0) last_positive = static_cast<int>(a);
    acc += probs[a];
    if (u < acc) return static_cast<int>(a);
  }
  return last_positive;
}

int MetaEpisodeBatch::acting_steps() const {
  int n = 0;
  auto count = [&](const StreamRecord& s) {
    for (const auto& step : s.steps) {
      for (auto a : step.acting) n += a;
    }
  };
  for (const auto& s : explore) count(s);
  count(exploit);
  return n;
}

namespace {

struct RowMemory {
  int prev_action = -1;
  double prev_reward = 0.0;
  bool terminal_flag = false;
};

struct InputWriter {
  int obs_dim;
  int actions;
  int width;

  void write(Tensor& x, int row, const Episode* ep, const RowMemory& m, Phase phase) const {
    auto r = x.data().subspan(static_cast<std::size_t>(row) * static_cast<std::size_t>(width),
                              static_cast<std::size_t>(width));
    std::fill(r.begin(), r.end(), 0.0);
    if (ep) ep->observe(r.first(static_cast<std::size_t>(obs_dim)));
    if (m.prev_action >= 0) r[static_cast<std::size_t>(obs_dim + m.prev_action)] = 1.0;
    r[static_cast<std::size_t>(obs_dim + actions)] = m.prev_reward;
    r[static_cast<std::size_t>(obs_dim + actions + 1)] = m.terminal_flag ? 1.0 : 0.0;
    r[static_cast<std::size_t>(obs_dim + actions + 2)] = phase == Phase::kExploit ? 1.0 : 0.0;
  }
};

void check_policy(const PolicyBatch& p, int batch, int actions) {
  if (p.probs.rank() != 2 || p.probs.dim(0) != batch || p.probs.dim(1) != actions ||
      static_cast<int>(p.value.size()) != batch) {
    throw std::invalid_argument("agent output shape " + ad::shape_str(p.probs.shape()) +
                                " does not match batch " + std::to_string(batch) + " x " +
                                std::to_string(actions) + " actions");
  }
}

StepRecord make_record(Tensor input, const PolicyBatch& p, int batch, int sub_episode) {
  StepRecord rec;
  rec.input = std::move(input);
  rec.acting.assign(static_cast<std::size_t>(batch), 0);
  rec.action.assign(static_cast<std::size_t>(batch), -1);
  rec.env_reward.assign(static_cast<std::size_t>(batch), 0.0);
  rec.goal.assign(static_cast<std::size_t>(batch), -1);
  rec.probs = p.probs;
  rec.value = p.value;
  rec.sub_episode = sub_episode;
  return rec;
}

}  // namespace

MetaEpisodeBatch run_meta_episodes(const MetaEpisodeConfig& cfg, const MdpSpec& spec,
                                   std::span<const Task* const> tasks, MetaAgent& agent,
                                   Rng& action_rng) {
  if (cfg.k_exploit != 1) throw std::invalid_argument("exactly one exploit sub-episode supported");
  if (cfg.k_explore < 1) throw std::invalid_argument("k_explore must be >= 1");
  if (!cfg.shared_initial_state) throw std::invalid_argument("sub-episodes must share the initial state");
  const int batch = static_cast<int>(tasks.size());
  const int actions = spec.action_count;
  const int width = input_dim(spec);
  const int horizon = cfg.horizon;
  const AgentLayout layout = agent.layout();
  if (layout.concurrent && layout.streams != cfg.k_explore) {
    throw std::invalid_argument("agent has " + std::to_string(layout.streams) +
                                " rollouts but the meta-episode explores with " +
                                std::to_string(cfg.k_explore));
  }
  const InputWriter writer{spec.obs_dim, actions, width};
  const auto ub = static_cast<std::size_t>(batch);

  MetaEpisodeBatch out;
  out.batch_size = batch;
  out.action_count = actions;
  out.input_dim = width;
  out.concurrent = layout.concurrent;
  out.exploit_return.assign(ub, 0.0);
  out.explore_goals.assign(ub, {});

  agent.begin(tasks);

  auto act = [&](StepRecord& rec, int b, Episode& ep, RowMemory& mem) -> bool {
    const auto row = rec.probs.data().subspan(
        static_cast<std::size_t>(b) * static_cast<std::size_t>(actions), static_cast<std::size_t>(actions));
    const int a = sample_action(row, action_rng);
    if (a >= actions) throw std::logic_error("sampled action out of range");
    const Transition tr = ep.step(a);
    rec.acting[static_cast<std::size_t>(b)] = 1;
    rec.action[static_cast<std::size_t>(b)] = a;
    rec.env_reward[static_cast<std::size_t>(b)] = tr.reward;
    rec.goal[static_cast<std::size_t>(b)] = tr.goal;
    mem.prev_action = a;
    mem.prev_reward = tr.reward;
    return tr.done;
  };

  std::vector<RowMemory> carry(ub);  // sequential: transition handed to the next sub-episode

  if (layout.concurrent) {
    const int k_streams = cfg.k_explore;
    std::vector<std::vector<std::unique_ptr<Episode>>> eps(static_cast<std::size_t>(k_streams));
    std::vector<std::vector<RowMemory>> mem(static_cast<std::size_t>(k_streams), std::vector<RowMemory>(ub));
    // 0 active, 1 terminal transition pending, 2 padding
    std::vector<std::vector<int>> status(static_cast<std::size_t>(k_streams), std::vector<int>(ub, 0));
    for (auto& row : eps) {
      for (int b = 0; b < batch; ++b) row.push_back(tasks[static_cast<std::size_t>(b)]->start());
    }
    out.explore.resize(static_cast<std::size_t>(k_streams));
    const std::vector<std::uint8_t> live(static_cast<std::size_t>(k_streams) * ub, 1);
    for (int t = 0; t <= horizon; ++t) {
      std::vector<Tensor> inputs;
      for (int k = 0; k < k_streams; ++k) {
        Tensor x = Tensor::matrix(batch, width);
        for (int b = 0; b < batch; ++b) {
          auto& st = status[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
          auto& m = mem[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
          if (st == 0) {
            writer.write(x, b, eps[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)].get(), m,
                         Phase::kExplore);
          } else if (st == 1) {
            m.terminal_flag = true;
            writer.write(x, b, nullptr, m, Phase::kExplore);
            st = 2;
          } else {
            writer.write(x, b, nullptr, RowMemory{-1, 0.0, true}, Phase::kExplore);
          }
        }
        inputs.push_back(std::move(x));
      }
      const auto outs = agent.explore_step(inputs, live, StepContext{Phase::kExplore, 0, t});
      if (static_cast<int>(outs.size()) != k_streams) {
        throw std::invalid_argument("agent returned wrong number of rollout outputs");
      }
      for (int k = 0; k < k_streams; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        check_policy(outs[uk], batch, actions);
        StepRecord rec = make_record(std::move(inputs[uk]), outs[uk], batch, 0);
        if (t < horizon) {
          for (int b = 0; b < batch; ++b) {
            const auto ubb = static_cast<std::size_t>(b);
            if (status[uk][ubb] != 0) continue;
            const bool done = act(rec, b, *eps[uk][ubb], mem[uk][ubb]);
            if (rec.goal[ubb] >= 0) out.explore_goals[ubb].push_back(rec.goal[ubb]);
            if (done || t + 1 == horizon) status[uk][ubb] = 1;
          }
        }
        out.explore[uk].steps.push_back(std::move(rec));
      }
    }
  } else {
    out.explore.resize(1);
    for (int j = 0; j < cfg.k_explore; ++j) {
      std::vector<std::unique_ptr<Episode>> eps;
      for (int b = 0; b < batch; ++b) eps.push_back(tasks[static_cast<std::size_t>(b)]->start());
      std::vector<std::uint8_t> live(ub, 1);
      for (int t = 0; t < horizon; ++t) {
        if (std::none_of(live.begin(), live.end(), [](auto v) { return v != 0; })) break;
        Tensor x = Tensor::matrix(batch, width);
        for (int b = 0; b < batch; ++b) {
          if (live[static_cast<std::size_t>(b)]) {
            writer.write(x, b, eps[static_cast<std::size_t>(b)].get(), carry[static_cast<std::size_t>(b)],
                         Phase::kExplore);
          }
        }
        const Tensor* in = &x;
        const auto outs = agent.explore_step(std::span<const Tensor>(in, 1), live,
                                             StepContext{Phase::kExplore, j, t});
        if (outs.size() != 1) throw std::invalid_argument("sequential agent must return one output");
        check_policy(outs[0], batch, actions);
        StepRecord rec = make_record(std::move(x), outs[0], batch, j);
        for (int b = 0; b < batch; ++b) {
          const auto ubb = static_cast<std::size_t>(b);
          if (!live[ubb]) continue;
          RowMemory& m = carry[ubb];
          const bool done = act(rec, b, *eps[ubb], m);
          m.terminal_flag = false;
          if (rec.goal[ubb] >= 0) out.explore_goals[ubb].push_back(rec.goal[ubb]);
          if (done || t + 1 == horizon) {
            live[ubb] = 0;
            m.terminal_flag = true;
          }
        }
        out.explore[0].steps.push_back(std::move(rec));
      }
    }
  }
  agent.end_explore();

  {
    std::vector<std::unique_ptr<Episode>> eps;
    for (int b = 0; b < batch; ++b) eps.push_back(tasks[static_cast<std::size_t>(b)]->start());
    std::vector<std::uint8_t> live(ub, 1);
    std::vector<RowMemory> mem = layout.concurrent ? std::vector<RowMemory>(ub) : carry;
    for (int t = 0; t < horizon; ++t) {
      if (std::none_of(live.begin(), live.end(), [](auto v) { return v != 0; })) break;
      Tensor x = Tensor::matrix(batch, width);
      for (int b = 0; b < batch; ++b) {
        const auto ubb = static_cast<std::size_t>(b);
        if (live[ubb]) {
          writer.write(x, b, eps[ubb].get(), mem[ubb], Phase::kExploit);
        } else {
          writer.write(x, b, nullptr, RowMemory{-1, 0.0, true}, Phase::kExploit);
        }
      }
      const PolicyBatch p = agent.exploit_step(x, StepContext{Phase::kExploit, 0, t});
      check_policy(p, batch, actions);
      StepRecord rec = make_record(std::move(x), p, batch, 0);
      for (int b = 0; b < batch; ++b) {
        const auto ubb = static_cast<std::size_t>(b);
        if (!live[ubb]) continue;
        const bool done = act(rec, b, *eps[ubb], mem[ubb]);
        mem[ubb].terminal_flag = false;
        out.exploit_return[ubb] += rec.env_reward[ubb];
        if (done) live[ubb] = 0;
      }
      out.exploit.steps.push_back(std::move(rec));
    }
  }

  for (auto& g : out.explore_goals) {
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
  }
  return out;
}

}  // namespace cmrl::envs
