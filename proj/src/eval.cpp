#include "cmrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cmrl/agents.hpp"

namespace cmrl::eval {

namespace {

template <typename Fn>
void for_each_batch(const envs::EnvClass& env, const BatchRunner& run, int n, int batch_size,
                    std::uint64_t seed, Fn&& fn) {
  if (n < 1 || batch_size < 1) throw std::invalid_argument("evaluation needs n >= 1 and batch >= 1");
  Rng env_rng = make_stream(seed, "env");
  Rng action_rng = make_stream(seed, "action-sampling");
  for (int done = 0; done < n;) {
    const int b = std::min(batch_size, n - done);
    std::vector<std::unique_ptr<envs::Task>> tasks;
    std::vector<const envs::Task*> view;
    for (int i = 0; i < b; ++i) {
      tasks.push_back(env.sample_task(env_rng));
      view.push_back(tasks.back().get());
    }
    const envs::MetaEpisodeBatch batch = run(view, action_rng);
    fn(batch, view);
    done += b;
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

EvalResult evaluate(const envs::EnvClass& env, const BatchRunner& run, int n, int batch_size,
                    std::uint64_t seed) {
  EvalResult r;
  double ret = 0.0;
  double visited = 0.0;
  long long success = 0;
  for_each_batch(env, run, n, batch_size, seed, [&](const envs::MetaEpisodeBatch& batch, auto&) {
    for (int b = 0; b < batch.batch_size; ++b) {
      const double x = batch.exploit_return[static_cast<std::size_t>(b)];
      ret += x;
      success += x > 0.0 ? 1 : 0;
      visited += static_cast<double>(batch.explore_goals[static_cast<std::size_t>(b)].size());
    }
  });
  r.meta_episodes = n;
  r.success_rate = static_cast<double>(success) / n;
  r.mean_exploit_return = ret / n;
  r.visited_goals = visited / n;
  return r;
}

BatchRunner neural_runner(const nn::ParamStore& params, const trainer::TrainConfig& cfg) {
  return [&params, cfg](std::span<const envs::Task* const> tasks, Rng& rng) {
    const envs::EnvClass env(cfg.env);
    ad::Graph g;
    const nn::BoundParams bound(g, params);
    const agents::Network net = agents::bind_network(g, bound, cfg.agent_config());
    agents::NeuralAgent agent(g, net);
    return envs::run_meta_episodes(cfg.meta_config(), env.spec(), tasks, agent, rng);
  };
}

BatchRunner agent_runner(envs::MetaAgent& agent, const envs::MetaEpisodeConfig& mcfg,
                         const envs::MdpSpec& spec) {
  return [&agent, mcfg, spec](std::span<const envs::Task* const> tasks, Rng& rng) {
    return envs::run_meta_episodes(mcfg, spec, tasks, agent, rng);
  };
}

EvalResult evaluate_checkpoint(const nn::ParamStore& params, const trainer::TrainConfig& cfg,
                               std::uint64_t seed, int n) {
  const envs::EnvClass env(cfg.env);
  return evaluate(env, neural_runner(params, cfg), n, cfg.eval_batch_size, seed);
}

std::uint64_t eval_seed(std::uint64_t run_seed, std::int64_t update) {
  return stream_seed(run_seed, "eval/" + std::to_string(update));
}

LearningCurve read_learning_curve(const std::filesystem::path& metrics_csv) {
  std::ifstream in(metrics_csv);
  if (!in) throw std::runtime_error("cannot open " + metrics_csv.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(metrics_csv.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error(metrics_csv.string() + " lacks column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_update = col("update");
  const std::size_t c_success = col("success_rate");
  const std::size_t c_visited = col("visited_goals");
  const std::size_t c_return = col("mean_exploit_return");
  LearningCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) throw std::runtime_error("malformed row in " + metrics_csv.string());
    curve.push_back({std::stoll(cells[c_update]), std::stod(cells[c_success]),
                     std::stod(cells[c_visited]), std::stod(cells[c_return])});
  }
  return curve;
}

double auc(const LearningCurve& curve, double interval) {
  if (curve.size() < 2) throw std::invalid_argument("auc needs at least two curve points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double dx = static_cast<double>(curve[i].update - curve[i - 1].update);
    if (dx <= 0) throw std::invalid_argument("curve updates must be strictly increasing");
    area += 0.5 * dx * 100.0 * (curve[i].success_rate + curve[i - 1].success_rate);
  }
  return area / interval;
}

std::optional<std::int64_t> updates_until(const LearningCurve& curve, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("updates_until threshold must be in (0, 1]");
  }
  for (const auto& p : curve) {
    if (p.success_rate >= threshold) return p.update;
  }
  return std::nullopt;
}

double VisitationMap::frequency(int x, int y) const {
  const auto i = static_cast<std::size_t>(y * width + x);
  if (occurrences.at(i) == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(visits[i]) / static_cast<double>(occurrences[i]);
}

double VisitationMap::mean_frequency() const {
  double sum = 0.0;
  int n = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double f = frequency(x, y);
      if (!std::isnan(f)) {
        sum += f;
        ++n;
      }
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / n;
}

VisitationMap visitation_heatmap(const envs::EnvClass& env, const BatchRunner& run, int n,
                                 int batch_size, std::uint64_t seed) {
  VisitationMap m;
  const auto shape = env.heatmap_shape();
  m.width = shape[0];
  m.height = shape[1];
  m.occurrences.assign(static_cast<std::size_t>(m.width * m.height), 0);
  m.visits.assign(m.occurrences.size(), 0);
  for_each_batch(env, run, n, batch_size, seed,
                 [&](const envs::MetaEpisodeBatch& batch, std::span<const envs::Task* const> tasks) {
                   for (int b = 0; b < batch.batch_size; ++b) {
                     const envs::Task& task = *tasks[static_cast<std::size_t>(b)];
                     const auto& seen = batch.explore_goals[static_cast<std::size_t>(b)];
                     for (int goal = 0; goal < task.goal_count(); ++goal) {
                       const auto bin = task.goal_bin(goal);
                       const auto i = static_cast<std::size_t>(bin[1] * m.width + bin[0]);
                       ++m.occurrences.at(i);
                       if (std::binary_search(seen.begin(), seen.end(), goal)) ++m.visits[i];
                     }
                   }
                 });
  return m;
}

std::vector<double> percent_change(const VisitationMap& a, const VisitationMap& b, double eps_bin) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("heatmaps have different bin layouts");
  }
  std::vector<double> out;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      const double fa = a.frequency(x, y);
      const double fb = b.frequency(x, y);
      if (std::isnan(fa) || std::isnan(fb)) {
        out.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        out.push_back(100.0 * (fa - fb) / std::max(fb, eps_bin));
      }
    }
  }
  return out;
}

std::string heatmap_csv(const VisitationMap& m) {
  std::ostringstream os;
  os << "bin_x,bin_y,occurrences,visits,frequency\n";
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const auto i = static_cast<std::size_t>(y * m.width + x);
      os << x << ',' << y << ',' << m.occurrences[i] << ',' << m.visits[i] << ','
         << fmt(m.frequency(x, y)) << '\n';
    }
  }
  return os.str();
}

std::string percent_change_csv(const VisitationMap& a, const VisitationMap& b) {
  const auto pc = percent_change(a, b);
  std::ostringstream os;
  os << "bin_x,bin_y,frequency_a,frequency_b,percent_change\n";
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      os << x << ',' << y << ',' << fmt(a.frequency(x, y)) << ',' << fmt(b.frequency(x, y)) << ','
         << fmt(pc[static_cast<std::size_t>(y * a.width + x)]) << '\n';
    }
  }
  return os.str();
}

}  // namespace cmrl::eval
