#include "cmrl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "cmrl/checkpoint.hpp"
#include "cmrl/eval.hpp"

namespace cmrl::trainer {

namespace fs = std::filesystem;
using ad::Tensor;

std::string to_string(AgentKind k) {
  switch (k) {
    case AgentKind::kRL2: return "rl2";
    case AgentKind::kERL2: return "erl2";
    case AgentKind::kCmrlCentral: return "cmrl_central";
    case AgentKind::kCmrlMeta: return "cmrl_meta";
  }
  return "?";
}

AgentKind agent_kind_from_string(const std::string& s) {
  for (auto k : {AgentKind::kRL2, AgentKind::kERL2, AgentKind::kCmrlCentral, AgentKind::kCmrlMeta}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown agent kind: " + s);
}

agents::Architecture architecture_of(AgentKind k) {
  switch (k) {
    case AgentKind::kRL2:
    case AgentKind::kERL2: return agents::Architecture::kSequential;
    case AgentKind::kCmrlCentral: return agents::Architecture::kCentral;
    case AgentKind::kCmrlMeta: return agents::Architecture::kMeta;
  }
  return agents::Architecture::kSequential;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid config: " + what);
  };
  require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(total_updates >= 1, "total_updates must be >= 1");
  require(checkpoint_every >= 1, "checkpoint_every must be >= 1");
  require(keep_checkpoints >= 0, "keep_checkpoints must be >= 0");
  require(eval_meta_episodes >= 1 && eval_batch_size >= 1, "evaluation sizes must be >= 1");
  require(k_explore >= 1, "k_explore must be >= 1");
  require(lr > 0.0, "lr must be > 0");
  require(clip_norm > 0.0, "clip_norm must be > 0");
  require(divergence.lambda >= 0.0, "divergence lambda must be >= 0");
  require(divergence.derangements >= 1, "derangement count must be >= 1");
  require(hidden >= 1 && meta_hidden >= 1 && exploit_hidden >= 1, "hidden sizes must be >= 1");
}

agents::AgentConfig TrainConfig::agent_config() const {
  const envs::MdpSpec spec = envs::EnvClass(env).spec();
  agents::AgentConfig a;
  a.arch = architecture_of(agent);
  a.k_explore = k_explore;
  a.input_dim = envs::input_dim(spec);
  a.actions = spec.action_count;
  a.hidden = hidden;
  a.meta_hidden = meta_hidden;
  a.exploit_hidden = exploit_hidden;
  return a;
}

envs::MetaEpisodeConfig TrainConfig::meta_config() const {
  envs::MetaEpisodeConfig m;
  m.k_explore = k_explore;
  m.k_exploit = 1;
  m.horizon = env.horizon;
  return m;
}

// ---------------------------------------------------------------------------
// Returns and loss

std::vector<double> compute_returns(std::span<const double> rewards, double gamma,
                                    std::span<const std::uint8_t> terminal,
                                    std::span<const std::uint8_t> mask) {
  if (terminal.size() != rewards.size() || mask.size() != rewards.size()) {
    throw std::invalid_argument("compute_returns: rewards, terminal flags and mask differ in length");
  }
  std::vector<double> out(rewards.size(), 0.0);
  double g = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    if (!mask[i]) continue;
    g = terminal[i] ? rewards[i] : rewards[i] + gamma * g;
    out[i] = g;
  }
  return out;
}

objectives::TrainingRewards batch_returns(const envs::MetaEpisodeBatch& batch,
                                          const objectives::TrainingRewards& rewards,
                                          double gamma) {
  const auto ub = static_cast<std::size_t>(batch.batch_size);
  objectives::TrainingRewards out = rewards;
  // Exploit chain per meta-episode; its first acting return seeds every
  // explore chain of the same meta-episode.
  std::vector<double> exploit_head(ub, 0.0);
  for (std::size_t b = 0; b < ub; ++b) {
    double g = 0.0;
    for (std::size_t t = batch.exploit.steps.size(); t-- > 0;) {
      if (!batch.exploit.steps[t].acting[b]) {
        out.exploit[t][b] = 0.0;
        continue;
      }
      g = rewards.exploit[t][b] + gamma * g;
      out.exploit[t][b] = g;
    }
    exploit_head[b] = g;
  }
  for (std::size_t s = 0; s < batch.explore.size(); ++s) {
    const auto& steps = batch.explore[s].steps;
    for (std::size_t b = 0; b < ub; ++b) {
      double g = exploit_head[b];
      for (std::size_t t = steps.size(); t-- > 0;) {
        if (!steps[t].acting[b]) {
          out.explore[s][t][b] = 0.0;
          continue;
        }
        g = rewards.explore[s][t][b] + gamma * g;
        out.explore[s][t][b] = g;
      }
    }
  }
  return out;
}

LossGraph a2c_loss(Graph& g, const envs::MetaEpisodeBatch& batch, const agents::NeuralAgent& agent,
                   const objectives::TrainingRewards& returns, const LossCoefficients& coef,
                   NodeId divergence) {
  struct Item {
    const envs::StepRecord* rec;
    nn::PolicyNodes nodes;
    const std::vector<double>* ret;
  };
  std::vector<Item> items;
  const auto& explore_nodes = agent.explore_nodes();
  if (explore_nodes.size() != batch.explore.size()) {
    throw std::invalid_argument("a2c_loss: agent and batch disagree on stream count");
  }
  for (std::size_t s = 0; s < batch.explore.size(); ++s) {
    if (explore_nodes[s].size() != batch.explore[s].steps.size()) {
      throw std::invalid_argument("a2c_loss: agent and batch disagree on explore length");
    }
    for (std::size_t t = 0; t < batch.explore[s].steps.size(); ++t) {
      items.push_back({&batch.explore[s].steps[t], explore_nodes[s][t], &returns.explore[s][t]});
    }
  }
  if (agent.exploit_nodes().size() != batch.exploit.steps.size()) {
    throw std::invalid_argument("a2c_loss: agent and batch disagree on exploit length");
  }
  for (std::size_t t = 0; t < batch.exploit.steps.size(); ++t) {
    items.push_back({&batch.exploit.steps[t], agent.exploit_nodes()[t], &returns.exploit[t]});
  }

  const int rows = batch.batch_size;
  const int actions = batch.action_count;
  int count = 0;
  double adv_mean = 0.0;
  double adv_sq = 0.0;
  for (const auto& it : items) {
    for (int b = 0; b < rows; ++b) {
      const auto ubb = static_cast<std::size_t>(b);
      if (!it.rec->acting[ubb]) continue;
      const double a = (*it.ret)[ubb] - it.rec->value[ubb];
      adv_mean += a;
      adv_sq += a * a;
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("a2c_loss: batch has no unpadded steps");
  adv_mean /= count;
  const double adv_std = std::sqrt(std::max(adv_sq / count - adv_mean * adv_mean, 0.0));

  std::vector<NodeId> policy_terms;
  std::vector<NodeId> value_terms;
  std::vector<NodeId> neg_entropy_terms;
  for (const auto& it : items) {
    Tensor weight = Tensor::matrix(rows, actions);
    Tensor row_mask = Tensor::matrix(rows, actions);
    Tensor target = Tensor::matrix(rows, 1);
    Tensor value_mask = Tensor::matrix(rows, 1);
    bool any = false;
    for (int b = 0; b < rows; ++b) {
      const auto ubb = static_cast<std::size_t>(b);
      if (!it.rec->acting[ubb]) continue;
      any = true;
      double a = (*it.ret)[ubb] - it.rec->value[ubb];
      if (coef.normalize_advantages) a = (a - adv_mean) / (adv_std + 1e-8);
      weight.at(b, it.rec->action[ubb]) = a;
      for (int j = 0; j < actions; ++j) row_mask.at(b, j) = 1.0;
      target.at(b, 0) = (*it.ret)[ubb];
      value_mask.at(b, 0) = 1.0;
    }
    if (!any) continue;
    const NodeId log_p = g.log(it.nodes.probs);
    policy_terms.push_back(g.sum(g.mul(log_p, g.constant(std::move(weight)))));
    const NodeId err = g.sub(it.nodes.value, g.constant(std::move(target)));
    value_terms.push_back(g.sum(g.mul(g.square(err), g.constant(std::move(value_mask)))));
    neg_entropy_terms.push_back(
        g.sum(g.mul(g.mul(it.nodes.probs, log_p), g.constant(std::move(row_mask)))));
  }

  auto total_of = [&](const std::vector<NodeId>& terms) {
    return terms.size() == 1 ? terms[0] : g.sum(g.concat(terms, 0));
  };
  const double inv = 1.0 / static_cast<double>(count);
  const NodeId policy = g.scale(total_of(policy_terms), -inv);
  const NodeId value = g.scale(total_of(value_terms), inv);
  const NodeId entropy = g.scale(total_of(neg_entropy_terms), -inv);
  NodeId total = g.add(policy, g.scale(value, coef.value));
  total = g.sub(total, g.scale(entropy, coef.entropy));
  if (divergence >= 0 && coef.divergence != 0.0) {
    total = g.sub(total, g.scale(divergence, coef.divergence));
  }

  LossGraph out;
  out.total = total;
  out.steps = count;
  out.values.policy = g.value(policy).item();
  out.values.value = g.value(value).item();
  out.values.entropy = g.value(entropy).item();
  out.values.divergence = divergence >= 0 ? g.value(divergence).item() : 0.0;
  out.values.total = g.value(total).item();
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

nn::ParamStore fresh_params(const TrainConfig& cfg, Rng& init) {
  return nn::init_params(agents::param_specs(cfg.agent_config()), init);
}

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)), env_(cfg_.env), rng_(RngStreams::from_seed(cfg_.seed)) {
  cfg_.validate();
  params_ = fresh_params(cfg_, rng_.init);
}

Trainer::Trainer(TrainConfig cfg, nn::ParamStore params, RngStreams rng, std::int64_t update)
    : cfg_(std::move(cfg)), env_(cfg_.env), params_(std::move(params)), rng_(std::move(rng)),
      update_(update) {
  cfg_.validate();
  const auto specs = agents::param_specs(cfg_.agent_config());
  if (specs.size() != params_.size()) {
    throw std::runtime_error("checkpoint parameters do not match the configured agent");
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& e = params_.entries()[i];
    if (e.name != specs[i].name || e.value.shape() != specs[i].shape) {
      throw std::runtime_error("checkpoint parameter " + e.name + " does not match the configured agent");
    }
  }
}

UpdateStats Trainer::step() {
  const envs::MdpSpec spec = env_.spec();
  std::vector<std::unique_ptr<envs::Task>> tasks;
  std::vector<const envs::Task*> view;
  for (int i = 0; i < cfg_.batch_size; ++i) {
    tasks.push_back(env_.sample_task(rng_.env));
    view.push_back(tasks.back().get());
  }

  Graph g;
  const nn::BoundParams bound(g, params_);
  const agents::Network net = agents::bind_network(g, bound, cfg_.agent_config());
  agents::NeuralAgent agent(g, net);
  const envs::MetaEpisodeBatch batch =
      envs::run_meta_episodes(cfg_.meta_config(), spec, view, agent, rng_.action);

  const auto rewards = objectives::shape_rewards(batch, cfg_.scheme, cfg_.granularity);
  const auto returns = batch_returns(batch, rewards, cfg_.gamma);

  NodeId div = -1;
  if (cfg_.divergence.lambda > 0.0) {
    div = objectives::divergence_loss(g, batch, net, cfg_.divergence, rng_.derangement);
    if (div < 0 && !warned_divergence_) {
      std::cerr << "warning: divergence loss needs at least two concurrent rollouts; disabled\n";
      warned_divergence_ = true;
    }
  }
  const LossCoefficients coef{cfg_.value_coef, cfg_.entropy_coef, cfg_.divergence.lambda,
                              cfg_.normalize_advantages};
  const LossGraph loss = a2c_loss(g, batch, agent, returns, coef, div);
  ad::assert_finite(g.value(loss.total), "training loss");

  nn::GradMap grads = bound.collect(g.backward(loss.total));
  UpdateStats stats;
  stats.loss = loss.values;
  stats.grad_norm = nn::clip_global_norm(grads, cfg_.clip_norm);
  nn::adam_step(params_, grads, {cfg_.lr, 0.9, 0.999, 1e-8});
  for (const auto& e : params_.entries()) ad::assert_finite(e.value, "parameter " + e.name);
  ++update_;
  return stats;
}

// ---------------------------------------------------------------------------
// Metrics and the training loop

std::string metrics_header() {
  return "update,success_rate,mean_exploit_return,visited_goals,policy_loss,value_loss,entropy,"
         "divergence,wallclock_s";
}

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.update << ',' << r.success_rate << ',' << r.mean_exploit_return << ',' << r.visited_goals
     << ',' << r.loss.policy << ',' << r.loss.value << ',' << r.loss.entropy << ','
     << r.loss.divergence << ',' << r.wallclock_s;
  return os.str();
}

namespace {

std::string ckpt_name(std::int64_t update) { return "ckpt_" + std::to_string(update); }

// Keeps the header and rows up to `update` so a resumed run appends exactly
// what an uninterrupted run would have written.
void truncate_metrics(const fs::path& path, std::int64_t update) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot resume: missing " + path.string());
  std::string line;
  std::ostringstream kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept << line << '\n';
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= update) kept << line << '\n';
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept.str();
}

}  // namespace

Trainer train(const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  fs::create_directories(opts.out_dir);
  const fs::path metrics_path = opts.out_dir / "metrics.csv";
  const auto start = std::chrono::steady_clock::now();
  const std::string fingerprint = envs::EnvClass(cfg.env).fingerprint();

  auto save = [&](const Trainer& tr) {
    Checkpoint ck;
    ck.env_fingerprint = fingerprint;
    ck.update = tr.update();
    ck.rng = tr.rng().serialize();
    ck.config = opts.resolved_config;
    ck.params = tr.params();
    save_checkpoint(ck, opts.out_dir / ckpt_name(tr.update()));
  };
  auto evaluate_row = [&](const Trainer& tr, const LossBreakdown& loss) {
    const auto res = eval::evaluate_checkpoint(tr.params(), cfg, eval::eval_seed(cfg.seed, tr.update()),
                                               cfg.eval_meta_episodes);
    MetricsRow row;
    row.update = tr.update();
    row.success_rate = res.success_rate;
    row.mean_exploit_return = res.mean_exploit_return;
    row.visited_goals = res.visited_goals;
    row.loss = loss;
    if (cfg.log_wallclock) {
      row.wallclock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    return row;
  };

  std::optional<Trainer> trainer;
  std::ofstream metrics;
  if (opts.resume) {
    Checkpoint ck = load_checkpoint(*opts.resume, fingerprint);
    trainer.emplace(cfg, std::move(ck.params), RngStreams::deserialize(ck.rng), ck.update);
    truncate_metrics(metrics_path, ck.update);
    metrics.open(metrics_path, std::ios::app);
  } else {
    if (fs::exists(metrics_path)) {
      throw std::runtime_error("refusing to overwrite existing run in " + opts.out_dir.string());
    }
    trainer.emplace(cfg);
    metrics.open(metrics_path);
    metrics << metrics_header() << '\n';
    metrics << format_metrics_row(evaluate_row(*trainer, {})) << '\n';
    metrics.flush();
    save(*trainer);
  }
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());

  std::deque<std::int64_t> kept;
  LossBreakdown window;
  int window_n = 0;
  const std::int64_t stop = opts.stop_after ? std::min<std::int64_t>(*opts.stop_after, cfg.total_updates)
                                            : cfg.total_updates;
  while (trainer->update() < stop) {
    const UpdateStats st = trainer->step();
    window.policy += st.loss.policy;
    window.value += st.loss.value;
    window.entropy += st.loss.entropy;
    window.divergence += st.loss.divergence;
    window.total += st.loss.total;
    ++window_n;
    const std::int64_t u = trainer->update();
    if (u % cfg.checkpoint_every != 0 && u != cfg.total_updates) continue;
    const double n = window_n;
    const LossBreakdown mean{window.policy / n, window.value / n, window.entropy / n,
                             window.divergence / n, window.total / n};
    const MetricsRow row = evaluate_row(*trainer, mean);
    metrics << format_metrics_row(row) << '\n';
    metrics.flush();
    save(*trainer);
    if (opts.verbose) {
      std::cerr << "update " << u << " success " << row.success_rate << " visited "
                << row.visited_goals << " return " << row.mean_exploit_return << '\n';
    }
    kept.push_back(u);
    if (cfg.keep_checkpoints > 0 && static_cast<int>(kept.size()) > cfg.keep_checkpoints) {
      fs::remove_all(opts.out_dir / ckpt_name(kept.front()));
      kept.pop_front();
    }
    window = {};
    window_n = 0;
  }
  return std::move(*trainer);
}

}  // namespace cmrl::trainer
