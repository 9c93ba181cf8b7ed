#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmrl/agents.hpp"
#include "cmrl/checkpoint.hpp"
#include "cmrl/cli.hpp"
#include "cmrl/config.hpp"
#include "cmrl/envs.hpp"
#include "cmrl/eval.hpp"
#include "cmrl/objectives.hpp"
#include "cmrl/oracles.hpp"
#include "cmrl/report.hpp"
#include "cmrl/trainer.hpp"

#ifndef CMRL_CONFIG_DIR
#define CMRL_CONFIG_DIR "configs"
#endif

namespace fs = std::filesystem;
using namespace cmrl;

namespace {

// Collects the individual checks of one criterion.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    std::cout << "  [" << (ok ? "ok" : "failed") << "] " << what << '\n';
    all_ = all_ && ok;
  }
  bool passed() const { return all_; }

 private:
  bool all_ = true;
};

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Full-loss gradients for every architecture

trainer::TrainConfig toy_config(trainer::AgentKind kind) {
  trainer::TrainConfig cfg;
  cfg.env.kind = envs::EnvKind::kReacher;
  cfg.env.n = 2;
  cfg.env.horizon = 3;
  cfg.agent = kind;
  cfg.k_explore = 2;
  cfg.hidden = 4;
  cfg.meta_hidden = 3;
  cfg.exploit_hidden = 5;
  cfg.scheme = kind == trainer::AgentKind::kERL2 ? objectives::RewardScheme::kSeparate
                                                 : objectives::RewardScheme::kMaxUntilExploit;
  cfg.divergence = {objectives::DivergenceKind::kJS, 0.1, 1};
  cfg.batch_size = 3;
  return cfg;
}

void criterion_gradients(Verdict& v) {
  for (auto kind : {trainer::AgentKind::kERL2, trainer::AgentKind::kCmrlCentral, trainer::AgentKind::kCmrlMeta}) {
    const trainer::TrainConfig cfg = toy_config(kind);
    const envs::EnvClass env(cfg.env);
    const agents::AgentConfig acfg = cfg.agent_config();
    Rng rng(17);

    // Random values everywhere, including the zero-initialized states.
    nn::ParamStore store = nn::init_params(agents::param_specs(acfg), rng);
    std::vector<std::string> names;
    std::vector<ad::Tensor> values;
    for (auto& e : store.entries()) {
      for (auto& x : e.value.vec()) x = uniform01(rng) - 0.5;
      names.push_back(e.name);
      values.push_back(e.value);
    }

    std::vector<std::unique_ptr<envs::Task>> tasks;
    std::vector<const envs::Task*> view;
    for (int i = 0; i < cfg.batch_size; ++i) {
      tasks.push_back(env.sample_task(rng));
      view.push_back(tasks.back().get());
    }
    envs::MetaEpisodeBatch batch;
    {
      ad::Graph g;
      const nn::BoundParams bound(g, store);
      const agents::Network net = agents::bind_network(g, bound, acfg);
      agents::NeuralAgent agent(g, net);
      batch = envs::run_meta_episodes(cfg.meta_config(), env.spec(), view, agent, rng);
    }
    // Dense rewards so every loss term carries signal in three steps.
    for (auto& stream : batch.explore) {
      for (auto& step : stream.steps) {
        for (std::size_t b = 0; b < step.env_reward.size(); ++b) {
          if (step.acting[b]) step.env_reward[b] = 2.0 * uniform01(rng) - 1.0;
        }
      }
    }
    for (auto& step : batch.exploit.steps) {
      for (std::size_t b = 0; b < step.env_reward.size(); ++b) {
        if (step.acting[b]) step.env_reward[b] = 2.0 * uniform01(rng) - 1.0;
      }
    }
    const auto rewards = objectives::shape_rewards(batch, cfg.scheme, cfg.granularity);
    const auto returns = trainer::batch_returns(batch, rewards, cfg.gamma);
    const trainer::LossCoefficients coef{0.5, 0.01, cfg.divergence.lambda, false};

    bool has_divergence = false;
    const ad::LossBuilder builder = [&](ad::Graph& g, std::span<const ad::NodeId> p) {
      std::map<std::string, ad::NodeId> ids;
      for (std::size_t i = 0; i < names.size(); ++i) ids[names[i]] = p[i];
      const nn::BoundParams bound(std::move(ids));
      const agents::Network net = agents::bind_network(g, bound, acfg);
      agents::NeuralAgent agent(g, net);
      agents::teacher_force(agent, batch);
      Rng derangement(23);
      const ad::NodeId div = objectives::divergence_loss(g, batch, net, cfg.divergence, derangement);
      has_divergence = div >= 0;
      return trainer::a2c_loss(g, batch, agent, returns, coef, div).total;
    };
    // Step 1e-5: several entries have gradients near 1e-7, where a 1e-6 step
    // leaves central differences dominated by roundoff of an O(1) loss.
    const auto res = ad::check_gradients_at(builder, values, 1e-5);
    std::string what = agents::to_string(acfg.arch) + ": max relative error " + fmt_g(res.max_relative_error) +
                       " over " + std::to_string(store.scalar_count()) + " parameters";
    what += has_divergence ? " (A2C + entropy + divergence)" : " (A2C + entropy; one stream, no divergence)";
    v.check(res.max_relative_error < 1e-4 && res.max_abs_analytic > 0.0, what);
  }
}

// ---------------------------------------------------------------------------
// 6. Property suites

std::vector<double> random_distribution(Rng& rng, int n) {
  std::vector<double> p(static_cast<std::size_t>(n));
  double s = 0.0;
  for (auto& x : p) {
    x = std::pow(uniform01(rng), 3.0) + 1e-6;
    s += x;
  }
  for (auto& x : p) x /= s;
  return p;
}

trainer::TrainConfig small_run_config() {
  trainer::TrainConfig cfg;
  cfg.env.n = 4;
  cfg.k_explore = 4;
  cfg.agent = trainer::AgentKind::kCmrlCentral;
  cfg.hidden = 8;
  cfg.exploit_hidden = 8;
  cfg.divergence = {objectives::DivergenceKind::kJS, 0.05, 1};
  cfg.batch_size = 16;
  cfg.total_updates = 20;
  cfg.checkpoint_every = 5;
  cfg.eval_meta_episodes = 32;
  cfg.eval_batch_size = 16;
  cfg.seed = 3;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void criterion_properties(Verdict& v, const fs::path& scratch) {
  Rng rng(5);

  {
    bool zero = true, symmetric = true, bounded = true;
    for (int i = 0; i < 2000; ++i) {
      const auto p = random_distribution(rng, 2 + i % 9);
      const auto q = random_distribution(rng, 2 + i % 9);
      zero = zero && std::abs(objectives::js(p, p)) < 1e-12 && std::abs(objectives::sym_kl(p, p)) < 1e-12;
      symmetric = symmetric && std::abs(objectives::js(p, q) - objectives::js(q, p)) < 1e-12 &&
                  std::abs(objectives::sym_kl(p, q) - objectives::sym_kl(q, p)) < 1e-12;
      bounded = bounded && objectives::js(p, q) <= std::log(2.0) + 1e-12;
    }
    const std::vector<double> a = {1.0, 0.0}, b = {0.0, 1.0};
    v.check(zero, "divergences vanish on identical distributions");
    v.check(symmetric, "JS and symmetric KL are symmetric");
    v.check(bounded && std::abs(objectives::js(a, b) - std::log(2.0)) < 1e-6, "JS <= ln 2, attained by disjoint supports");
  }

  {
    std::map<std::vector<int>, int> counts;
    bool fixed_point_free = true;
    const int draws = 30000;
    for (int i = 0; i < draws; ++i) {
      const auto d = objectives::sample_derangement(3, rng);
      for (int k = 0; k < 3; ++k) fixed_point_free = fixed_point_free && d[static_cast<std::size_t>(k)] != k;
      ++counts[d];
    }
    bool uniform = counts.size() == 2;
    for (const auto& [perm, c] : counts) uniform = uniform && std::abs(c / double(draws) - 0.5) < 0.02;
    v.check(fixed_point_free, "derangements have no fixed points");
    v.check(uniform, "both derangements of 3 appear with frequency 0.5 +- 0.02");
  }

  {
    using objectives::RewardScheme;
    bool max_ok = true, stdev_const = true, zero_ok = true, mixture = true, exploit_pass = true;
    for (int i = 0; i < 500; ++i) {
      std::vector<double> r(static_cast<std::size_t>(2 + i % 5));
      for (auto& x : r) x = 2.0 * uniform01(rng) - 1.0;
      const auto mx = objectives::apply_reward_scheme(RewardScheme::kMaxUntilExploit, envs::Phase::kExplore, r);
      const auto sd = objectives::apply_reward_scheme(RewardScheme::kStDevUntilExploit, envs::Phase::kExplore, r);
      const auto mix =
          objectives::apply_reward_scheme(RewardScheme::kMaxPlusStDevUntilExploit, envs::Phase::kExplore, r);
      const auto zr = objectives::apply_reward_scheme(RewardScheme::kZeroUntilExploit, envs::Phase::kExplore, r);
      const auto ex = objectives::apply_reward_scheme(RewardScheme::kMaxUntilExploit, envs::Phase::kExploit, r);
      const std::vector<double> flat(r.size(), r[0]);
      const auto sd_flat =
          objectives::apply_reward_scheme(RewardScheme::kStDevUntilExploit, envs::Phase::kExplore, flat);
      for (std::size_t k = 0; k < r.size(); ++k) {
        for (double x : r) max_ok = max_ok && mx[k] >= x;
        stdev_const = stdev_const && sd_flat[k] == 0.0;
        zero_ok = zero_ok && zr[k] == 0.0;
        mixture = mixture && std::abs(mix[k] - (mx[k] + sd[k])) < 1e-12;
        exploit_pass = exploit_pass && ex[k] == r[k];
      }
    }
    v.check(max_ok, "Max-Until-Exploit reward >= every rollout's reward");
    v.check(stdev_const, "StDev-Until-Exploit of equal rewards is 0");
    v.check(zero_ok, "Zero-Until-Exploit zeros every explore reward");
    v.check(mixture, "Max+StDev mixture equals the sum of its parts");
    v.check(exploit_pass, "exploit rewards pass through unchanged");
  }

  {
    envs::ColorChoiceTask task = envs::sample_color_choice(3, 7, 7, rng);
    task.start = {{0, 0}, envs::Heading::kWest};
    envs::ColorChoiceState s = task.start;
    const auto step = envs::color_choice_step(task, s, envs::kForward);
    v.check(s.pos == envs::Cell{0, 0} && s.heading == envs::Heading::kWest && !step.transition.done,
            "moving into a wall leaves the agent in place");

    bool single = true;
    const envs::EnvClass cc(envs::EnvConfig{envs::EnvKind::kColorChoice, 3, 7, 7, 15, {}, 10});
    for (int i = 0; i < 1000; ++i) {
      const auto t = envs::sample_color_choice(3, 7, 7, rng);
      single = single && std::count(t.hidden_rewards.begin(), t.hidden_rewards.end(), 1.0) == 1;
      const auto r = envs::sample_reacher(3, {}, rng);
      single = single && std::count(r.hidden_rewards.begin(), r.hidden_rewards.end(), 1.0) == 1;
      const auto m = envs::sample_monty_hall(10, rng);
      int gold = 0;
      for (int a = 1; a <= 10; ++a) gold += envs::monty_hall_step(m, a).reward > 0.0;
      single = single && gold == 1;
    }
    v.check(single, "every sampled task has exactly one rewarded goal");
    v.check(cc.spec().obs_dim == 4 * envs::kViewDepth * envs::kViewWidth,
            "Color-Choice observation is (N+1) x 15 x 3 = " + std::to_string(cc.spec().obs_dim));

    bool terminal = true;
    const auto m = envs::sample_monty_hall(10, rng);
    for (int a = 0; a <= 10; ++a) terminal = terminal && envs::monty_hall_step(m, a).done;
    v.check(terminal, "every Monty-Hall action ends the sub-episode");
  }

  {
    // Replaying the explore network on recorded inputs reproduces the
    // cached distributions bit for bit.
    bool equal = true;
    for (auto kind : {trainer::AgentKind::kCmrlCentral, trainer::AgentKind::kCmrlMeta}) {
      trainer::TrainConfig cfg = toy_config(kind);
      cfg.batch_size = 5;
      const envs::EnvClass env(cfg.env);
      const nn::ParamStore store = nn::init_params(agents::param_specs(cfg.agent_config()), rng);
      std::vector<std::unique_ptr<envs::Task>> tasks;
      std::vector<const envs::Task*> view;
      for (int i = 0; i < cfg.batch_size; ++i) {
        tasks.push_back(env.sample_task(rng));
        view.push_back(tasks.back().get());
      }
      ad::Graph g;
      const nn::BoundParams bound(g, store);
      const agents::Network net = agents::bind_network(g, bound, cfg.agent_config());
      agents::NeuralAgent agent(g, net);
      const auto batch = envs::run_meta_episodes(cfg.meta_config(), env.spec(), view, agent, rng);
      std::vector<std::vector<ad::Tensor>> streams(batch.explore.size());
      for (std::size_t k = 0; k < batch.explore.size(); ++k) {
        for (const auto& step : batch.explore[k].steps) streams[k].push_back(step.input);
      }
      const auto replay = agents::replay_explore(g, net, streams);
      for (std::size_t k = 0; k < replay.size(); ++k) {
        for (std::size_t t = 0; t < replay[k].size(); ++t) {
          equal = equal && g.value(replay[k][t]) == batch.explore[k].steps[t].probs;
        }
      }
    }
    v.check(equal, "replayed explore distributions equal the cached ones bit for bit");
  }

  {
    const trainer::TrainConfig cfg = small_run_config();
    const fs::path root = scratch / "properties";
    fs::remove_all(root);

    trainer::TrainOptions full;
    full.out_dir = root / "full";
    full.resolved_config = "# properties run";
    const trainer::Trainer a = trainer::train(cfg, full);

    trainer::TrainOptions again = full;
    again.out_dir = root / "again";
    const trainer::Trainer b = trainer::train(cfg, again);
    v.check(a.params() == b.params() && slurp(full.out_dir / "metrics.csv") == slurp(again.out_dir / "metrics.csv"),
            "two runs with the same seed are identical");

    trainer::TrainConfig other = cfg;
    other.seed = cfg.seed + 1;
    trainer::TrainOptions diff = full;
    diff.out_dir = root / "other";
    const trainer::Trainer c = trainer::train(other, diff);
    v.check(!(a.params() == c.params()), "a different seed gives different parameters");

    const Checkpoint ck = load_checkpoint(full.out_dir / "ckpt_10");
    save_checkpoint(ck, root / "copy");
    const Checkpoint back = load_checkpoint(root / "copy");
    v.check(back.params == ck.params && back.rng == ck.rng && back.update == ck.update && back.config == ck.config &&
                back.env_fingerprint == ck.env_fingerprint,
            "checkpoint save/load round-trips bit for bit");

    trainer::TrainOptions first = full;
    first.out_dir = root / "resumed";
    first.stop_after = 10;
    trainer::train(cfg, first);
    trainer::TrainOptions second = first;
    second.stop_after.reset();
    second.resume = first.out_dir / "ckpt_10";
    const trainer::Trainer r = trainer::train(cfg, second);
    v.check(r.params() == a.params() && r.update() == a.update() &&
                slurp(first.out_dir / "metrics.csv") == slurp(full.out_dir / "metrics.csv"),
            "stopping at update 10 and resuming matches the uninterrupted run");
    fs::remove_all(root);
  }
}

// ---------------------------------------------------------------------------
// 7. Oracles

void criterion_oracles(Verdict& v) {
  const auto mh = oracles::monty_hall_optimal_value(10, 10);
  v.check(std::abs(mh.exploit_return - 0.1) < 1e-12 && mh.success_probability == 1.0,
          "optimal 10-door value with 10 probes: return " + fmt(mh.exploit_return) + ", success " +
              fmt(mh.success_probability));
  bool dominated = mh.noop_dominates;
  for (std::size_t i = 1; i < mh.naive_meta_return.size(); ++i) {
    dominated = dominated && mh.naive_meta_return[i] < mh.naive_meta_return[0];
  }
  v.check(dominated, "NOOP dominates every probing policy under the summed objective (sweep-all " +
                         fmt(mh.naive_meta_return.back()) + " < 0)");

  const auto two = oracles::monty_hall_optimal_value(2, 1);
  v.check(two.success_probability == 1.0, "two doors, one probe: success 1");

  envs::EnvConfig ecfg;
  const envs::EnvClass env(ecfg);
  auto evaluate_script = [&](oracles::ScriptKind explore, oracles::ScriptKind exploit, int n) {
    oracles::ScriptedAgent agent(env, 10, explore, exploit);
    envs::MetaEpisodeConfig mcfg;
    mcfg.k_explore = 10;
    mcfg.horizon = 1;
    return eval::evaluate(env, eval::agent_runner(agent, mcfg, env.spec()), n, 1000, 99);
  };
  const auto uniform = evaluate_script(oracles::ScriptKind::kUniform, oracles::ScriptKind::kUniform, 100000);
  v.check(std::abs(uniform.success_rate - 1.0 / 11.0) < 0.01,
          "uniform policy success " + fmt(uniform.success_rate) + " vs 1/11 over 1e5 meta-episodes");
  const auto oracle = evaluate_script(oracles::ScriptKind::kSweep, oracles::ScriptKind::kOracle, 1280);
  v.check(oracle.success_rate == 1.0 && oracle.visited_goals == 10.0, "sweep + oracle exploit: success 1, 10 goals");
  const auto noop = evaluate_script(oracles::ScriptKind::kNoop, oracles::ScriptKind::kNoop, 1280);
  v.check(noop.success_rate == 0.0 && noop.visited_goals == 0.0, "NOOP-only: success 0, 0 goals");
}

// ---------------------------------------------------------------------------
// 2-5. Training reproductions

struct Model {
  std::string name;
  std::string config;  // file under the config directory
  std::vector<std::string> overrides;
};

struct Harness {
  fs::path workdir;
  fs::path configs;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  bool verbose = false;
};

int last_update(const fs::path& metrics) {
  if (!fs::exists(metrics)) return -1;
  const auto curve = eval::read_learning_curve(metrics);
  return curve.empty() ? -1 : static_cast<int>(curve.back().update);
}

// Trains every seed of a model, reusing runs whose stored configuration
// matches exactly and which reached the final update.
report::ModelRow train_model(const Harness& h, const Model& m) {
  std::vector<fs::path> dirs;
  for (std::uint64_t seed : h.seeds) {
    cli::CommonOptions opts;
    opts.config = h.configs / m.config;
    opts.overrides = m.overrides;
    opts.seed = seed;
    opts.out = h.workdir / m.name / ("seed=" + std::to_string(seed));
    opts.verbose = h.verbose;

    cli::ExperimentConfig cfg = cli::load_experiment(opts);
    cfg.out_dir = opts.out->string();
    cfg.sweep_lr = {cfg.train.lr};
    cfg.sweep_lambda = {cfg.train.divergence.lambda};
    cfg.sweep_seeds = {cfg.train.seed};
    const bool done = fs::exists(*opts.out / "config.cfg") &&
                      slurp(*opts.out / "config.cfg") == cli::render_config(cfg) &&
                      last_update(*opts.out / "metrics.csv") == cfg.train.total_updates;
    if (done) {
      std::cerr << "reusing " << opts.out->string() << '\n';
    } else {
      fs::remove_all(*opts.out);
      const auto start = std::chrono::steady_clock::now();
      std::cerr << "training " << opts.out->string() << '\n';
      cli::cmd_train(opts);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "  finished in " << fmt(s, 0) << " s\n";
    }
    dirs.push_back(*opts.out);
  }
  const report::Report rep = report::build_report(dirs);
  if (rep.rows.size() != 1) throw std::runtime_error("seeds of " + m.name + " resolved to different configs");
  return rep.rows.front();
}

std::string summary(const std::string& name, const report::ModelRow& r) {
  return name + ": final success " + fmt(r.final_success.mean, 1) + "% +- " + fmt(r.final_success.stdev, 1) +
         ", visited " + fmt(r.visited_goals.mean, 2) + ", AuC " + fmt(r.auc.mean, 1);
}

void criterion_monty_hall(Verdict& v, const Harness& h) {
  const auto rl2 = train_model(h, {"montyhall10-rl2", "montyhall10-rl2.cfg", {}});
  const auto erl2 = train_model(h, {"montyhall10-erl2", "montyhall10-erl2.cfg", {}});
  const auto max = train_model(h, {"montyhall10-cmrl-max", "montyhall10-cmrl-max.cfg", {}});
  const auto stdev = train_model(h, {"montyhall10-cmrl-stdev", "montyhall10-cmrl-stdev.cfg", {}});
  for (const auto& [name, row] : std::vector<std::pair<std::string, report::ModelRow>>{
           {"RL2", rl2}, {"ERL2", erl2}, {"CMRL Max", max}, {"CMRL StDev", stdev}}) {
    std::cout << "  " << summary(name, row) << '\n';
  }
  v.check(rl2.final_success.mean <= 5.0 && rl2.visited_goals.mean <= 0.5, "RL2 success <= 5% and visited <= 0.5");
  v.check(erl2.final_success.mean >= 40.0 && erl2.final_success.mean <= 80.0 && erl2.visited_goals.mean >= 6.0,
          "ERL2 success in [40%, 80%] and visited >= 6");
  // Index 3 of the Monty-Hall thresholds is 95%.
  const auto until95 = max.updates_until.at(3);
  v.check(max.final_success.mean >= 95.0 && max.visited_goals.mean >= 8.5 && until95 && *until95 <= 8000,
          "CMRL Max success >= 95%, visited >= 8.5, 95% reached by update 8000 (reached at " +
              (until95 ? std::to_string(*until95) : std::string("never")) + ")");
  v.check(max.auc.mean > erl2.auc.mean && erl2.auc.mean > rl2.auc.mean, "AuC ordering CMRL Max > ERL2 > RL2");
  v.check(stdev.auc.mean > erl2.auc.mean && erl2.auc.mean > rl2.auc.mean, "AuC ordering CMRL StDev > ERL2 > RL2");
}

void criterion_ablation(Verdict& v, const Harness& h) {
  const auto max = train_model(h, {"montyhall10-cmrl-max", "montyhall10-cmrl-max.cfg", {}});
  const auto stdev = train_model(h, {"montyhall10-cmrl-stdev", "montyhall10-cmrl-stdev.cfg", {}});
  const auto zero = train_model(h, {"montyhall10-cmrl-zero", "montyhall10-cmrl-zero.cfg", {}});
  const auto mix = train_model(h, {"montyhall10-cmrl-maxstdev", "montyhall10-cmrl-maxstdev.cfg", {}});
  const auto stdev_nodiv = train_model(h, {"montyhall10-cmrl-stdev-nodiv", "montyhall10-cmrl-stdev-nodiv.cfg", {}});
  const auto zero_nodiv = train_model(h, {"montyhall10-cmrl-zero-nodiv", "montyhall10-cmrl-zero-nodiv.cfg", {}});
  for (const auto& [name, row] : std::vector<std::pair<std::string, report::ModelRow>>{
           {"Max", max}, {"StDev", stdev}, {"Zero", zero}, {"Max+StDev", mix},
           {"StDev, no divergence", stdev_nodiv}, {"Zero, no divergence", zero_nodiv}}) {
    std::cout << "  " << summary(name, row) << '\n';
  }
  v.check(stdev_nodiv.final_success.mean < 50.0, "StDev-Until-Exploit without divergence ends below 50%");
  v.check(zero_nodiv.final_success.mean < 50.0, "Zero-Until-Exploit without divergence ends below 50%");
  const double best = std::max({max.final_success.mean, stdev.final_success.mean, zero.final_success.mean});
  v.check(std::abs(mix.final_success.mean - best) <= 5.0,
          "Max+StDev within 5 points of the best single scheme (" + fmt(best, 1) + "%)");
  // Direction of the ablation: the divergence loss must help.
  v.check(stdev.final_success.mean > stdev_nodiv.final_success.mean &&
              zero.final_success.mean > zero_nodiv.final_success.mean,
          "removing the divergence loss lowers final success");
}

void criterion_color_choice(Verdict& v, const Harness& h) {
  const std::vector<std::string> reduced = {"train.total_updates=15000"};
  const auto erl2 = train_model(h, {"colorchoice3-erl2-15k", "colorchoice3-erl2.cfg", reduced});
  const auto cmrl = train_model(h, {"colorchoice3-cmrl-max-15k", "colorchoice3-cmrl-max.cfg", reduced});
  std::cout << "  " << summary("ERL2", erl2) << '\n' << "  " << summary("CMRL Meta-LSTM", cmrl) << '\n';
  v.check(cmrl.auc.mean >= 1.25 * erl2.auc.mean && cmrl.auc.mean > 0.0, "CMRL AuC >= 1.25 x ERL2 AuC");
  v.check(cmrl.visited_goals.mean > erl2.visited_goals.mean, "CMRL visits more goals than ERL2 at the end");
}

void criterion_reacher(Verdict& v, const Harness& h) {
  const std::vector<std::string> reduced = {"train.total_updates=10000"};
  const auto rl2 = train_model(h, {"reacher3-rl2-10k", "reacher3-rl2.cfg", reduced});
  const auto erl2 = train_model(h, {"reacher3-erl2-10k", "reacher3-erl2.cfg", reduced});
  const auto cmrl = train_model(h, {"reacher3-cmrl-max-10k", "reacher3-cmrl-max.cfg", reduced});
  std::cout << "  " << summary("RL2", rl2) << '\n'
            << "  " << summary("ERL2", erl2) << '\n'
            << "  " << summary("CMRL Meta-LSTM", cmrl) << '\n';
  v.check(cmrl.final_success.mean > erl2.final_success.mean, "CMRL final success > ERL2");
  v.check(cmrl.final_success.mean > rl2.final_success.mean, "CMRL final success > RL2");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria; prints one PASS/FAIL line per criterion", "acceptance"};
  std::vector<int> criteria = {1, 2, 3, 4, 5, 6, 7};
  Harness h;
  h.workdir = "acceptance_runs";
  h.configs = CMRL_CONFIG_DIR;
  std::string workdir = h.workdir.string();
  std::string configs = h.configs.string();
  app.add_option("--criteria", criteria, "Comma-separated criteria to run (1-7)")->delimiter(',');
  app.add_option("--workdir", workdir, "Directory for training runs (reused when complete)");
  app.add_option("--configs", configs, "Directory holding the preset configs");
  app.add_flag("--verbose,-v", h.verbose, "Training progress on stderr");
  CLI11_PARSE(app, argc, argv);
  h.workdir = workdir;
  h.configs = configs;

  const std::map<int, std::pair<std::string, std::function<void(Verdict&)>>> table = {
      {1, {"full-loss gradients match finite differences", criterion_gradients}},
      {2, {"10-Monty-Hall reproduction", [&](Verdict& v) { criterion_monty_hall(v, h); }}},
      {3, {"10-Monty-Hall ablation directionality", [&](Verdict& v) { criterion_ablation(v, h); }}},
      {4, {"3-Color-Choice at reduced scale", [&](Verdict& v) { criterion_color_choice(v, h); }}},
      {5, {"3-Reacher ordering", [&](Verdict& v) { criterion_reacher(v, h); }}},
      {6, {"property suites", [&](Verdict& v) { criterion_properties(v, h.workdir); }}},
      {7, {"oracle consistency", criterion_oracles}},
  };

  bool all = true;
  for (int c : criteria) {
    const auto it = table.find(c);
    if (it == table.end()) {
      std::cerr << "unknown criterion " << c << '\n';
      return 2;
    }
    std::cout << "criterion " << c << ": " << it->second.first << '\n';
    Verdict v;
    try {
      it->second.second(v);
    } catch (const std::exception& e) {
      v.check(false, std::string("error: ") + e.what());
    }
    std::cout << "criterion " << c << ": " << (v.passed() ? "PASS" : "FAIL") << '\n' << std::flush;
    all = all && v.passed();
  }
  return all ? 0 : 1;
}
