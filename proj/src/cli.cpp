#include "cmrl/cli.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cmrl/checkpoint.hpp"
#include "cmrl/oracles.hpp"

namespace cmrl::cli {

namespace fs = std::filesystem;

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

ExperimentConfig resolve_or_usage(const KeyValues& kv) {
  try {
    return resolve_config(kv);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void apply_all(KeyValues& kv, const CommonOptions& opts) {
  try {
    for (const auto& o : opts.overrides) apply_override(kv, o);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (opts.seed) kv["train.seed"] = std::to_string(*opts.seed);
}

// A runnable policy together with the configuration it acts under.
struct Source {
  std::string name;
  trainer::TrainConfig cfg;
  std::int64_t update = 0;
  eval::BatchRunner run;
};

Source open_source(const std::string& source, const CommonOptions& opts) {
  Source s;
  s.name = source;
  if (source.rfind("scripted:", 0) == 0) {
    oracles::ScriptSpec spec;
    try {
      spec = oracles::parse_script_spec(source);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    s.cfg = load_experiment(opts).train;
    const envs::EnvClass env(s.cfg.env);
    std::shared_ptr<oracles::ScriptedAgent> agent;
    try {
      agent = std::make_shared<oracles::ScriptedAgent>(env, s.cfg.k_explore, spec.explore, spec.exploit);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const envs::MetaEpisodeConfig mcfg = s.cfg.meta_config();
    const envs::MdpSpec mdp = env.spec();
    s.run = [agent, mcfg, mdp](std::span<const envs::Task* const> tasks, Rng& rng) {
      return envs::run_meta_episodes(mcfg, mdp, tasks, *agent, rng);
    };
    return s;
  }

  auto ck = std::make_shared<Checkpoint>(load_checkpoint(source));
  if (ck->config.empty()) throw std::runtime_error("checkpoint " + source + " stores no configuration");
  s.cfg = resolve_config(parse_key_values(ck->config, source + "/manifest.json")).train;
  const std::string fp = envs::EnvClass(s.cfg.env).fingerprint();
  if (fp != ck->env_fingerprint) {
    throw std::runtime_error("checkpoint " + source + " fingerprint " + ck->env_fingerprint +
                             " does not match its configuration (" + fp + ")");
  }
  if (opts.config) {
    const std::string want = envs::EnvClass(load_experiment(opts).train.env).fingerprint();
    if (want != fp) {
      throw std::runtime_error("environment mismatch: checkpoint " + source + " is " + fp + ", config is " +
                               want);
    }
  }
  s.update = ck->update;
  eval::BatchRunner inner = eval::neural_runner(ck->params, s.cfg);
  s.run = [ck, inner](std::span<const envs::Task* const> tasks, Rng& rng) { return inner(tasks, rng); };
  return s;
}

}  // namespace

ExperimentConfig load_experiment(const CommonOptions& opts) {
  KeyValues kv;
  if (opts.config) {
    if (!fs::exists(*opts.config)) throw std::runtime_error("config file not found: " + opts.config->string());
    try {
      kv = read_config_file(*opts.config);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  apply_all(kv, opts);
  return resolve_or_usage(kv);
}

fs::path cmd_train(const CommonOptions& opts, const std::optional<fs::path>& resume) {
  ExperimentConfig cfg;
  fs::path dir;
  if (resume) {
    if (opts.config) throw UsageError("--resume takes its configuration from the checkpoint; drop --config");
    const Checkpoint ck = load_checkpoint(*resume);
    KeyValues kv = parse_key_values(ck.config, resume->string() + "/manifest.json");
    apply_all(kv, opts);
    cfg = resolve_or_usage(kv);
    dir = opts.out ? *opts.out : resume->parent_path();
  } else {
    cfg = load_experiment(opts);
    dir = opts.out ? *opts.out : fs::path(cfg.out_dir);
  }
  cfg.out_dir = dir.string();
  cfg.sweep_lr = {cfg.train.lr};
  cfg.sweep_lambda = {cfg.train.divergence.lambda};
  cfg.sweep_seeds = {cfg.train.seed};
  const std::string rendered = render_config(cfg);
  if (!resume && fs::exists(dir / "metrics.csv")) {
    throw std::runtime_error("refusing to overwrite existing run in " + dir.string());
  }
  write_file(dir / "config.cfg", rendered);

  trainer::TrainOptions topts;
  topts.out_dir = dir;
  topts.resume = resume;
  topts.resolved_config = rendered;
  topts.verbose = opts.verbose;
  trainer::train(cfg.train, topts);
  return dir;
}

std::vector<fs::path> cmd_sweep(const CommonOptions& opts) {
  const ExperimentConfig base = load_experiment(opts);
  if (base.sweep_lr.empty() || base.sweep_lambda.empty() || base.sweep_seeds.empty()) {
    throw UsageError("sweep axes must be non-empty");
  }
  const fs::path root = opts.out ? *opts.out : fs::path(base.out_dir);

  struct Point {
    double lr;
    double lambda;
    std::uint64_t seed;
    fs::path dir;
  };
  std::vector<Point> points;
  std::set<fs::path> dirs;
  for (double lr : base.sweep_lr) {
    for (double lambda : base.sweep_lambda) {
      for (std::uint64_t seed : base.sweep_seeds) {
        const fs::path dir =
            root / ("lr=" + shortest(lr) + "_div=" + shortest(lambda)) / ("seed=" + std::to_string(seed));
        if (!dirs.insert(dir).second) throw UsageError("sweep grid points share output directory " + dir.string());
        if (fs::exists(dir / "metrics.csv")) {
          throw std::runtime_error("sweep output directory already holds a run: " + dir.string());
        }
        points.push_back({lr, lambda, seed, dir});
      }
    }
  }

  std::vector<fs::path> runs;
  for (const Point& p : points) {
    ExperimentConfig cfg = base;
    cfg.train.lr = p.lr;
    cfg.train.divergence.lambda = p.lambda;
    cfg.train.seed = p.seed;
    cfg.train.validate();
    cfg.out_dir = p.dir.string();
    cfg.sweep_lr = {p.lr};
    cfg.sweep_lambda = {p.lambda};
    cfg.sweep_seeds = {p.seed};
    const std::string rendered = render_config(cfg);
    write_file(p.dir / "config.cfg", rendered);
    if (opts.verbose) std::cerr << "sweep: " << p.dir.string() << '\n';
    trainer::TrainOptions topts;
    topts.out_dir = p.dir;
    topts.resolved_config = rendered;
    topts.verbose = opts.verbose;
    trainer::train(cfg.train, topts);
    runs.push_back(p.dir);
  }

  const report::Report rep = report::build_report(runs);
  write_file(root / "sweep_summary.csv", report::sweep_summary_csv(rep));
  write_file(root / "report.csv", report::report_csv(rep));
  return runs;
}

EvalOutcome cmd_eval(const std::string& source, const CommonOptions& opts) {
  const Source s = open_source(source, opts);
  const int n = opts.n.value_or(1280);
  if (n < 1) throw UsageError("--n must be positive");
  EvalOutcome e;
  e.source = source;
  e.update = s.update;
  e.seed = opts.seed ? *opts.seed : eval::eval_seed(s.cfg.seed, s.update);
  e.result = eval::evaluate(envs::EnvClass(s.cfg.env), s.run, n, s.cfg.eval_batch_size, e.seed);
  if (opts.out) write_file(*opts.out, eval_csv(e));
  return e;
}

std::string eval_csv(const EvalOutcome& e) {
  std::ostringstream os;
  os.precision(10);
  os << "source,update,meta_episodes,seed,success_rate,mean_exploit_return,visited_goals\n";
  os << e.source << ',' << e.update << ',' << e.result.meta_episodes << ',' << e.seed << ','
     << e.result.success_rate << ',' << e.result.mean_exploit_return << ',' << e.result.visited_goals << '\n';
  return os.str();
}

HeatmapOutcome cmd_heatmap(const std::string& source_a, const std::optional<std::string>& source_b,
                           const CommonOptions& opts) {
  const int n = opts.n.value_or(40000);
  if (n < 1) throw UsageError("--n must be positive");
  const Source a = open_source(source_a, opts);
  std::optional<Source> b;
  if (source_b) {
    b = open_source(*source_b, opts);
    const std::string fa = envs::EnvClass(a.cfg.env).fingerprint();
    const std::string fb = envs::EnvClass(b->cfg.env).fingerprint();
    if (fa != fb) throw std::runtime_error("heatmap sources use different environments: " + fa + " vs " + fb);
  }
  // Both sources see the same task sequence.
  const std::uint64_t seed = opts.seed ? *opts.seed : stream_seed(a.cfg.seed, "heatmap");
  const envs::EnvClass env(a.cfg.env);
  HeatmapOutcome out;
  out.a = eval::visitation_heatmap(env, a.run, n, a.cfg.eval_batch_size, seed);
  const fs::path dir = opts.out ? *opts.out : fs::path("heatmap");
  write_file(dir / "heatmap_a.csv", eval::heatmap_csv(out.a));
  if (b) {
    out.b = eval::visitation_heatmap(env, b->run, n, b->cfg.eval_batch_size, seed);
    write_file(dir / "heatmap_b.csv", eval::heatmap_csv(*out.b));
    write_file(dir / "percent_change.csv", eval::percent_change_csv(out.a, *out.b));
  }
  return out;
}

report::Report cmd_report(const std::vector<fs::path>& run_dirs, const CommonOptions& opts) {
  if (run_dirs.empty()) throw UsageError("report needs at least one run directory");
  const report::Report rep = report::build_report(run_dirs);
  if (opts.out) {
    write_file(*opts.out / "report.csv", report::report_csv(rep));
    write_file(*opts.out / "report.txt", report::report_text(rep));
  }
  return rep;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concurrent meta-RL experiments: train, sweep, evaluate, heatmaps, reports", "cmrl"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;
  int n = 0;
  auto add_common = [&](CLI::App* sub, bool with_config, bool with_n) {
    if (with_config) {
      sub->add_option("--config", config_path, "Config file (section.key = value lines)");
      sub->add_option("--override", opts.overrides, "key=value applied after the config file (repeatable)")
          ->allow_extra_args(false);
    }
    sub->add_option("--out", out_path, "Output directory or file");
    sub->add_option("--seed", seed, "Root seed (train.seed, or the evaluation seed)");
    if (with_n) sub->add_option("--n", n, "Number of meta-episodes");
    sub->add_flag("--verbose,-v", opts.verbose, "Progress on stderr");
  };

  auto* train = app.add_subcommand("train", "Train one run");
  add_common(train, true, false);
  std::string resume;
  train->add_option("--resume", resume, "Continue from this checkpoint directory");

  auto* sweep = app.add_subcommand("sweep", "Train every (lr, divergence lambda, seed) grid point");
  add_common(sweep, true, false);

  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint or scripted agent");
  add_common(evalc, true, true);
  std::string source;
  evalc->add_option("checkpoint", source, "Checkpoint directory");
  std::string agent;
  evalc->add_option("--agent", agent, "scripted:<explore>[+<exploit>] instead of a checkpoint");

  auto* heat = app.add_subcommand("heatmap", "Goal visitation heatmaps and their percent change");
  add_common(heat, true, true);
  std::vector<std::string> heat_sources;
  heat->add_option("sources", heat_sources, "One or two checkpoints (or scripted agents)")->required();

  auto* rep = app.add_subcommand("report", "Consolidated table over run directories");
  add_common(rep, false, false);
  std::vector<std::string> run_dirs;
  rep->add_option("runs", run_dirs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }
  if (!config_path.empty()) opts.config = config_path;
  if (!out_path.empty()) opts.out = out_path;
  CLI::App* chosen = app.get_subcommands().front();
  if (chosen->count("--seed")) opts.seed = seed;
  if (chosen->get_option_no_throw("--n") && chosen->count("--n")) opts.n = n;

  try {
    if (train->parsed()) {
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      const fs::path dir = cmd_train(opts, from);
      out << "run: " << dir.string() << '\n';
    } else if (sweep->parsed()) {
      const auto runs = cmd_sweep(opts);
      const fs::path root = opts.out ? *opts.out : fs::path(load_experiment(opts).out_dir);
      out << runs.size() << " runs; summary in " << (root / "sweep_summary.csv").string() << '\n';
    } else if (evalc->parsed()) {
      if (source.empty() == agent.empty()) throw UsageError("eval needs exactly one of a checkpoint or --agent");
      out << eval_csv(cmd_eval(agent.empty() ? source : agent, opts));
    } else if (heat->parsed()) {
      if (heat_sources.size() > 2) throw UsageError("heatmap takes one or two sources");
      const std::optional<std::string> b =
          heat_sources.size() == 2 ? std::optional<std::string>(heat_sources[1]) : std::nullopt;
      const HeatmapOutcome h = cmd_heatmap(heat_sources[0], b, opts);
      out << "mean visitation frequency a: " << h.a.mean_frequency();
      if (h.b) out << ", b: " << h.b->mean_frequency();
      out << '\n';
    } else if (rep->parsed()) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      out << report::report_text(cmd_report(dirs, opts));
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace cmrl::cli
