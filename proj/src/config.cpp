#include "cmrl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cmrl::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, v, "a number");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, v, "an unsigned integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string num(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += num(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

const std::vector<std::string>& key_order() {
  static const std::vector<std::string> keys = {
      "env.kind", "env.n", "env.horizon", "env.grid_height", "env.grid_width", "env.heatmap_bins",
      "env.reacher.l1", "env.reacher.l2", "env.reacher.alpha", "env.reacher.dt",
      "env.reacher.damping", "env.reacher.omega_max", "env.reacher.hit_distance",
      "agent.kind", "agent.k_explore", "agent.hidden", "agent.meta_hidden", "agent.exploit_hidden",
      "reward.scheme", "reward.granularity",
      "divergence.kind", "divergence.lambda", "divergence.derangements",
      "train.lr", "train.gamma", "train.entropy_coef", "train.value_coef", "train.clip_norm",
      "train.normalize_advantages", "train.batch_size", "train.total_updates",
      "train.checkpoint_every", "train.keep_checkpoints", "train.seed",
      "eval.meta_episodes", "eval.batch_size",
      "log.wallclock",
      "sweep.lr", "sweep.divergence_lambda", "sweep.seeds",
      "output.dir",
  };
  return keys;
}

}  // namespace

std::vector<std::string> known_keys() { return key_order(); }

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

void apply_override(KeyValues& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  std::string key = trim(assignment.substr(0, eq));
  if (key == "lr") key = "train.lr";
  if (key == "seed") key = "train.seed";
  kv[key] = trim(assignment.substr(eq + 1));
}

ExperimentConfig resolve_config(const KeyValues& kv) {
  const auto& keys = key_order();
  for (const auto& [k, v] : kv) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw std::invalid_argument("unknown config key '" + k + "'");
    }
  }
  auto has = [&](const char* k) { return kv.count(k) != 0; };
  auto get = [&](const char* k) { return kv.at(k); };

  ExperimentConfig out;
  trainer::TrainConfig& t = out.train;
  envs::EnvConfig& e = t.env;

  e.kind = has("env.kind") ? envs::env_kind_from_string(get("env.kind")) : envs::EnvKind::kMontyHall;
  const bool monty = e.kind == envs::EnvKind::kMontyHall;
  t.agent = has("agent.kind") ? trainer::agent_kind_from_string(get("agent.kind"))
                              : trainer::AgentKind::kCmrlCentral;
  const bool baseline = t.agent == trainer::AgentKind::kRL2 || t.agent == trainer::AgentKind::kERL2;

  // Defaults that depend on the environment and agent kind.
  e.n = monty ? 10 : 3;
  e.horizon = monty ? 1 : 15;
  t.total_updates = monty ? 10000 : e.kind == envs::EnvKind::kColorChoice ? 40000 : 20000;
  t.hidden = baseline ? 32 : 16;
  t.meta_hidden = 16;
  t.scheme = t.agent == trainer::AgentKind::kRL2    ? objectives::RewardScheme::kSeparate
             : t.agent == trainer::AgentKind::kERL2 ? objectives::RewardScheme::kZeroUntilExploit
                                                    : objectives::RewardScheme::kMaxUntilExploit;

  auto set_int = [&](const char* k, int& dst) {
    if (has(k)) dst = static_cast<int>(to_int(k, get(k)));
  };
  auto set_double = [&](const char* k, double& dst) {
    if (has(k)) dst = to_double(k, get(k));
  };
  auto set_bool = [&](const char* k, bool& dst) {
    if (has(k)) dst = to_bool(k, get(k));
  };
  auto wrap = [&](const char* k, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& ex) {
      const std::string msg = ex.what();
      if (msg.find(k) != std::string::npos) throw;
      throw std::invalid_argument("config key '" + std::string(k) + "': " + msg);
    }
  };

  set_int("env.n", e.n);
  set_int("env.horizon", e.horizon);
  set_int("env.grid_height", e.grid_height);
  set_int("env.grid_width", e.grid_width);
  set_int("env.heatmap_bins", e.heatmap_bins);
  set_double("env.reacher.l1", e.reacher.l1);
  set_double("env.reacher.l2", e.reacher.l2);
  set_double("env.reacher.alpha", e.reacher.alpha);
  set_double("env.reacher.dt", e.reacher.dt);
  set_double("env.reacher.damping", e.reacher.damping);
  set_double("env.reacher.omega_max", e.reacher.omega_max);
  set_double("env.reacher.hit_distance", e.reacher.hit_distance);

  t.k_explore = e.n;
  set_int("agent.k_explore", t.k_explore);
  set_int("agent.hidden", t.hidden);
  t.exploit_hidden = t.hidden;
  set_int("agent.meta_hidden", t.meta_hidden);
  set_int("agent.exploit_hidden", t.exploit_hidden);

  if (has("reward.scheme")) {
    wrap("reward.scheme", [&] {
      const auto s = objectives::reward_scheme_from_string(get("reward.scheme"));
      if (t.agent == trainer::AgentKind::kRL2 && s != objectives::RewardScheme::kSeparate) {
        throw std::invalid_argument("rl2 trains on separate rewards");
      }
      if (t.agent == trainer::AgentKind::kERL2 && s != objectives::RewardScheme::kZeroUntilExploit) {
        throw std::invalid_argument("erl2 trains on zero_until_exploit rewards");
      }
      t.scheme = s;
    });
  }
  if (has("reward.granularity")) {
    wrap("reward.granularity",
         [&] { t.granularity = objectives::granularity_from_string(get("reward.granularity")); });
  }
  if (has("divergence.kind")) {
    wrap("divergence.kind",
         [&] { t.divergence.kind = objectives::divergence_kind_from_string(get("divergence.kind")); });
  }
  set_double("divergence.lambda", t.divergence.lambda);
  set_int("divergence.derangements", t.divergence.derangements);

  set_double("train.lr", t.lr);
  set_double("train.gamma", t.gamma);
  set_double("train.entropy_coef", t.entropy_coef);
  set_double("train.value_coef", t.value_coef);
  set_double("train.clip_norm", t.clip_norm);
  set_bool("train.normalize_advantages", t.normalize_advantages);
  set_int("train.batch_size", t.batch_size);
  set_int("train.total_updates", t.total_updates);
  set_int("train.checkpoint_every", t.checkpoint_every);
  set_int("train.keep_checkpoints", t.keep_checkpoints);
  if (has("train.seed")) t.seed = to_u64("train.seed", get("train.seed"));
  set_int("eval.meta_episodes", t.eval_meta_episodes);
  set_int("eval.batch_size", t.eval_batch_size);
  set_bool("log.wallclock", t.log_wallclock);

  if (has("sweep.lr")) {
    for (const auto& v : split_list(get("sweep.lr"))) out.sweep_lr.push_back(to_double("sweep.lr", v));
  }
  if (has("sweep.divergence_lambda")) {
    for (const auto& v : split_list(get("sweep.divergence_lambda"))) {
      out.sweep_lambda.push_back(to_double("sweep.divergence_lambda", v));
    }
  }
  if (has("sweep.seeds")) {
    for (const auto& v : split_list(get("sweep.seeds"))) out.sweep_seeds.push_back(to_u64("sweep.seeds", v));
  }
  if (out.sweep_lr.empty()) out.sweep_lr = {t.lr};
  if (out.sweep_lambda.empty()) out.sweep_lambda = {t.divergence.lambda};
  if (out.sweep_seeds.empty()) out.sweep_seeds = {t.seed};
  if (has("output.dir")) out.out_dir = get("output.dir");

  wrap("env", [&] { envs::EnvClass check(e); });
  t.validate();
  return out;
}

std::string render_config(const ExperimentConfig& cfg) {
  const trainer::TrainConfig& t = cfg.train;
  const envs::EnvConfig& e = t.env;
  std::ostringstream os;
  auto line = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  line("env.kind", envs::to_string(e.kind));
  line("env.n", std::to_string(e.n));
  line("env.horizon", std::to_string(e.horizon));
  line("env.grid_height", std::to_string(e.grid_height));
  line("env.grid_width", std::to_string(e.grid_width));
  line("env.heatmap_bins", std::to_string(e.heatmap_bins));
  line("env.reacher.l1", num(e.reacher.l1));
  line("env.reacher.l2", num(e.reacher.l2));
  line("env.reacher.alpha", num(e.reacher.alpha));
  line("env.reacher.dt", num(e.reacher.dt));
  line("env.reacher.damping", num(e.reacher.damping));
  line("env.reacher.omega_max", num(e.reacher.omega_max));
  line("env.reacher.hit_distance", num(e.reacher.hit_distance));
  line("agent.kind", trainer::to_string(t.agent));
  line("agent.k_explore", std::to_string(t.k_explore));
  line("agent.hidden", std::to_string(t.hidden));
  line("agent.meta_hidden", std::to_string(t.meta_hidden));
  line("agent.exploit_hidden", std::to_string(t.exploit_hidden));
  line("reward.scheme", objectives::to_string(t.scheme));
  line("reward.granularity", objectives::to_string(t.granularity));
  line("divergence.kind", objectives::to_string(t.divergence.kind));
  line("divergence.lambda", num(t.divergence.lambda));
  line("divergence.derangements", std::to_string(t.divergence.derangements));
  line("train.lr", num(t.lr));
  line("train.gamma", num(t.gamma));
  line("train.entropy_coef", num(t.entropy_coef));
  line("train.value_coef", num(t.value_coef));
  line("train.clip_norm", num(t.clip_norm));
  line("train.normalize_advantages", t.normalize_advantages ? "true" : "false");
  line("train.batch_size", std::to_string(t.batch_size));
  line("train.total_updates", std::to_string(t.total_updates));
  line("train.checkpoint_every", std::to_string(t.checkpoint_every));
  line("train.keep_checkpoints", std::to_string(t.keep_checkpoints));
  line("train.seed", std::to_string(t.seed));
  line("eval.meta_episodes", std::to_string(t.eval_meta_episodes));
  line("eval.batch_size", std::to_string(t.eval_batch_size));
  line("log.wallclock", t.log_wallclock ? "true" : "false");
  line("sweep.lr", join(cfg.sweep_lr));
  line("sweep.divergence_lambda", join(cfg.sweep_lambda));
  line("sweep.seeds", join(cfg.sweep_seeds));
  line("output.dir", cfg.out_dir);
  return os.str();
}

}  // namespace cmrl::cli
