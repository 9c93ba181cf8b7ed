#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmrl/checkpoint.hpp"
#include "cmrl/trainer.hpp"

using namespace cmrl;
using namespace cmrl::trainer;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.env = {envs::EnvKind::kMontyHall, 4};
  cfg.agent = AgentKind::kCmrlCentral;
  cfg.k_explore = 4;
  cfg.hidden = 8;
  cfg.meta_hidden = 8;
  cfg.exploit_hidden = 8;
  cfg.divergence = {objectives::DivergenceKind::kJS, 0.05, 1};
  cfg.batch_size = 8;
  cfg.total_updates = 6;
  cfg.checkpoint_every = 3;
  cfg.eval_meta_episodes = 16;
  cfg.eval_batch_size = 8;
  cfg.seed = 7;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cmrl_test_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("discounted returns") {
  const std::vector<double> r = {0.0, 0.0, 1.0};
  const std::vector<std::uint8_t> none(3, 0), all(3, 1);
  const auto ret = compute_returns(r, 0.99, none, all);
  CHECK(ret[0] == doctest::Approx(0.9801));
  CHECK(ret[1] == doctest::Approx(0.99));
  CHECK(ret[2] == doctest::Approx(1.0));

  const std::vector<double> single = {-1.0};
  const std::vector<std::uint8_t> one = {1};
  CHECK(compute_returns(single, 0.99, one, one)[0] == -1.0);

  // A terminal step stops accumulation from later steps.
  const std::vector<std::uint8_t> term = {0, 1, 0};
  const auto cut = compute_returns(std::vector<double>{0.0, 0.5, 1.0}, 0.5, term, all);
  CHECK(cut[0] == doctest::Approx(0.25));
  CHECK(cut[1] == doctest::Approx(0.5));

  const auto padded = compute_returns(r, 0.99, none, none);
  for (double v : padded) CHECK(v == 0.0);
}

TEST_CASE("returns chain explore into exploit") {
  envs::MetaEpisodeBatch batch;
  batch.batch_size = 1;
  batch.action_count = 2;
  batch.concurrent = true;
  auto step = [](bool acting, double reward) {
    envs::StepRecord rec;
    rec.input = ad::Tensor::matrix(1, 1);
    rec.acting = {static_cast<std::uint8_t>(acting)};
    rec.action = {acting ? 0 : -1};
    rec.env_reward = {reward};
    rec.goal = {-1};
    rec.probs = ad::Tensor::matrix(1, 2, 0.5);
    rec.value = {0.0};
    return rec;
  };
  batch.explore.resize(2);
  batch.explore[0].steps = {step(true, 0.0), step(false, 0.0)};
  batch.explore[1].steps = {step(true, 0.0), step(false, 0.0)};
  batch.exploit.steps = {step(true, 1.0)};
  batch.exploit_return = {1.0};
  batch.explore_goals = {{}};
  const auto rewards = objectives::shape_rewards(batch, objectives::RewardScheme::kZeroUntilExploit);
  const auto returns = batch_returns(batch, rewards, 0.9);
  CHECK(returns.exploit[0][0] == doctest::Approx(1.0));
  // Exploit reward reaches explore decisions even when explore rewards are zero.
  CHECK(returns.explore[0][0][0] == doctest::Approx(0.9));
  CHECK(returns.explore[1][0][0] == doctest::Approx(0.9));
  CHECK(returns.explore[0][1][0] == 0.0);
}

TEST_CASE("A2C loss on a uniform policy") {
  TrainConfig cfg = tiny_config();
  const envs::EnvClass env(cfg.env);
  const agents::AgentConfig acfg = cfg.agent_config();
  Rng rng(3);
  nn::ParamStore store = nn::init_params(agents::param_specs(acfg), rng);
  for (auto& e : store.entries()) e.value = ad::Tensor(e.value.shape(), 0.0);
  std::vector<std::unique_ptr<envs::Task>> owned;
  std::vector<const envs::Task*> tasks;
  for (int b = 0; b < 4; ++b) {
    owned.push_back(env.sample_task(rng));
    tasks.push_back(owned.back().get());
  }
  Graph g;
  const agents::Network net = agents::bind_network(g, nn::BoundParams(g, store), acfg);
  agents::NeuralAgent agent(g, net);
  const auto batch = envs::run_meta_episodes(cfg.meta_config(), env.spec(), tasks, agent, rng);

  // Zero returns against zero values: no advantage and a perfect value fit.
  objectives::TrainingRewards zero = objectives::shape_rewards(batch, objectives::RewardScheme::kZeroUntilExploit);
  for (auto& row : zero.exploit) std::fill(row.begin(), row.end(), 0.0);
  const LossGraph loss = a2c_loss(g, batch, agent, zero, {0.5, 0.01, 0.0, false}, -1);
  CHECK(loss.values.policy == doctest::Approx(0.0));
  CHECK(loss.values.value == doctest::Approx(0.0));
  CHECK(loss.values.entropy == doctest::Approx(std::log(5.0)));
  CHECK(loss.steps == batch.acting_steps());
  CHECK(g.value(loss.total).item() == doctest::Approx(-0.01 * std::log(5.0)));
}

TEST_CASE("a zero divergence weight leaves the loss unchanged") {
  TrainConfig with = tiny_config();
  TrainConfig without = tiny_config();
  without.divergence.lambda = 0.0;
  with.divergence.lambda = 0.0;
  with.divergence.derangements = 3;
  Trainer a(with), b(without);
  const UpdateStats sa = a.step();
  const UpdateStats sb = b.step();
  CHECK(sa.loss.total == sb.loss.total);
  CHECK(a.params() == b.params());
}

TEST_CASE("trainer steps update parameters") {
  Trainer t(tiny_config());
  const nn::ParamStore before = t.params();
  const UpdateStats s = t.step();
  CHECK(t.update() == 1);
  CHECK(t.params().step_count() == 1);
  CHECK(!(t.params() == before));
  CHECK(std::isfinite(s.loss.total));
  CHECK(s.grad_norm > 0.0);
  CHECK(s.loss.divergence >= 0.0);
}

TEST_CASE("configuration validation") {
  TrainConfig cfg = tiny_config();
  cfg.batch_size = 0;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.lr = -1.0;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.divergence.lambda = -0.1;
  CHECK_THROWS(cfg.validate());
  CHECK_NOTHROW(tiny_config().validate());
  CHECK(agent_kind_from_string(to_string(AgentKind::kCmrlMeta)) == AgentKind::kCmrlMeta);
  CHECK(architecture_of(AgentKind::kERL2) == agents::Architecture::kSequential);
}

TEST_CASE("training runs are deterministic and resumable") {
  const TrainConfig cfg = tiny_config();
  const fs::path a = scratch("a"), b = scratch("b"), c = scratch("c");
  train(cfg, {a, std::nullopt, "resolved", std::nullopt, false});
  train(cfg, {b, std::nullopt, "resolved", std::nullopt, false});
  const std::string log = slurp(a / "metrics.csv");
  CHECK(log == slurp(b / "metrics.csv"));
  CHECK(log.starts_with(metrics_header()));
  CHECK(fs::exists(a / "ckpt_3" / "manifest.json"));
  CHECK(fs::exists(a / "ckpt_6" / "params.bin"));

  const Checkpoint ckpt = load_checkpoint(a / "ckpt_6", envs::EnvClass(cfg.env).fingerprint());
  CHECK(ckpt.update == 6);
  CHECK(ckpt.config == "resolved");
  CHECK_THROWS(load_checkpoint(a / "ckpt_6", "monty_hall:n=99:H=1"));

  train(cfg, {c, std::nullopt, "resolved", 3, false});
  const Trainer resumed = train(cfg, {c, c / "ckpt_3", "resolved", std::nullopt, false});
  CHECK(resumed.params() == ckpt.params);
  CHECK(slurp(c / "metrics.csv") == log);

  TrainConfig other = cfg;
  other.seed = 8;
  const fs::path d = scratch("d");
  train(other, {d, std::nullopt, "resolved", std::nullopt, false});
  CHECK(slurp(d / "metrics.csv") != log);
  for (const auto& p : {a, b, c, d}) fs::remove_all(p);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(4);
  Checkpoint ckpt;
  ckpt.env_fingerprint = "monty_hall:n=4:H=1";
  ckpt.update = 42;
  ckpt.rng = RngStreams::from_seed(4).serialize();
  ckpt.config = "env.kind = monty_hall\n";
  ckpt.params = nn::init_params({{"a", {3, 2}}, {"b", {4}}}, rng);
  nn::adam_step(ckpt.params, {{"a", ad::Tensor::matrix(3, 2, 0.3)}}, {0.01});
  const fs::path dir = scratch("ckpt");
  save_checkpoint(ckpt, dir);
  const Checkpoint back = load_checkpoint(dir, ckpt.env_fingerprint);
  CHECK(back.params == ckpt.params);
  CHECK(back.update == 42);
  CHECK(back.rng == ckpt.rng);
  CHECK(back.config == ckpt.config);
  fs::remove(dir / "params.bin");
  CHECK_THROWS(load_checkpoint(dir));
  fs::remove_all(dir);
}
