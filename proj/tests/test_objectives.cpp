#include "doctest.h"

#include <cmath>
#include <map>
#include <numbers>

#include "cmrl/objectives.hpp"

using namespace cmrl;
using namespace cmrl::objectives;
using envs::Phase;

namespace {

std::vector<double> random_distribution(int n, Rng& rng) {
  std::vector<double> p(static_cast<std::size_t>(n));
  double s = 0.0;
  for (auto& v : p) s += v = uniform01(rng) + 1e-3;
  for (auto& v : p) v /= s;
  return p;
}

// K concurrent rollouts of one step each on a single meta-episode.
envs::MetaEpisodeBatch one_step_batch(const std::vector<double>& rewards) {
  envs::MetaEpisodeBatch batch;
  batch.batch_size = 1;
  batch.action_count = 2;
  batch.input_dim = 1;
  batch.concurrent = true;
  for (double r : rewards) {
    envs::StepRecord rec;
    rec.input = Tensor::matrix(1, 1);
    rec.acting = {1};
    rec.action = {0};
    rec.env_reward = {r};
    rec.goal = {-1};
    rec.probs = Tensor::matrix(1, 2, 0.5);
    rec.value = {0.0};
    envs::StreamRecord s;
    s.steps.push_back(rec);
    batch.explore.push_back(s);
  }
  envs::StepRecord exploit;
  exploit.input = Tensor::matrix(1, 1);
  exploit.acting = {1};
  exploit.action = {1};
  exploit.env_reward = {-1.0};
  exploit.goal = {-1};
  exploit.probs = Tensor::matrix(1, 2, 0.5);
  exploit.value = {0.0};
  batch.exploit.steps.push_back(exploit);
  batch.exploit_return = {-1.0};
  batch.explore_goals = {{}};
  return batch;
}

}  // namespace

TEST_CASE("reward schemes") {
  const std::vector<double> r = {-1.0, -1.0, 0.1};
  CHECK(apply_reward_scheme(RewardScheme::kSeparate, Phase::kExplore, r) == r);
  for (double v : apply_reward_scheme(RewardScheme::kMaxUntilExploit, Phase::kExplore, r)) CHECK(v == 0.1);
  for (double v : apply_reward_scheme(RewardScheme::kShared, Phase::kExplore, r)) CHECK(v == doctest::Approx(-1.9));
  for (double v : apply_reward_scheme(RewardScheme::kZeroUntilExploit, Phase::kExplore, r)) CHECK(v == 0.0);

  const std::vector<double> flat = {1.0, 1.0, 1.0};
  for (double v : apply_reward_scheme(RewardScheme::kStDevUntilExploit, Phase::kExplore, flat)) CHECK(v == 0.0);
  const std::vector<double> spread = {0.0, 0.0, 3.0};
  for (double v : apply_reward_scheme(RewardScheme::kStDevUntilExploit, Phase::kExplore, spread)) {
    CHECK(v == doctest::Approx(std::sqrt(2.0)));
  }
  for (double v : apply_reward_scheme(RewardScheme::kMaxPlusStDevUntilExploit, Phase::kExplore, spread)) {
    CHECK(v == doctest::Approx(3.0 + std::sqrt(2.0)));
  }

  for (RewardScheme s : {RewardScheme::kSeparate, RewardScheme::kShared, RewardScheme::kZeroUntilExploit,
                         RewardScheme::kMaxUntilExploit, RewardScheme::kStDevUntilExploit,
                         RewardScheme::kMaxPlusStDevUntilExploit}) {
    CHECK(apply_reward_scheme(s, Phase::kExploit, std::vector<double>{0.7}) == std::vector<double>{0.7});
    CHECK(reward_scheme_from_string(to_string(s)) == s);
  }
  CHECK_THROWS(apply_reward_scheme(RewardScheme::kMaxUntilExploit, Phase::kExplore, std::vector<double>{}));
  CHECK_THROWS(reward_scheme_from_string("everything"));
}

TEST_CASE("shaping a recorded batch") {
  const envs::MetaEpisodeBatch batch = one_step_batch({-1.0, -1.0, 0.1});
  const TrainingRewards max = shape_rewards(batch, RewardScheme::kMaxUntilExploit);
  REQUIRE(max.explore.size() == 3);
  for (const auto& stream : max.explore) CHECK(stream[0][0] == 0.1);
  CHECK(max.exploit[0][0] == -1.0);

  const TrainingRewards zero = shape_rewards(batch, RewardScheme::kZeroUntilExploit);
  for (const auto& stream : zero.explore) CHECK(stream[0][0] == 0.0);
  CHECK(zero.exploit[0][0] == -1.0);

  const TrainingRewards sep = shape_rewards(batch, RewardScheme::kSeparate, Granularity::kPerEpisode);
  CHECK(sep.explore[2][0][0] == 0.1);
  CHECK(granularity_from_string(to_string(Granularity::kPerEpisode)) == Granularity::kPerEpisode);
}

TEST_CASE("derangements") {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) CHECK(sample_derangement(2, rng) == std::vector<int>{1, 0});
  std::map<std::vector<int>, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[sample_derangement(3, rng)];
  CHECK(counts.size() == 2);
  CHECK(std::abs(counts[{1, 2, 0}] / double(n) - 0.5) < 0.02);
  CHECK(std::abs(counts[{2, 0, 1}] / double(n) - 0.5) < 0.02);
  for (int i = 0; i < 200; ++i) {
    const auto d = sample_derangement(7, rng);
    for (int k = 0; k < 7; ++k) CHECK(d[static_cast<std::size_t>(k)] != k);
  }
  CHECK_THROWS(sample_derangement(1, rng));
  CHECK_THROWS(sample_derangement(0, rng));
}

TEST_CASE("divergences") {
  const std::vector<double> p = {0.75, 0.25};
  const std::vector<double> q = {0.25, 0.75};
  CHECK(sym_kl(p, q) == doctest::Approx(std::log(3.0)));
  CHECK(sym_kl(p, p) == 0.0);
  CHECK(js(p, p) == doctest::Approx(0.0));
  const double eps = 1e-8;
  CHECK(js(std::vector<double>{1 - eps, eps}, std::vector<double>{eps, 1 - eps}) ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-6));
  CHECK_THROWS(js(p, std::vector<double>{1.0}));
  CHECK_THROWS(sym_kl(p, std::vector<double>{1.0}));

  Rng rng(12);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_distribution(5, rng);
    const auto b = random_distribution(5, rng);
    CHECK(sym_kl(a, b) == doctest::Approx(sym_kl(b, a)));
    CHECK(sym_kl(a, b) >= 0.0);
    CHECK(js(a, b) >= -1e-15);
    CHECK(js(a, b) <= std::numbers::ln2 + 1e-9);
  }
  CHECK(divergence_kind_from_string(to_string(DivergenceKind::kSymKL)) == DivergenceKind::kSymKL);
}

TEST_CASE("row-wise divergence nodes match the scalar versions") {
  Rng rng(13);
  std::vector<double> pv, qv;
  std::vector<double> expect_js, expect_kl;
  for (int r = 0; r < 3; ++r) {
    const auto a = random_distribution(4, rng);
    const auto b = random_distribution(4, rng);
    pv.insert(pv.end(), a.begin(), a.end());
    qv.insert(qv.end(), b.begin(), b.end());
    expect_js.push_back(js(a, b));
    expect_kl.push_back(sym_kl(a, b));
  }
  Graph g;
  const NodeId p = g.constant(Tensor({3, 4}, pv));
  const Tensor q({3, 4}, qv);
  const Tensor& rows_js = g.value(divergence_rows(g, DivergenceKind::kJS, p, q));
  const Tensor& rows_kl = g.value(divergence_rows(g, DivergenceKind::kSymKL, p, q));
  for (int r = 0; r < 3; ++r) {
    CHECK(rows_js.at(r, 0) == doctest::Approx(expect_js[static_cast<std::size_t>(r)]));
    CHECK(rows_kl.at(r, 0) == doctest::Approx(expect_kl[static_cast<std::size_t>(r)]));
  }

  for (DivergenceKind kind : {DivergenceKind::kJS, DivergenceKind::kSymKL}) {
    const auto res = ad::check_gradients(
        [&](Graph& gg, std::span<const NodeId> x) {
          return gg.sum(divergence_rows(gg, kind, gg.softmax(x[0]), q));
        },
        std::vector<ad::Shape>{{3, 4}}, rng);
    CHECK(res.max_relative_error < 1e-5);
  }
}

TEST_CASE("divergence loss") {
  const envs::EnvClass env({envs::EnvKind::kMontyHall, 4});
  agents::AgentConfig cfg;
  cfg.arch = agents::Architecture::kMeta;
  cfg.k_explore = 3;
  cfg.input_dim = envs::input_dim(env.spec());
  cfg.actions = env.spec().action_count;
  cfg.hidden = 6;
  cfg.meta_hidden = 4;
  cfg.exploit_hidden = 6;
  Rng rng(14);
  nn::ParamStore store = nn::init_params(agents::param_specs(cfg), rng);
  std::vector<std::unique_ptr<envs::Task>> owned;
  std::vector<const envs::Task*> tasks;
  for (int b = 0; b < 4; ++b) {
    owned.push_back(env.sample_task(rng));
    tasks.push_back(owned.back().get());
  }
  auto record = [&](const nn::ParamStore& params) {
    Graph g;
    const agents::Network net = agents::bind_network(g, nn::BoundParams(g, params), cfg);
    agents::NeuralAgent agent(g, net);
    return envs::run_meta_episodes({3, 1, 1}, env.spec(), tasks, agent, rng);
  };

  SUBCASE("policies that ignore their history give zero divergence") {
    for (auto& e : store.entries()) e.value = Tensor(e.value.shape(), 0.0);
    const auto batch = record(store);
    Graph g;
    const agents::Network net = agents::bind_network(g, nn::BoundParams(g, store), cfg);
    const NodeId loss = divergence_loss(g, batch, net, {DivergenceKind::kJS, 1.0, 2}, rng);
    REQUIRE(loss >= 0);
    CHECK(std::abs(g.value(loss).item()) < 1e-12);
  }
  SUBCASE("distinct rollouts give positive divergence") {
    for (auto& e : store.entries()) {
      for (auto& v : e.value.vec()) v = uniform01(rng) - 0.5;
    }
    const auto batch = record(store);
    Graph g;
    const agents::Network net = agents::bind_network(g, nn::BoundParams(g, store), cfg);
    for (DivergenceKind kind : {DivergenceKind::kJS, DivergenceKind::kSymKL}) {
      const NodeId loss = divergence_loss(g, batch, net, {kind, 1.0, 1}, rng);
      REQUIRE(loss >= 0);
      CHECK(g.value(loss).item() > 0.0);
    }
  }
  SUBCASE("undefined for a single rollout") {
    agents::AgentConfig one = cfg;
    one.k_explore = 1;
    const nn::ParamStore single = nn::init_params(agents::param_specs(one), rng);
    Graph rg;
    const agents::Network rnet = agents::bind_network(rg, nn::BoundParams(rg, single), one);
    agents::NeuralAgent agent(rg, rnet);
    const auto batch = envs::run_meta_episodes({1, 1, 1}, env.spec(), tasks, agent, rng);
    Graph g;
    const agents::Network net = agents::bind_network(g, nn::BoundParams(g, single), one);
    CHECK(divergence_loss(g, batch, net, {DivergenceKind::kJS, 1.0, 1}, rng) == -1);
  }
}
