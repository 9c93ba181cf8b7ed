#include "cmrl/agents.hpp"

#include <algorithm>
#include <stdexcept>

namespace cmrl::agents {

using nn::InitKind;
using nn::LstmState;
using nn::ParamSpec;
using nn::PolicyNodes;

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::kSequential: return "sequential";
    case Architecture::kCentral: return "central_lstm";
    case Architecture::kMeta: return "meta_lstm";
  }
  return "?";
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "sequential") return Architecture::kSequential;
  if (s == "central_lstm") return Architecture::kCentral;
  if (s == "meta_lstm") return Architecture::kMeta;
  throw std::invalid_argument("unknown architecture: " + s);
}

std::vector<ParamSpec> param_specs(const AgentConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.actions < 1 || cfg.k_explore < 1 || cfg.hidden < 1 ||
      cfg.exploit_hidden < 1 || (cfg.arch == Architecture::kMeta && cfg.meta_hidden < 1)) {
    throw std::invalid_argument("agent config has a non-positive size");
  }
  const int in = cfg.input_dim;
  const int hs = cfg.hidden;
  const int a = cfg.actions;
  std::vector<ParamSpec> specs;
  auto append = [&](std::vector<ParamSpec> more) {
    specs.insert(specs.end(), std::make_move_iterator(more.begin()),
                 std::make_move_iterator(more.end()));
  };
  auto init_pair = [&](const std::string& prefix, int size) {
    specs.push_back({prefix + "/h", {1, size}, InitKind::kZero});
    specs.push_back({prefix + "/c", {1, size}, InitKind::kZero});
  };

  switch (cfg.arch) {
    case Architecture::kSequential:
      append(nn::lstm_param_specs("explore/lstm", in, hs));
      append(nn::head_param_specs("explore/head", hs, a));
      init_pair("init_state/0", hs);
      break;
    case Architecture::kCentral:
      append(nn::lstm_param_specs("explore/lstm", cfg.k_explore * in, hs));
      for (int k = 0; k < cfg.k_explore; ++k) {
        append(nn::head_param_specs("explore/head/" + std::to_string(k), hs, a));
      }
      init_pair("init_state/0", hs);
      break;
    case Architecture::kMeta:
      append(nn::lstm_param_specs("explore/rollout_lstm", in + cfg.meta_hidden, hs));
      append(nn::head_param_specs("explore/head", hs, a));
      append(nn::lstm_param_specs("meta/lstm", cfg.k_explore * hs, cfg.meta_hidden));
      for (int k = 0; k < cfg.k_explore; ++k) init_pair("init_state/" + std::to_string(k), hs);
      init_pair("init_state/meta", cfg.meta_hidden);
      break;
  }

  const int he = cfg.exploit_hidden;
  const int code = cfg.code_size();
  append(nn::lstm_param_specs("exploit/lstm", in, he));
  append(nn::head_param_specs("exploit/head", he, a));
  const InitKind proj = he == code ? InitKind::kIdentity : InitKind::kUniformFanIn;
  specs.push_back({"exploit/proj/W_h", {he, code}, proj});
  specs.push_back({"exploit/proj/b_h", {he}, InitKind::kZero});
  specs.push_back({"exploit/proj/W_c", {he, code}, proj});
  specs.push_back({"exploit/proj/b_c", {he}, InitKind::kZero});
  return specs;
}

Network bind_network(Graph& g, const nn::BoundParams& bound, const AgentConfig& cfg) {
  Network net;
  net.cfg = cfg;
  auto state = [&](const std::string& prefix) {
    return LstmState{bound[prefix + "/h"], bound[prefix + "/c"]};
  };
  switch (cfg.arch) {
    case Architecture::kSequential:
      net.explore_lstm = nn::bind_lstm(bound, g, "explore/lstm");
      net.explore_heads.push_back(nn::bind_head(bound, "explore/head"));
      net.init_states.push_back(state("init_state/0"));
      break;
    case Architecture::kCentral:
      net.explore_lstm = nn::bind_lstm(bound, g, "explore/lstm");
      for (int k = 0; k < cfg.k_explore; ++k) {
        net.explore_heads.push_back(nn::bind_head(bound, "explore/head/" + std::to_string(k)));
      }
      net.init_states.push_back(state("init_state/0"));
      break;
    case Architecture::kMeta:
      net.explore_lstm = nn::bind_lstm(bound, g, "explore/rollout_lstm");
      net.explore_heads.push_back(nn::bind_head(bound, "explore/head"));
      net.meta_lstm = nn::bind_lstm(bound, g, "meta/lstm");
      for (int k = 0; k < cfg.k_explore; ++k) {
        net.init_states.push_back(state("init_state/" + std::to_string(k)));
      }
      net.meta_init = state("init_state/meta");
      break;
  }
  net.exploit_lstm = nn::bind_lstm(bound, g, "exploit/lstm");
  net.exploit_head = nn::bind_head(bound, "exploit/head");
  net.proj_wh = bound["exploit/proj/W_h"];
  net.proj_bh = bound["exploit/proj/b_h"];
  net.proj_wc = bound["exploit/proj/W_c"];
  net.proj_bc = bound["exploit/proj/b_c"];
  return net;
}

namespace {

void check_inputs(const Network& net, std::span<const NodeId> inputs) {
  if (static_cast<int>(inputs.size()) != net.cfg.k_explore) {
    throw std::invalid_argument("expected " + std::to_string(net.cfg.k_explore) +
                                " rollout inputs, got " + std::to_string(inputs.size()));
  }
}

}  // namespace

std::vector<PolicyNodes> central_lstm_step(Graph& g, const Network& net, LstmState& state,
                                           std::span<const NodeId> inputs) {
  check_inputs(net, inputs);
  const NodeId x = inputs.size() == 1 ? inputs[0] : g.concat(inputs, 1);
  state = nn::lstm_step(g, net.explore_lstm, x, state);
  std::vector<PolicyNodes> out;
  out.reserve(inputs.size());
  for (const auto& head : net.explore_heads) out.push_back(nn::apply_head(g, head, state.h));
  return out;
}

std::vector<PolicyNodes> meta_lstm_step(Graph& g, const Network& net, MetaState& state,
                                        std::span<const NodeId> inputs) {
  check_inputs(net, inputs);
  const int k_streams = net.cfg.k_explore;
  const int batch = g.value(inputs[0]).rows();
  const NodeId x_all = k_streams == 1 ? inputs[0] : g.concat(inputs, 0);
  const std::vector<NodeId> meta_copies(static_cast<std::size_t>(k_streams), state.meta.h);
  const NodeId meta_rep = k_streams == 1 ? state.meta.h : g.concat(meta_copies, 0);
  const NodeId x_aug = g.concat({x_all, meta_rep}, 1);
  state.rollouts = nn::lstm_step(g, net.explore_lstm, x_aug, state.rollouts);

  std::vector<NodeId> per_rollout;
  for (int k = 0; k < k_streams; ++k) {
    per_rollout.push_back(g.slice(state.rollouts.h, 0, k * batch, (k + 1) * batch));
  }
  const NodeId meta_in = k_streams == 1 ? per_rollout[0] : g.concat(per_rollout, 1);
  state.meta = nn::lstm_step(g, net.meta_lstm, meta_in, state.meta);

  const PolicyNodes all = nn::apply_head(g, net.explore_heads[0], state.rollouts.h);
  std::vector<PolicyNodes> out;
  for (int k = 0; k < k_streams; ++k) {
    if (k_streams == 1) {
      out.push_back(all);
    } else {
      out.push_back({g.slice(all.probs, 0, k * batch, (k + 1) * batch),
                     g.slice(all.value, 0, k * batch, (k + 1) * batch)});
    }
  }
  return out;
}

PolicyNodes sequential_step(Graph& g, const Network& net, LstmState& state, NodeId input,
                            envs::Phase phase) {
  if (phase == envs::Phase::kExplore) {
    if (net.cfg.arch != Architecture::kSequential) {
      throw std::logic_error("sequential_step explore phase needs a sequential agent");
    }
    state = nn::lstm_step(g, net.explore_lstm, input, state);
    return nn::apply_head(g, net.explore_heads[0], state.h);
  }
  state = nn::lstm_step(g, net.exploit_lstm, input, state);
  return nn::apply_head(g, net.exploit_head, state.h);
}

LstmState aggregate_for_exploit(Graph& g, const Network& net, const LstmState& code) {
  return {g.add(g.matmul(code.h, net.proj_wh, true), net.proj_bh),
          g.add(g.matmul(code.c, net.proj_wc, true), net.proj_bc)};
}

LstmState initial_state(Graph& g, const Network& net, int batch) {
  const LstmState& s = net.init_states.at(0);
  return {nn::repeat_rows(g, s.h, batch), nn::repeat_rows(g, s.c, batch)};
}

MetaState initial_meta_state(Graph& g, const Network& net, int batch) {
  std::vector<NodeId> hs;
  std::vector<NodeId> cs;
  for (const LstmState& s : net.init_states) {
    hs.push_back(nn::repeat_rows(g, s.h, batch));
    cs.push_back(nn::repeat_rows(g, s.c, batch));
  }
  MetaState st;
  st.rollouts = hs.size() == 1 ? LstmState{hs[0], cs[0]}
                               : LstmState{g.concat(hs, 0), g.concat(cs, 0)};
  st.meta = {nn::repeat_rows(g, net.meta_init.h, batch), nn::repeat_rows(g, net.meta_init.c, batch)};
  return st;
}

// ---------------------------------------------------------------------------
// NeuralAgent

NeuralAgent::NeuralAgent(Graph& g, const Network& net) : g_(g), net_(net) {}

envs::AgentLayout NeuralAgent::layout() const {
  if (net_.cfg.concurrent()) return {true, net_.cfg.k_explore};
  return {false, 1};
}

void NeuralAgent::begin(std::span<const envs::Task* const> tasks) {
  begin_batch(static_cast<int>(tasks.size()));
}

void NeuralAgent::begin_batch(int batch) {
  if (batch < 1) throw std::invalid_argument("meta-episode batch must be non-empty");
  batch_ = batch;
  stage_ = Stage::kExplore;
  explore_nodes_.assign(static_cast<std::size_t>(layout().streams), {});
  exploit_nodes_.clear();
  if (net_.cfg.arch == Architecture::kMeta) {
    meta_state_ = initial_meta_state(g_, net_, batch);
  } else {
    state_ = initial_state(g_, net_, batch);
  }
}

std::vector<PolicyNodes> NeuralAgent::explore_step_nodes(std::span<const NodeId> inputs,
                                                         std::span<const std::uint8_t> live) {
  if (stage_ == Stage::kIdle) throw std::logic_error("explore step before begin()");
  if (stage_ == Stage::kExploit) throw std::logic_error("explore step after the exploit phase began");
  std::vector<PolicyNodes> out;
  switch (net_.cfg.arch) {
    case Architecture::kSequential: {
      if (inputs.size() != 1) throw std::invalid_argument("sequential agent takes one input stream");
      const LstmState old = state_;
      out.push_back(sequential_step(g_, net_, state_, inputs[0], envs::Phase::kExplore));
      if (std::any_of(live.begin(), live.end(), [](auto v) { return v == 0; })) {
        // Rows whose sub-episode already ended keep their state.
        const int hs = net_.cfg.hidden;
        Tensor keep = Tensor::matrix(batch_, hs);
        Tensor hold = Tensor::matrix(batch_, hs);
        for (int b = 0; b < batch_; ++b) {
          const double m = live[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
          for (int j = 0; j < hs; ++j) {
            keep.at(b, j) = m;
            hold.at(b, j) = 1.0 - m;
          }
        }
        const NodeId mk = g_.constant(std::move(keep));
        const NodeId mh = g_.constant(std::move(hold));
        state_.h = g_.add(g_.mul(mk, state_.h), g_.mul(mh, old.h));
        state_.c = g_.add(g_.mul(mk, state_.c), g_.mul(mh, old.c));
      }
      break;
    }
    case Architecture::kCentral:
      out = central_lstm_step(g_, net_, state_, inputs);
      break;
    case Architecture::kMeta:
      out = meta_lstm_step(g_, net_, meta_state_, inputs);
      break;
  }
  for (std::size_t k = 0; k < out.size(); ++k) explore_nodes_[k].push_back(out[k]);
  return out;
}

std::vector<envs::PolicyBatch> NeuralAgent::explore_step(std::span<const Tensor> inputs,
                                                         std::span<const std::uint8_t> live,
                                                         const envs::StepContext& /*ctx*/) {
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const Tensor& x : inputs) ids.push_back(g_.constant(x));
  const auto nodes = explore_step_nodes(ids, live);
  std::vector<envs::PolicyBatch> out;
  out.reserve(nodes.size());
  for (const auto& p : nodes) out.push_back(to_batch(p));
  return out;
}

void NeuralAgent::end_explore() {
  if (stage_ != Stage::kExplore) throw std::logic_error("end_explore outside the explore phase");
  const LstmState code = net_.cfg.arch == Architecture::kMeta ? meta_state_.meta : state_;
  exploit_state_ = aggregate_for_exploit(g_, net_, code);
  stage_ = Stage::kExploit;
}

envs::PolicyBatch NeuralAgent::exploit_step(const Tensor& input, const envs::StepContext& /*ctx*/) {
  if (stage_ != Stage::kExploit) throw std::logic_error("exploit step before end_explore()");
  const PolicyNodes p =
      sequential_step(g_, net_, exploit_state_, g_.constant(input), envs::Phase::kExploit);
  exploit_nodes_.push_back(p);
  return to_batch(p);
}

envs::PolicyBatch NeuralAgent::to_batch(const PolicyNodes& p) const {
  return {g_.value(p.probs), g_.value(p.value).vec()};
}

std::vector<std::vector<NodeId>> replay_explore(Graph& g, const Network& net,
                                                const std::vector<std::vector<Tensor>>& streams) {
  if (!net.cfg.concurrent()) throw std::invalid_argument("replay needs a concurrent agent");
  if (static_cast<int>(streams.size()) != net.cfg.k_explore || streams[0].empty()) {
    throw std::invalid_argument("replay needs one non-empty input stream per rollout");
  }
  const std::size_t steps = streams[0].size();
  for (const auto& s : streams) {
    if (s.size() != steps) throw std::invalid_argument("replay streams differ in length");
  }
  NeuralAgent agent(g, net);
  agent.begin_batch(streams[0][0].rows());
  const std::vector<std::uint8_t> live(static_cast<std::size_t>(streams[0][0].rows()), 1);
  std::vector<std::vector<NodeId>> out(streams.size());
  std::vector<NodeId> ids(streams.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t k = 0; k < streams.size(); ++k) ids[k] = g.constant(streams[k][t]);
    const auto p = agent.explore_step_nodes(ids, live);
    for (std::size_t k = 0; k < streams.size(); ++k) out[k].push_back(p[k].probs);
  }
  return out;
}

void teacher_force(NeuralAgent& agent, const envs::MetaEpisodeBatch& batch) {
  agent.begin_batch(batch.batch_size);
  const std::size_t steps = batch.explore.empty() ? 0 : batch.explore[0].steps.size();
  std::vector<Tensor> inputs(batch.explore.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t k = 0; k < batch.explore.size(); ++k) inputs[k] = batch.explore[k].steps[t].input;
    // Sequential rows act exactly while live; concurrent streams never freeze.
    std::vector<std::uint8_t> live(static_cast<std::size_t>(batch.batch_size), 1);
    if (!batch.concurrent) live = batch.explore[0].steps[t].acting;
    agent.explore_step(inputs, live, {envs::Phase::kExplore, batch.explore[0].steps[t].sub_episode,
                                      static_cast<int>(t)});
  }
  agent.end_explore();
  for (std::size_t t = 0; t < batch.exploit.steps.size(); ++t) {
    agent.exploit_step(batch.exploit.steps[t].input, {envs::Phase::kExploit, 0, static_cast<int>(t)});
  }
}

}  // namespace cmrl::agents
