#pragma once

#include <string>
#include <vector>

#include "cmrl/envs.hpp"
#include "cmrl/nn.hpp"

namespace cmrl::agents {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

// Sequential covers both RL2 and ERL2; they differ only in reward scheme.
enum class Architecture { kSequential, kCentral, kMeta };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct AgentConfig {
  Architecture arch = Architecture::kSequential;
  int k_explore = 1;
  int input_dim = 0;
  int actions = 0;
  int hidden = 32;          // explore LSTM: sequential, central, or per-rollout
  int meta_hidden = 16;     // meta-LSTM (kMeta only)
  int exploit_hidden = 32;  // exploit LSTM

  bool concurrent() const { return arch != Architecture::kSequential; }
  // Width of the explore code handed to the exploit LSTM.
  int code_size() const { return arch == Architecture::kMeta ? meta_hidden : hidden; }
};

// Parameter names:
//   explore/lstm, explore/head           sequential
//   explore/lstm, explore/head/<k>       central (one head per rollout)
//   explore/rollout_lstm, explore/head   meta (shared across rollouts)
//   meta/lstm                            meta
//   init_state/<k>/{h,c}, init_state/meta/{h,c}
//   exploit/lstm, exploit/head, exploit/proj/{W_h,b_h,W_c,b_c}
std::vector<nn::ParamSpec> param_specs(const AgentConfig& cfg);

// Parameter leaves of one agent bound onto a graph.
struct Network {
  AgentConfig cfg;
  nn::LstmParams explore_lstm;  // sequential/central LSTM, or the rollout LSTM
  nn::LstmParams meta_lstm;
  nn::LstmParams exploit_lstm;
  std::vector<nn::HeadParams> explore_heads;  // K for central, 1 otherwise
  nn::HeadParams exploit_head;
  std::vector<nn::LstmState> init_states;  // K for meta, 1 otherwise
  nn::LstmState meta_init;
  NodeId proj_wh = -1, proj_bh = -1, proj_wc = -1, proj_bc = -1;
};

Network bind_network(Graph& g, const nn::BoundParams& bound, const AgentConfig& cfg);

struct MetaState {
  nn::LstmState rollouts;  // [K*B, H], rollout-major
  nn::LstmState meta;      // [B, Hm]
};

// One step of the monolithic Central-LSTM on all rollout inputs ([B, I]
// each, ordered by rollout index); returns one policy per rollout.
std::vector<nn::PolicyNodes> central_lstm_step(Graph& g, const Network& net, nn::LstmState& state,
                                               std::span<const NodeId> inputs);

// One Meta-LSTM step: shared rollout LSTM on [x_k ; h_meta], then the meta
// LSTM on the concatenated rollout hidden states. Policies are read from the
// rollout hidden states through one shared head.
std::vector<nn::PolicyNodes> meta_lstm_step(Graph& g, const Network& net, MetaState& state,
                                            std::span<const NodeId> inputs);

// One step of the explore or exploit LSTM of a sequential agent, or of any
// agent's exploit LSTM.
nn::PolicyNodes sequential_step(Graph& g, const Network& net, nn::LstmState& state, NodeId input,
                                envs::Phase phase);

// Projects the explore code (h, c) onto the exploit LSTM's initial state.
nn::LstmState aggregate_for_exploit(Graph& g, const Network& net, const nn::LstmState& code);

// Initial explore state for a batch of B meta-episodes.
nn::LstmState initial_state(Graph& g, const Network& net, int batch);
MetaState initial_meta_state(Graph& g, const Network& net, int batch);

// MetaAgent driving a Network on a graph; keeps the node ids of every
// policy it emits so losses can be built on the same graph afterwards.
class NeuralAgent final : public envs::MetaAgent {
 public:
  NeuralAgent(Graph& g, const Network& net);

  envs::AgentLayout layout() const override;
  void begin(std::span<const envs::Task* const> tasks) override;
  void begin_batch(int batch);
  std::vector<envs::PolicyBatch> explore_step(std::span<const Tensor> inputs,
                                              std::span<const std::uint8_t> live,
                                              const envs::StepContext& ctx) override;
  void end_explore() override;
  envs::PolicyBatch exploit_step(const Tensor& input, const envs::StepContext& ctx) override;

  // Explore policies per stream per recorded step, exploit policies per step.
  const std::vector<std::vector<nn::PolicyNodes>>& explore_nodes() const { return explore_nodes_; }
  const std::vector<nn::PolicyNodes>& exploit_nodes() const { return exploit_nodes_; }

  // Explore step on graph nodes; records and returns the per-stream policies.
  std::vector<nn::PolicyNodes> explore_step_nodes(std::span<const NodeId> inputs,
                                                  std::span<const std::uint8_t> live);

 private:
  enum class Stage { kIdle, kExplore, kExploit };

  envs::PolicyBatch to_batch(const nn::PolicyNodes& p) const;

  Graph& g_;
  const Network& net_;
  Stage stage_ = Stage::kIdle;
  int batch_ = 0;
  nn::LstmState state_{};
  MetaState meta_state_{};
  nn::LstmState exploit_state_{};
  std::vector<std::vector<nn::PolicyNodes>> explore_nodes_;
  std::vector<nn::PolicyNodes> exploit_nodes_;
};

// Re-runs the concurrent explore network from its initial state with stream
// k fed streams[k] (inputs per step). Returns probs nodes [k][t].
std::vector<std::vector<NodeId>> replay_explore(Graph& g, const Network& net,
                                                const std::vector<std::vector<Tensor>>& streams);

// Feeds a recorded batch's inputs back through `agent` (begin, every
// explore step, end_explore, every exploit step) without sampling, so the
// agent's recorded nodes line up with the batch records.
void teacher_force(NeuralAgent& agent, const envs::MetaEpisodeBatch& batch);

}  // namespace cmrl::agents
