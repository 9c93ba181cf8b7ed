#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmrl/autodiff.hpp"

namespace cmrl::nn {

using ad::Graph;
using ad::NodeId;
using ad::Shape;
using ad::Tensor;

enum class InitKind {
  kUniformFanIn,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = last dim
  kZero,
  kIdentity,      // square matrices only
};

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::kUniformFanIn;
};

// Ordered, name-addressable learnable tensors plus Adam moments.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor adam_m;
    Tensor adam_v;
  };

  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

  std::int64_t step_count() const noexcept { return step_count_; }
  void set_step_count(std::int64_t s) noexcept { step_count_ = s; }

  // Values, moments, names and step count identical bit for bit.
  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_count_ = 0;
};

ParamStore init_params(const std::vector<ParamSpec>& specs, std::mt19937_64& rng);

using GradMap = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Parameters without an entry in grads are left untouched, moments included.
void adam_step(ParamStore& store, const GradMap& grads, const AdamConfig& cfg);

double global_norm(const GradMap& grads);
// Rescales grads in place so their global norm is at most max_norm. Returns
// the pre-clip norm.
double clip_global_norm(GradMap& grads, double max_norm);

// Leaves for every store entry on one graph.
class BoundParams {
 public:
  BoundParams(Graph& g, const ParamStore& store);
  // Binds names to already existing nodes (gradient checks).
  explicit BoundParams(std::map<std::string, NodeId> ids) : ids_(std::move(ids)) {}
  NodeId operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return ids_.count(name) != 0; }
  // Gradients keyed by parameter name; parameters without gradient omitted.
  GradMap collect(const ad::Gradients& grads) const;

 private:
  std::map<std::string, NodeId> ids_;
};

struct LstmParams {
  NodeId w_ih;  // [4H, I]
  NodeId w_hh;  // [4H, H]
  NodeId b;     // [4H]
  int input_size = 0;
  int hidden_size = 0;
};

struct LstmState {
  NodeId h;  // [B, H]
  NodeId c;  // [B, H]
};

// Parameter specs for an LSTM under `prefix` ("<prefix>/W_ih" etc.).
std::vector<ParamSpec> lstm_param_specs(const std::string& prefix, int input_size, int hidden_size);
LstmParams bind_lstm(const BoundParams& bound, const Graph& g, const std::string& prefix);

// Gate rows ordered (input, forget, cell candidate, output).
LstmState lstm_step(Graph& g, const LstmParams& p, NodeId x, const LstmState& s);

struct HeadParams {
  NodeId w_pi;  // [A, H]
  NodeId b_pi;  // [A]
  NodeId w_v;   // [1, H]
  NodeId b_v;   // [1]
};

std::vector<ParamSpec> head_param_specs(const std::string& prefix, int hidden_size, int actions);
HeadParams bind_head(const BoundParams& bound, const std::string& prefix);

inline constexpr double kProbFloor = 1e-8;

struct PolicyNodes {
  NodeId probs;  // [B, A], floored and renormalized
  NodeId value;  // [B, 1]
};

PolicyNodes apply_head(Graph& g, const HeadParams& p, NodeId h);

// Broadcasts a [1, n] (or [n]) node to [rows, n].
NodeId repeat_rows(Graph& g, NodeId row, int rows);

}  // namespace cmrl::nn
