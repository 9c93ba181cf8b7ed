#include "cmrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmrl::nn {

void ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  Tensor zeros(value.shape());
  entries_.push_back(Entry{std::move(name), std::move(value), zeros, zeros});
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second];
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const { return entry(name).value; }
Tensor& ParamStore::get(const std::string& name) { return entry(name).value; }

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (step_count_ != other.step_count_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Entry& a = entries_[i];
    const Entry& b = other.entries_[i];
    if (a.name != b.name || !(a.value == b.value) || !(a.adam_m == b.adam_m) ||
        !(a.adam_v == b.adam_v)) {
      return false;
    }
  }
  return true;
}

ParamStore init_params(const std::vector<ParamSpec>& specs, std::mt19937_64& rng) {
  ParamStore store;
  for (const ParamSpec& s : specs) {
    Tensor t(s.shape);
    switch (s.init) {
      case InitKind::kZero:
        break;
      case InitKind::kIdentity: {
        if (s.shape.size() != 2 || s.shape[0] != s.shape[1]) {
          throw std::invalid_argument("identity init needs a square matrix: " + s.name);
        }
        for (int i = 0; i < s.shape[0]; ++i) t.at(i, i) = 1.0;
        break;
      }
      case InitKind::kUniformFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.shape.back()));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : t.data()) v = u(rng);
        break;
      }
    }
    store.add(s.name, std::move(t));
  }
  return store;
}

void adam_step(ParamStore& store, const GradMap& grads, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (g.shape() != store.get(name).shape()) {
      throw ad::ShapeError("adam_step: gradient for " + name + " has shape " +
                           ad::shape_str(g.shape()) + ", parameter has " +
                           ad::shape_str(store.get(name).shape()));
    }
  }
  store.set_step_count(store.step_count() + 1);
  const double t = static_cast<double>(store.step_count());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : store.entries()) {
    auto it = grads.find(e.name);
    if (it == grads.end()) continue;
    const auto g = it->second.data();
    auto w = e.value.data();
    auto m = e.adam_m.data();
    auto v = e.adam_v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

double global_norm(const GradMap& grads) {
  // std::map iterates in name order, independent of store ordering.
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double x : g.data()) sq += x * x;
  }
  return std::sqrt(sq);
}

double clip_global_norm(GradMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& x : g.data()) x *= s;
    }
  }
  return norm;
}

BoundParams::BoundParams(Graph& g, const ParamStore& store) {
  for (const auto& e : store.entries()) ids_.emplace(e.name, g.variable(e.value));
}

NodeId BoundParams::operator[](const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw std::out_of_range("parameter not bound: " + name);
  return it->second;
}

GradMap BoundParams::collect(const ad::Gradients& grads) const {
  GradMap out;
  for (const auto& [name, id] : ids_) {
    if (const Tensor* t = grads.find(id)) out.emplace(name, *t);
  }
  return out;
}

std::vector<ParamSpec> lstm_param_specs(const std::string& prefix, int input_size,
                                        int hidden_size) {
  return {
      {prefix + "/W_ih", {4 * hidden_size, input_size}, InitKind::kUniformFanIn},
      {prefix + "/W_hh", {4 * hidden_size, hidden_size}, InitKind::kUniformFanIn},
      {prefix + "/b", {4 * hidden_size}, InitKind::kZero},
  };
}

LstmParams bind_lstm(const BoundParams& bound, const Graph& g, const std::string& prefix) {
  LstmParams p;
  p.w_ih = bound[prefix + "/W_ih"];
  p.w_hh = bound[prefix + "/W_hh"];
  p.b = bound[prefix + "/b"];
  p.input_size = g.value(p.w_ih).dim(1);
  p.hidden_size = g.value(p.w_hh).dim(1);
  return p;
}

LstmState lstm_step(Graph& g, const LstmParams& p, NodeId x, const LstmState& s) {
  const int hs = p.hidden_size;
  const NodeId gates =
      g.add(g.add(g.matmul(x, p.w_ih, true), g.matmul(s.h, p.w_hh, true)), p.b);
  const NodeId i = g.sigmoid(g.slice(gates, 1, 0, hs));
  const NodeId f = g.sigmoid(g.slice(gates, 1, hs, 2 * hs));
  const NodeId cand = g.tanh(g.slice(gates, 1, 2 * hs, 3 * hs));
  const NodeId o = g.sigmoid(g.slice(gates, 1, 3 * hs, 4 * hs));
  const NodeId c = g.add(g.mul(f, s.c), g.mul(i, cand));
  const NodeId h = g.mul(o, g.tanh(c));
  return {h, c};
}

std::vector<ParamSpec> head_param_specs(const std::string& prefix, int hidden_size,
                                        int actions) {
  return {
      {prefix + "/W_pi", {actions, hidden_size}, InitKind::kUniformFanIn},
      {prefix + "/b_pi", {actions}, InitKind::kZero},
      {prefix + "/W_v", {1, hidden_size}, InitKind::kUniformFanIn},
      {prefix + "/b_v", {1}, InitKind::kZero},
  };
}

HeadParams bind_head(const BoundParams& bound, const std::string& prefix) {
  return {bound[prefix + "/W_pi"], bound[prefix + "/b_pi"], bound[prefix + "/W_v"],
          bound[prefix + "/b_v"]};
}

PolicyNodes apply_head(Graph& g, const HeadParams& p, NodeId h) {
  const NodeId logits = g.add(g.matmul(h, p.w_pi, true), p.b_pi);
  const int actions = g.value(logits).dim(1);
  const double norm = 1.0 + static_cast<double>(actions) * kProbFloor;
  const NodeId probs =
      g.scale(g.add_scalar(g.softmax(logits, 1), kProbFloor), 1.0 / norm);
  const NodeId value = g.add(g.matmul(h, p.w_v, true), p.b_v);
  return {probs, value};
}

NodeId repeat_rows(Graph& g, NodeId row, int rows) {
  const Tensor& r = g.value(row);
  return g.add(g.constant(Tensor::matrix(rows, r.shape().back())), row);
}

}  // namespace cmrl::nn
