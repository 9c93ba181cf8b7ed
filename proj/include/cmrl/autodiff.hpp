#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cmrl::ad {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t index, const std::string& what)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(int rows, int cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }

  // Matrix view: rank-1 tensors are a single row.
  int rows() const noexcept;
  int cols() const noexcept;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(int r, int c) noexcept {
    return data_[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
                 static_cast<std::size_t>(c)];
  }
  double at(int r, int c) const noexcept {
    return data_[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
                 static_cast<std::size_t>(c)];
  }
  double item() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws NonFiniteError naming the first NaN/Inf entry.
void assert_finite(const Tensor& t, std::string_view context = {});

enum class Op : std::uint8_t {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kDivScalar,
  kScale,
  kAddScalar,
  kSquare,
  kSqrt,
  kExp,
  kLog,
  kSigmoid,
  kTanh,
  kSoftmax,
  kLogSoftmax,
  kSum,
  kSumAxis,
  kMean,
  kMax,
  kConcat,
  kSlice,
  kStack,
};

std::string_view op_name(Op op);

using NodeId = std::int32_t;

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

  // nullptr when the node received no gradient (constant or detached).
  const Tensor* find(NodeId id) const;
  bool contains(NodeId id) const { return find(id) != nullptr; }

 private:
  std::vector<Tensor> grads_;
};

// Eager tape. Each op computes its output immediately and appends a node;
// backward() walks the tape in reverse append order.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId constant(Tensor value);
  NodeId variable(Tensor value);

  // a[m,k] x b[k,n], or a[m,k] x b[n,k]^T when transpose_b.
  NodeId matmul(NodeId a, NodeId b, bool transpose_b = false);
  // Equal shapes, or b a bias row ([n] or [1,n]) added to every row of a.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId div_scalar(NodeId a, double divisor);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double shift);
  NodeId square(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId softmax(NodeId a, int axis = -1);
  NodeId log_softmax(NodeId a, int axis = -1);
  // Full reduction to shape [1].
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  // Reductions over one axis keep that axis with extent 1.
  NodeId sum(NodeId a, int axis);
  NodeId max(NodeId a, int axis);
  NodeId concat(std::span<const NodeId> parts, int axis);
  NodeId concat(std::initializer_list<NodeId> parts, int axis) {
    return concat(std::span<const NodeId>(parts.begin(), parts.size()), axis);
  }
  NodeId slice(NodeId a, int axis, int begin, int end);
  // Stacks equally shaped inputs along a new leading axis.
  NodeId stack(std::span<const NodeId> parts);

  const Tensor& value(NodeId id) const { return node(id).value; }
  Op kind(NodeId id) const { return node(id).op; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse-mode sweep from a single-element root.
  Gradients backward(NodeId root) const;

 private:
  struct Node {
    Op op = Op::kLeaf;
    bool requires_grad = false;
    std::vector<NodeId> inputs;
    Tensor value;
    int axis = 0;
    int begin = 0;
    int end = 0;
    double scalar = 0.0;
    bool transpose_b = false;
    std::vector<int> argmax;
  };

  const Node& node(NodeId id) const;
  NodeId push(Node n);
  NodeId unary(Op op, NodeId a);

  std::vector<Node> nodes_;
};

// Maps parameter nodes to a scalar loss node; must be deterministic.
using LossBuilder = std::function<NodeId(Graph&, std::span<const NodeId>)>;

struct GradientCheckResult {
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
};

// Compares analytic gradients against central differences at parameters
// drawn uniformly from [-1, 1].
GradientCheckResult check_gradients(const LossBuilder& builder,
                                    std::span<const Shape> param_shapes,
                                    std::mt19937_64& rng, double eps = 1e-6);

// Same, at explicitly given parameter values.
GradientCheckResult check_gradients_at(const LossBuilder& builder,
                                       std::span<const Tensor> params,
                                       double eps = 1e-6);

}  // namespace cmrl::ad
