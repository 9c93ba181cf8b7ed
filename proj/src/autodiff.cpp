#include "cmrl/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace cmrl::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t product(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

// Views a tensor as [outer, extent, inner] around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

int normalize_axis(const Shape& s, int axis, std::string_view op) {
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  }
  return a;
}

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(s[i]);
  v.extent = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) {
    v.inner *= static_cast<std::size_t>(s[i]);
  }
  return v;
}

[[noreturn]] void mismatch(Op op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + shape_str(a) +
                   " vs " + shape_str(b));
}

bool is_bias_row(const Shape& a, const Shape& b) {
  if (a.size() != 2) return false;
  if (b.size() == 1) return b[0] == a[1];
  return b.size() == 2 && b[0] == 1 && b[1] == a[1];
}

void accumulate(std::vector<Tensor>& grads, const std::vector<bool>& needs, NodeId id,
                const Tensor& shape_like, const std::function<void(std::span<double>)>& fn) {
  if (!needs[static_cast<std::size_t>(id)]) return;
  Tensor& g = grads[static_cast<std::size_t>(id)];
  if (g.size() == 0) g = Tensor(shape_like.shape());
  fn(g.data());
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
  if (product(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
  }
}

int Tensor::rows() const noexcept {
  if (shape_.size() >= 2) {
    return static_cast<int>(data_.size() / static_cast<std::size_t>(shape_.back()));
  }
  return 1;
}

int Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

void assert_finite(const Tensor& t, std::string_view context) {
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      std::ostringstream os;
      if (!context.empty()) os << context << ": ";
      os << "non-finite value " << d[i] << " at index " << i << " of tensor "
         << shape_str(t.shape());
      throw NonFiniteError(i, os.str());
    }
  }
}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kNeg: return "neg";
    case Op::kDivScalar: return "div_scalar";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kSquare: return "square";
    case Op::kSqrt: return "sqrt";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kSum: return "sum";
    case Op::kSumAxis: return "sum_axis";
    case Op::kMean: return "mean";
    case Op::kMax: return "max";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kStack: return "stack";
  }
  return "unknown";
}

const Tensor* Gradients::find(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= grads_.size()) return nullptr;
  const Tensor& g = grads_[static_cast<std::size_t>(id)];
  return g.size() == 0 ? nullptr : &g;
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::out_of_range("graph node " + std::to_string(id) + " does not exist");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

NodeId Graph::push(Node n) {
  for (NodeId in : n.inputs) {
    if (node(in).requires_grad) n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool transpose_b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.rank() != 2 || y.rank() != 2) mismatch(Op::kMatMul, x.shape(), y.shape());
  const int m = x.dim(0), k = x.dim(1);
  const int kb = transpose_b ? y.dim(1) : y.dim(0);
  const int n = transpose_b ? y.dim(0) : y.dim(1);
  if (k != kb) mismatch(Op::kMatMul, x.shape(), y.shape());
  Node out;
  out.op = Op::kMatMul;
  out.inputs = {a, b};
  out.transpose_b = transpose_b;
  out.value = Tensor({m, n});
  MapMat c(out.value.data().data(), m, n);
  ConstMapMat xa(x.data().data(), m, k);
  ConstMapMat yb(y.data().data(), y.dim(0), y.dim(1));
  if (transpose_b) {
    c.noalias() = xa * yb.transpose();
  } else {
    c.noalias() = xa * yb;
  }
  return push(std::move(out));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  Node out;
  out.op = Op::kAdd;
  out.inputs = {a, b};
  out.value = x;
  auto o = out.value.data();
  const auto yd = y.data();
  if (x.shape() == y.shape()) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += yd[i];
  } else if (is_bias_row(x.shape(), y.shape())) {
    const std::size_t n = static_cast<std::size_t>(x.dim(1));
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += yd[i % n];
  } else {
    mismatch(Op::kAdd, x.shape(), y.shape());
  }
  return push(std::move(out));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) mismatch(Op::kSub, x.shape(), y.shape());
  Node out;
  out.op = Op::kSub;
  out.inputs = {a, b};
  out.value = x;
  auto o = out.value.data();
  const auto yd = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= yd[i];
  return push(std::move(out));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) mismatch(Op::kMul, x.shape(), y.shape());
  Node out;
  out.op = Op::kMul;
  out.inputs = {a, b};
  out.value = x;
  auto o = out.value.data();
  const auto yd = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= yd[i];
  return push(std::move(out));
}

NodeId Graph::unary(Op op, NodeId a) {
  Node out;
  out.op = op;
  out.inputs = {a};
  out.value = value(a);
  auto o = out.value.data();
  switch (op) {
    case Op::kNeg:
      for (double& v : o) v = -v;
      break;
    case Op::kSquare:
      for (double& v : o) v = v * v;
      break;
    case Op::kSqrt:
      for (double& v : o) v = std::sqrt(v);
      break;
    case Op::kExp:
      for (double& v : o) v = std::exp(v);
      break;
    case Op::kLog:
      for (double& v : o) v = std::log(v);
      break;
    case Op::kSigmoid:
      for (double& v : o) v = 1.0 / (1.0 + std::exp(-v));
      break;
    case Op::kTanh:
      for (double& v : o) v = std::tanh(v);
      break;
    default:
      throw std::logic_error("not a unary op");
  }
  return push(std::move(out));
}

NodeId Graph::neg(NodeId a) { return unary(Op::kNeg, a); }
NodeId Graph::square(NodeId a) { return unary(Op::kSquare, a); }
NodeId Graph::sqrt(NodeId a) { return unary(Op::kSqrt, a); }
NodeId Graph::exp(NodeId a) { return unary(Op::kExp, a); }
NodeId Graph::log(NodeId a) { return unary(Op::kLog, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(Op::kSigmoid, a); }
NodeId Graph::tanh(NodeId a) { return unary(Op::kTanh, a); }

NodeId Graph::div_scalar(NodeId a, double divisor) {
  if (divisor == 0.0) throw std::invalid_argument("div_scalar: division by zero");
  Node out;
  out.op = Op::kDivScalar;
  out.inputs = {a};
  out.scalar = divisor;
  out.value = value(a);
  for (double& v : out.value.data()) v /= divisor;
  return push(std::move(out));
}

NodeId Graph::scale(NodeId a, double factor) {
  Node out;
  out.op = Op::kScale;
  out.inputs = {a};
  out.scalar = factor;
  out.value = value(a);
  for (double& v : out.value.data()) v *= factor;
  return push(std::move(out));
}

NodeId Graph::add_scalar(NodeId a, double shift) {
  Node out;
  out.op = Op::kAddScalar;
  out.inputs = {a};
  out.scalar = shift;
  out.value = value(a);
  for (double& v : out.value.data()) v += shift;
  return push(std::move(out));
}

NodeId Graph::softmax(NodeId a, int axis) {
  const Tensor& x = value(a);
  Node out;
  out.op = Op::kSoftmax;
  out.inputs = {a};
  out.axis = normalize_axis(x.shape(), axis, "softmax");
  out.value = x;
  const AxisView v = axis_view(x.shape(), out.axis);
  auto o = out.value.data();
  for (std::size_t p = 0; p < v.outer; ++p) {
    for (std::size_t q = 0; q < v.inner; ++q) {
      const std::size_t base = p * v.extent * v.inner + q;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v.extent; ++j) m = std::max(m, o[base + j * v.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < v.extent; ++j) {
        double& e = o[base + j * v.inner];
        e = std::exp(e - m);
        z += e;
      }
      for (std::size_t j = 0; j < v.extent; ++j) o[base + j * v.inner] /= z;
    }
  }
  return push(std::move(out));
}

NodeId Graph::log_softmax(NodeId a, int axis) {
  const Tensor& x = value(a);
  Node out;
  out.op = Op::kLogSoftmax;
  out.inputs = {a};
  out.axis = normalize_axis(x.shape(), axis, "log_softmax");
  out.value = x;
  const AxisView v = axis_view(x.shape(), out.axis);
  auto o = out.value.data();
  for (std::size_t p = 0; p < v.outer; ++p) {
    for (std::size_t q = 0; q < v.inner; ++q) {
      const std::size_t base = p * v.extent * v.inner + q;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v.extent; ++j) m = std::max(m, o[base + j * v.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < v.extent; ++j) z += std::exp(o[base + j * v.inner] - m);
      const double lse = m + std::log(z);
      for (std::size_t j = 0; j < v.extent; ++j) o[base + j * v.inner] -= lse;
    }
  }
  return push(std::move(out));
}

NodeId Graph::sum(NodeId a) {
  Node out;
  out.op = Op::kSum;
  out.inputs = {a};
  const auto d = value(a).data();
  out.value = Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0));
  return push(std::move(out));
}

NodeId Graph::mean(NodeId a) {
  Node out;
  out.op = Op::kMean;
  out.inputs = {a};
  const auto d = value(a).data();
  out.value = Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0) /
                             static_cast<double>(d.size()));
  return push(std::move(out));
}

NodeId Graph::sum(NodeId a, int axis) {
  const Tensor& x = value(a);
  Node out;
  out.op = Op::kSumAxis;
  out.inputs = {a};
  out.axis = normalize_axis(x.shape(), axis, "sum");
  Shape s = x.shape();
  s[static_cast<std::size_t>(out.axis)] = 1;
  out.value = Tensor(s);
  const AxisView v = axis_view(x.shape(), out.axis);
  const auto xd = x.data();
  auto o = out.value.data();
  for (std::size_t p = 0; p < v.outer; ++p) {
    for (std::size_t q = 0; q < v.inner; ++q) {
      double acc = 0.0;
      for (std::size_t j = 0; j < v.extent; ++j) acc += xd[(p * v.extent + j) * v.inner + q];
      o[p * v.inner + q] = acc;
    }
  }
  return push(std::move(out));
}

NodeId Graph::max(NodeId a, int axis) {
  const Tensor& x = value(a);
  Node out;
  out.op = Op::kMax;
  out.inputs = {a};
  out.axis = normalize_axis(x.shape(), axis, "max");
  Shape s = x.shape();
  s[static_cast<std::size_t>(out.axis)] = 1;
  out.value = Tensor(s);
  const AxisView v = axis_view(x.shape(), out.axis);
  out.argmax.resize(v.outer * v.inner);
  const auto xd = x.data();
  auto o = out.value.data();
  for (std::size_t p = 0; p < v.outer; ++p) {
    for (std::size_t q = 0; q < v.inner; ++q) {
      std::size_t best = 0;
      double bv = xd[p * v.extent * v.inner + q];
      for (std::size_t j = 1; j < v.extent; ++j) {
        const double c = xd[(p * v.extent + j) * v.inner + q];
        if (c > bv) {
          bv = c;
          best = j;
        }
      }
      o[p * v.inner + q] = bv;
      out.argmax[p * v.inner + q] = static_cast<int>(best);
    }
  }
  return push(std::move(out));
}

NodeId Graph::concat(std::span<const NodeId> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = value(parts[0]).shape();
  const int ax = normalize_axis(first, axis, "concat");
  Shape s = first;
  int total = 0;
  for (NodeId id : parts) {
    const Shape& p = value(id).shape();
    if (p.size() != first.size()) mismatch(Op::kConcat, first, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (static_cast<int>(i) != ax && p[i] != first[i]) mismatch(Op::kConcat, first, p);
    }
    total += p[static_cast<std::size_t>(ax)];
  }
  s[static_cast<std::size_t>(ax)] = total;
  Node out;
  out.op = Op::kConcat;
  out.inputs.assign(parts.begin(), parts.end());
  out.axis = ax;
  out.value = Tensor(s);
  const AxisView v = axis_view(s, ax);
  auto o = out.value.data();
  std::size_t offset = 0;
  for (NodeId id : parts) {
    const Tensor& t = value(id);
    const std::size_t ext = static_cast<std::size_t>(t.dim(ax));
    const auto td = t.data();
    const std::size_t chunk = ext * v.inner;
    for (std::size_t p = 0; p < v.outer; ++p) {
      std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(p * chunk), chunk,
                  o.begin() + static_cast<std::ptrdiff_t>((p * v.extent + offset) * v.inner));
    }
    offset += ext;
  }
  return push(std::move(out));
}

NodeId Graph::slice(NodeId a, int axis, int begin, int end) {
  const Tensor& x = value(a);
  const int ax = normalize_axis(x.shape(), axis, "slice");
  if (begin < 0 || end > x.dim(ax) || begin >= end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis " + std::to_string(ax) + " of shape " +
                     shape_str(x.shape()));
  }
  Shape s = x.shape();
  s[static_cast<std::size_t>(ax)] = end - begin;
  Node out;
  out.op = Op::kSlice;
  out.inputs = {a};
  out.axis = ax;
  out.begin = begin;
  out.end = end;
  out.value = Tensor(s);
  const AxisView v = axis_view(x.shape(), ax);
  const std::size_t chunk = static_cast<std::size_t>(end - begin) * v.inner;
  const auto xd = x.data();
  auto o = out.value.data();
  for (std::size_t p = 0; p < v.outer; ++p) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(
                                 (p * v.extent + static_cast<std::size_t>(begin)) * v.inner),
                chunk, o.begin() + static_cast<std::ptrdiff_t>(p * chunk));
  }
  return push(std::move(out));
}

NodeId Graph::stack(std::span<const NodeId> parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& first = value(parts[0]).shape();
  Shape s;
  s.push_back(static_cast<int>(parts.size()));
  s.insert(s.end(), first.begin(), first.end());
  Node out;
  out.op = Op::kStack;
  out.inputs.assign(parts.begin(), parts.end());
  out.value = Tensor(s);
  auto o = out.value.data();
  const std::size_t n = product(first);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = value(parts[i]);
    if (t.shape() != first) mismatch(Op::kStack, first, t.shape());
    std::copy(t.data().begin(), t.data().end(),
              o.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return push(std::move(out));
}

Gradients Graph::backward(NodeId root) const {
  const Tensor& r = value(root);
  if (r.size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_str(r.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> needs(nodes_.size(), false);
  for (std::size_t i = 0; i < nodes_.size(); ++i) needs[i] = nodes_[i].requires_grad;
  if (!needs[static_cast<std::size_t>(root)]) return Gradients(std::move(grads));
  grads[static_cast<std::size_t>(root)] = Tensor(r.shape(), 1.0);

  for (NodeId id = root; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::kLeaf) continue;
    const Tensor& gout = grads[static_cast<std::size_t>(id)];
    if (gout.size() == 0) continue;
    const auto g = gout.data();
    const auto y = n.value.data();

    switch (n.op) {
      case Op::kMatMul: {
        const Tensor& x = value(n.inputs[0]);
        const Tensor& w = value(n.inputs[1]);
        const int m = x.dim(0), k = x.dim(1);
        const int cn = n.value.dim(1);
        ConstMapMat gm(g.data(), m, cn);
        ConstMapMat xm(x.data().data(), m, k);
        ConstMapMat wm(w.data().data(), w.dim(0), w.dim(1));
        accumulate(grads, needs, n.inputs[0], x, [&](std::span<double> gx) {
          MapMat gxm(gx.data(), m, k);
          if (n.transpose_b) {
            gxm.noalias() += gm * wm;
          } else {
            gxm.noalias() += gm * wm.transpose();
          }
        });
        accumulate(grads, needs, n.inputs[1], w, [&](std::span<double> gw) {
          MapMat gwm(gw.data(), w.dim(0), w.dim(1));
          if (n.transpose_b) {
            gwm.noalias() += gm.transpose() * xm;
          } else {
            gwm.noalias() += xm.transpose() * gm;
          }
        });
        break;
      }
      case Op::kAdd: {
        const Tensor& x = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        accumulate(grads, needs, n.inputs[0], x, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
        });
        accumulate(grads, needs, n.inputs[1], b, [&](std::span<double> gb) {
          if (gb.size() == g.size()) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
          } else {
            const std::size_t c = gb.size();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
          }
        });
        break;
      }
      case Op::kSub: {
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
        });
        accumulate(grads, needs, n.inputs[1], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= g[i];
        });
        break;
      }
      case Op::kMul: {
        const auto a = value(n.inputs[0]).data();
        const auto b = value(n.inputs[1]).data();
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * b[i];
        });
        accumulate(grads, needs, n.inputs[1], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * a[i];
        });
        break;
      }
      case Op::kNeg:
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= g[i];
        });
        break;
      case Op::kDivScalar:
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / n.scalar;
        });
        break;
      case Op::kScale:
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * n.scalar;
        });
        break;
      case Op::kAddScalar:
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
        });
        break;
      case Op::kSquare: {
        const auto x = value(n.inputs[0]).data();
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * x[i] * g[i];
        });
        break;
      }
      case Op::kSqrt:
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / (2.0 * y[i]);
        });
        break;
      case Op::kExp:
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i];
        });
        break;
      case Op::kLog: {
        const auto x = value(n.inputs[0]).data();
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / x[i];
        });
        break;
      }
      case Op::kSigmoid:
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        });
        break;
      case Op::kTanh:
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        });
        break;
      case Op::kSoftmax:
      case Op::kLogSoftmax: {
        const AxisView v = axis_view(n.value.shape(), n.axis);
        const bool log_form = n.op == Op::kLogSoftmax;
        accumulate(grads, needs, n.inputs[0], n.value, [&](std::span<double> gx) {
          for (std::size_t p = 0; p < v.outer; ++p) {
            for (std::size_t q = 0; q < v.inner; ++q) {
              const std::size_t base = p * v.extent * v.inner + q;
              double dot = 0.0;
              for (std::size_t j = 0; j < v.extent; ++j) {
                const std::size_t i = base + j * v.inner;
                dot += log_form ? g[i] : g[i] * y[i];
              }
              for (std::size_t j = 0; j < v.extent; ++j) {
                const std::size_t i = base + j * v.inner;
                gx[i] += log_form ? g[i] - std::exp(y[i]) * dot : y[i] * (g[i] - dot);
              }
            }
          }
        });
        break;
      }
      case Op::kSum:
        accumulate(grads, needs, n.inputs[0], value(n.inputs[0]), [&](std::span<double> gx) {
          for (double& v : gx) v += g[0];
        });
        break;
      case Op::kMean: {
        const double inv = 1.0 / static_cast<double>(value(n.inputs[0]).size());
        accumulate(grads, needs, n.inputs[0], value(n.inputs[0]), [&](std::span<double> gx) {
          for (double& v : gx) v += g[0] * inv;
        });
        break;
      }
      case Op::kSumAxis:
      case Op::kMax: {
        const Tensor& x = value(n.inputs[0]);
        const AxisView v = axis_view(x.shape(), n.axis);
        accumulate(grads, needs, n.inputs[0], x, [&](std::span<double> gx) {
          for (std::size_t p = 0; p < v.outer; ++p) {
            for (std::size_t q = 0; q < v.inner; ++q) {
              const double go = g[p * v.inner + q];
              if (n.op == Op::kMax) {
                const auto j = static_cast<std::size_t>(n.argmax[p * v.inner + q]);
                gx[(p * v.extent + j) * v.inner + q] += go;
              } else {
                for (std::size_t j = 0; j < v.extent; ++j) gx[(p * v.extent + j) * v.inner + q] += go;
              }
            }
          }
        });
        break;
      }
      case Op::kConcat: {
        const AxisView v = axis_view(n.value.shape(), n.axis);
        std::size_t offset = 0;
        for (NodeId in : n.inputs) {
          const Tensor& t = value(in);
          const std::size_t ext = static_cast<std::size_t>(t.dim(n.axis));
          const std::size_t chunk = ext * v.inner;
          accumulate(grads, needs, in, t, [&](std::span<double> gx) {
            for (std::size_t p = 0; p < v.outer; ++p) {
              const std::size_t src = (p * v.extent + offset) * v.inner;
              for (std::size_t i = 0; i < chunk; ++i) gx[p * chunk + i] += g[src + i];
            }
          });
          offset += ext;
        }
        break;
      }
      case Op::kSlice: {
        const Tensor& x = value(n.inputs[0]);
        const AxisView v = axis_view(x.shape(), n.axis);
        const std::size_t chunk = static_cast<std::size_t>(n.end - n.begin) * v.inner;
        accumulate(grads, needs, n.inputs[0], x, [&](std::span<double> gx) {
          for (std::size_t p = 0; p < v.outer; ++p) {
            const std::size_t dst =
                (p * v.extent + static_cast<std::size_t>(n.begin)) * v.inner;
            for (std::size_t i = 0; i < chunk; ++i) gx[dst + i] += g[p * chunk + i];
          }
        });
        break;
      }
      case Op::kStack: {
        const std::size_t chunk = value(n.inputs[0]).size();
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          accumulate(grads, needs, n.inputs[k], value(n.inputs[k]), [&](std::span<double> gx) {
            for (std::size_t i = 0; i < chunk; ++i) gx[i] += g[k * chunk + i];
          });
        }
        break;
      }
      case Op::kLeaf:
        break;
    }
  }
  return Gradients(std::move(grads));
}

namespace {

double eval_loss(const LossBuilder& builder, std::span<const Tensor> params) {
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(g.variable(p));
  return g.value(builder(g, ids)).item();
}

}  // namespace

GradientCheckResult check_gradients_at(const LossBuilder& builder,
                                       std::span<const Tensor> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("check_gradients: eps must be positive");
  std::vector<Tensor> work(params.begin(), params.end());

  Graph g;
  std::vector<NodeId> ids;
  for (const Tensor& p : work) ids.push_back(g.variable(p));
  const NodeId loss = builder(g, ids);
  const double base = g.value(loss).item();
  if (eval_loss(builder, work) != base) {
    throw std::runtime_error("check_gradients: loss builder is not deterministic");
  }
  const Gradients grads = g.backward(loss);

  GradientCheckResult result;
  for (std::size_t p = 0; p < work.size(); ++p) {
    const Tensor* analytic = grads.find(ids[p]);
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + eps;
      const double up = eval_loss(builder, work);
      work[p][i] = orig - eps;
      const double down = eval_loss(builder, work);
      work[p][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic ? (*analytic)[i] : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      result.max_abs_analytic = std::max(result.max_abs_analytic, std::abs(a));
    }
  }
  return result;
}

GradientCheckResult check_gradients(const LossBuilder& builder,
                                    std::span<const Shape> param_shapes, std::mt19937_64& rng,
                                    double eps) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Tensor> params;
  for (const Shape& s : param_shapes) {
    Tensor t(s);
    for (double& v : t.data()) v = u(rng);
    params.push_back(std::move(t));
  }
  return check_gradients_at(builder, params, eps);
}

}  // namespace cmrl::ad
