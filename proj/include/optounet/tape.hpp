#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "optounet/tensor.hpp"

namespace optounet {

using NodeId = std::size_t;

template <typename Scalar>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
template <typename Scalar>
class Var {
 public:
  Var(Tape<Scalar>* tape, NodeId id) : tape_(tape), id_(id) {}

  NodeId id() const { return id_; }
  Tape<Scalar>* tape() const { return tape_; }
  const Tensor4<Scalar>& value() const { return tape_->value(*this); }
  const Dims& dims() const { return value().dims(); }

 private:
  Tape<Scalar>* tape_;
  NodeId id_;
};

/// Accumulation buffers handed to backward rules. grad(id) is zero-filled on
/// first use and summed into by every consumer of that node.
template <typename Scalar>
class GradSink {
 public:
  explicit GradSink(const Tape<Scalar>& tape)
      : tape_(tape), grads_(tape.size()) {}

  bool wants(NodeId id) const { return tape_.requires_grad(id); }

  Tensor4<Scalar>& grad(NodeId id) {
    auto& slot = grads_.at(id);
    if (!slot) slot.emplace(Tensor4<Scalar>::zeros(tape_.value(id).dims()));
    return *slot;
  }

  std::vector<std::optional<Tensor4<Scalar>>> release() && { return std::move(grads_); }

 private:
  const Tape<Scalar>& tape_;
  std::vector<std::optional<Tensor4<Scalar>>> grads_;
};

/// d(loss)/d(node) for every node the loss depends on.
template <typename Scalar>
class GradMap {
 public:
  explicit GradMap(std::vector<std::optional<Tensor4<Scalar>>> grads) : grads_(std::move(grads)) {}

  bool contains(const Var<Scalar>& v) const {
    return v.id() < grads_.size() && grads_[v.id()].has_value();
  }

  const Tensor4<Scalar>& at(const Var<Scalar>& v) const {
    if (!contains(v)) throw IdentityError("no gradient recorded for node " + std::to_string(v.id()));
    return *grads_[v.id()];
  }

  Tensor4<Scalar> take(const Var<Scalar>& v) {
    if (!contains(v)) throw IdentityError("no gradient recorded for node " + std::to_string(v.id()));
    Tensor4<Scalar> out = std::move(*grads_[v.id()]);
    grads_[v.id()].reset();
    return out;
  }

 private:
  std::vector<std::optional<Tensor4<Scalar>>> grads_;
};

/// Append-only record of evaluated operations. Inputs of a node always have
/// smaller ids, so reverse id order is a valid backward schedule.
template <typename Scalar>
class Tape {
 public:
  using Tensor = Tensor4<Scalar>;
  using BackwardFn = std::function<void(const Tensor& grad_out, GradSink<Scalar>& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked (parameters, check inputs).
  Var<Scalar> variable(Tensor value, std::string kind = "variable") {
    return push(std::move(kind), std::move(value), {}, nullptr, true);
  }

  /// Leaf that never receives a gradient (data, labels).
  Var<Scalar> constant(Tensor value) { return push("constant", std::move(value), {}, nullptr, false); }

  Var<Scalar> record(std::string kind, Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
    bool needs = false;
    for (NodeId in : inputs) {
      if (in >= nodes_.size()) throw IdentityError("input node " + std::to_string(in) + " is not on the tape");
      needs = needs || nodes_[in].requires_grad;
    }
    return push(std::move(kind), std::move(value), std::move(inputs), std::move(backward), needs);
  }

  /// Attaches the backward rule of a node that was recorded without one.
  void set_backward(NodeId id, BackwardFn backward) {
    auto& node = nodes_.at(id);
    if (node.backward) throw IdentityError("node " + std::to_string(id) + " already has a backward rule");
    node.backward = std::move(backward);
  }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const Tensor& value(const Var<Scalar>& v) const {
    check_owner(v);
    return nodes_[v.id()].value;
  }
  const std::string& kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  void check_owner(const Var<Scalar>& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw IdentityError("node " + std::to_string(v.id()) + " does not belong to this tape");
    }
  }

  GradMap<Scalar> backward(const Var<Scalar>& loss) const {
    check_owner(loss);
    const Tensor& out = nodes_[loss.id()].value;
    if (out.dims() != Dims{1, 1, 1, 1}) {
      throw ShapeError("backward needs a scalar loss, got dims " + out.dims().str());
    }
    GradSink<Scalar> sink(*this);
    sink.grad(loss.id())[0] = Scalar(1);
    std::vector<bool> live(nodes_.size(), false);
    live[loss.id()] = true;
    for (NodeId id = loss.id() + 1; id-- > 0;) {
      if (!live[id]) continue;
      const Node& node = nodes_[id];
      if (!node.requires_grad) continue;
      for (NodeId in : node.inputs) live[in] = live[in] || nodes_[in].requires_grad;
      if (node.backward) node.backward(sink.grad(id), sink);
    }
    return GradMap<Scalar>(std::move(sink).release());
  }

 private:
  struct Node {
    std::string kind;
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  Var<Scalar> push(std::string kind, Tensor value, std::vector<NodeId> inputs, BackwardFn backward,
                   bool requires_grad) {
    nodes_.push_back(Node{std::move(kind), std::move(value), std::move(inputs), std::move(backward),
                          requires_grad});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  // deque: push_back never moves existing nodes, so value() references stay valid
  std::deque<Node> nodes_;
};

template <typename Scalar>
GradMap<Scalar> backward(const Tape<Scalar>& tape, const Var<Scalar>& loss) {
  return tape.backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

enum class BinaryKind { Add, Sub, Mul, Div };

namespace detail {

// Ops append to the tape that owns their operands.
template <typename Scalar>
Tape<Scalar>& tape_of(const Var<Scalar>& v) {
  return *v.tape();
}

template <typename Scalar>
void check_same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.tape() != b.tape()) throw IdentityError("operands live on different tapes");
}

inline const char* binary_name(BinaryKind kind) {
  switch (kind) {
    case BinaryKind::Add: return "add";
    case BinaryKind::Sub: return "sub";
    case BinaryKind::Mul: return "mul";
    case BinaryKind::Div: return "div";
  }
  return "?";
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> ew_binary(const Var<Scalar>& a, const Var<Scalar>& b, BinaryKind kind) {
  detail::check_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.dims() != bv.dims()) {
    throw ShapeError(std::string(detail::binary_name(kind)) + ": dims " + av.dims().str() + " vs " +
                     bv.dims().str());
  }
  typename Tensor4<Scalar>::Array out;
  switch (kind) {
    case BinaryKind::Add: out = av.array() + bv.array(); break;
    case BinaryKind::Sub: out = av.array() - bv.array(); break;
    case BinaryKind::Mul: out = av.array() * bv.array(); break;
    case BinaryKind::Div: out = av.array() / bv.array(); break;
  }
  const NodeId ia = a.id();
  const NodeId ib = b.id();
  auto& tape = detail::tape_of(a);
  return tape.record(
      detail::binary_name(kind), Tensor4<Scalar>(av.dims(), std::move(out)), {ia, ib},
      [&tape, ia, ib, kind](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
        const auto& x = tape.value(ia).array();
        const auto& y = tape.value(ib).array();
        if (sink.wants(ia)) {
          auto& ga = sink.grad(ia).array();
          switch (kind) {
            case BinaryKind::Add:
            case BinaryKind::Sub: ga += g.array(); break;
            case BinaryKind::Mul: ga += g.array() * y; break;
            case BinaryKind::Div: ga += g.array() / y; break;
          }
        }
        if (sink.wants(ib)) {
          auto& gb = sink.grad(ib).array();
          switch (kind) {
            case BinaryKind::Add: gb += g.array(); break;
            case BinaryKind::Sub: gb -= g.array(); break;
            case BinaryKind::Mul: gb += g.array() * x; break;
            case BinaryKind::Div: gb -= g.array() * x / (y * y); break;
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  return ew_binary(a, b, BinaryKind::Add);
}
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  return ew_binary(a, b, BinaryKind::Sub);
}
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  return ew_binary(a, b, BinaryKind::Mul);
}
template <typename Scalar>
Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b) {
  return ew_binary(a, b, BinaryKind::Div);
}

/// scale * x + shift, elementwise.
template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& x, Scalar scale, Scalar shift) {
  const auto& xv = x.value();
  const NodeId ix = x.id();
  return detail::tape_of(x).record(
      "affine", Tensor4<Scalar>(xv.dims(), xv.array() * scale + shift), {ix},
      [ix, scale](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
        sink.grad(ix).array() += g.array() * scale;
      });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar c) {
  return affine(x, Scalar(1), c);
}

/// Sum of all elements as a (1,1,1,1) node. Accumulates serially in n-major
/// row-major order in double precision.
template <typename Scalar>
Var<Scalar> reduce_sum(const Var<Scalar>& x) {
  const auto& xv = x.value();
  double acc = 0.0;
  const Scalar* p = xv.data();
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(p[i]);
  const NodeId ix = x.id();
  return detail::tape_of(x).record(
      "sum", Tensor4<Scalar>::constant(Dims{1, 1, 1, 1}, static_cast<Scalar>(acc)), {ix},
      [ix](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) { sink.grad(ix).array() += g[0]; });
}

}  // namespace optounet
