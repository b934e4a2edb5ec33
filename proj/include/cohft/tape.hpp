#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cohft/tensor.hpp"

namespace cohft {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using TensorRefs = std::span<const Tensor* const>;

// Forward kernel: inputs -> output. Must be pure so the tape can be replayed.
using ForwardFn = std::function<Tensor(TensorRefs inputs)>;

// Adjoint kernel. `grads[i]` is an accumulator shaped like input i, or null
// when input i does not need a gradient. Kernels add into the accumulators.
using BackwardFn =
    std::function<void(TensorRefs inputs, const Tensor& output, const Tensor& grad_out, std::span<Tensor* const> grads)>;

// Ordered record of primitive applications. Nodes are appended in evaluation
// order, so reverse index order is a reverse topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Evaluates `forward` on the input values and records the node.
  Var apply(const char* op, std::initializer_list<Var> inputs, ForwardFn forward, BackwardFn backward);
  Var apply(const char* op, const std::vector<Var>& inputs, ForwardFn forward, BackwardFn backward);

  // Reverse sweep from a scalar `loss` recorded on this tape. Clears previous gradients.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient accumulated by the last backward(); zeros when none reached the node.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }

  // Re-executes every recorded forward kernel from the leaf values and reports
  // whether each output is reproduced bit-exactly.
  bool replay_matches() const;

  // Test hook: every adjoint produced by nodes named `op` is scaled by `scale`.
  void inject_adjoint_fault(std::string op, Real scale);

 private:
  struct Node {
    const char* op = "leaf";
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;
  std::string fault_op_;
  Real fault_scale_ = 1;
};

}  // namespace cohft
