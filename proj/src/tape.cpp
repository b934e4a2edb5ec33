#include "cohft/tape.hpp"

#include <cstring>

namespace cohft {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an unbound Var");
  return tape_->value(*this);
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw std::invalid_argument("variable is not recorded on this tape");
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.defined()) throw std::invalid_argument("leaf value is undefined");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::apply(const char* op, std::initializer_list<Var> inputs, ForwardFn forward, BackwardFn backward) {
  return apply(op, std::vector<Var>(inputs), std::move(forward), std::move(backward));
}

Var Tape::apply(const char* op, const std::vector<Var>& inputs, ForwardFn forward, BackwardFn backward) {
  Node node;
  node.op = op;
  std::vector<const Tensor*> refs;
  refs.reserve(inputs.size());
  for (const auto& v : inputs) {
    check_owned(v);
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
    refs.push_back(&nodes_[v.id()].value);
  }
  node.value = forward(refs);
  node.forward = std::move(forward);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const auto& n = nodes_[v.id()];
  return n.grad.defined() ? n.grad : Tensor::zeros(n.value.shape());
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id()].value.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(nodes_[loss.id()].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[loss.id()].grad = Tensor::full(nodes_[loss.id()].value.shape(), 1.0);

  std::vector<const Tensor*> refs;
  std::vector<Tensor*> grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.grad.defined() || !node.backward) continue;
    refs.clear();
    grads.clear();
    for (auto in : node.inputs) {
      Node& src = nodes_[in];
      refs.push_back(&src.value);
      if (src.requires_grad) {
        if (!src.grad.defined()) src.grad = Tensor::zeros(src.value.shape());
        grads.push_back(&src.grad);
      } else {
        grads.push_back(nullptr);
      }
    }
    if (!fault_op_.empty() && fault_op_ == node.op) {
      Tensor scaled = node.grad;
      for (auto& g : scaled.data()) g *= fault_scale_;
      node.backward(refs, node.value, scaled, grads);
    } else {
      node.backward(refs, node.value, node.grad, grads);
    }
    // Interior adjoints are no longer needed once propagated.
    if (!node.inputs.empty()) node.grad = Tensor();
  }
}

bool Tape::replay_matches() const {
  std::vector<Tensor> values(nodes_.size());
  std::vector<const Tensor*> refs;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.forward) {
      values[id] = node.value;
      continue;
    }
    refs.clear();
    for (auto in : node.inputs) refs.push_back(&values[in]);
    values[id] = node.forward(refs);
    const auto& a = values[id].vec();
    const auto& b = node.value.vec();
    if (values[id].shape() != node.value.shape() ||
        std::memcmp(a.data(), b.data(), a.size() * sizeof(Real)) != 0) {
      return false;
    }
  }
  return true;
}

void Tape::inject_adjoint_fault(std::string op, Real scale) {
  fault_op_ = std::move(op);
  fault_scale_ = scale;
}

}  // namespace cohft
