#include "seqhgnn/tensor/tape.hpp"

#include <cstring>

#include "seqhgnn/errors.hpp"

namespace seqhgnn {

template <typename Real>
void Parameter<Real>::zero_grad() {
  for (auto& g : grad.data()) g = Real(0);
}

template <typename Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape_->value(id_);
}

template <typename Real>
bool Var<Real>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename Real>
const Tensor<Real>& Var<Real>::grad() const {
  return tape_->grad(id_);
}

template <typename Real>
Var<Real> Tape<Real>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  n.leaf = true;
  return push(std::move(n));
}

template <typename Real>
Var<Real> Tape<Real>::variable(Tensor<Real> value) {
  Node n;
  n.value = std::move(value);
  n.op = "variable";
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename Real>
Var<Real> Tape<Real>::param(Parameter<Real>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<Real>(this, it->second);
  Node n;
  n.value = p.value;
  n.op = "param";
  n.leaf = true;
  n.requires_grad = p.trainable;
  n.param = &p;
  auto v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <typename Real>
Var<Real> Tape<Real>::record(const char* op, Tensor<Real> value, std::initializer_list<Var<Real>> inputs,
                             BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var<Real>>(inputs), std::move(backward));
}

template <typename Real>
Var<Real> Tape<Real>::record(const char* op, Tensor<Real> value, const std::vector<Var<Real>>& inputs,
                             BackwardFn backward) {
  if (consumed_) throw Error(std::string("cannot record '") + op + "' on a consumed tape");
  if (!value.all_finite()) throw NonFiniteError(std::string("non-finite value produced by '") + op + "'");
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const auto& in : inputs) {
    if (in.tape() != this) throw Error(std::string("input to '") + op + "' belongs to another tape");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename Real>
Tensor<Real>& Tape<Real>::ensure_grad(std::size_t id) {
  auto& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<Real>::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename Real>
const Tensor<Real>& Tape<Real>::grad(std::size_t id) {
  return ensure_grad(id);
}

template <typename Real>
Tensor<Real>* Tape<Real>::grad_sink(const Var<Real>& v) {
  if (!nodes_[v.id()].requires_grad) return nullptr;
  return &ensure_grad(v.id());
}

template <typename Real>
void Tape<Real>::inject_grad_fault(std::string op, Real factor) {
  fault_ = std::make_pair(std::move(op), factor);
}

template <typename Real>
void Tape<Real>::backward(const Var<Real>& loss) {
  if (consumed_) throw Error("backward called twice on a consumed tape");
  if (loss.tape() != this) throw Error("loss belongs to another tape");
  if (nodes_[loss.id()].value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(nodes_[loss.id()].value.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;

  ensure_grad(loss.id())[0] = Real(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    if (fault_ && fault_->first == n.op) {
      for (auto& g : n.grad.data()) g *= fault_->second;
    }
    // Rules only write into earlier nodes, so the reference stays valid.
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (!n.leaf || !n.requires_grad) continue;
    if (!n.has_grad) {
      n.grad = Tensor<Real>::zeros(n.value.shape());
      n.has_grad = true;
    }
    if (n.param) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

template struct Parameter<float>;
template struct Parameter<double>;
template struct Parameter<long double>;
template class Var<float>;
template class Var<double>;
template class Var<long double>;
template class Tape<float>;
template class Tape<double>;
template class Tape<long double>;

}  // namespace seqhgnn
