#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqhgnn/tensor/tensor.hpp"

namespace seqhgnn {

/// A persistent learnable tensor. Gradients accumulate additively across
/// backward passes until the optimizer clears them.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  bool trainable = true;

  Parameter(std::string n, Tensor<Real> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<Real>::zeros(value.shape())) {}

  void zero_grad();
};

template <typename Real>
class Tape;

/// Handle to a node on a tape.
template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  /// Gradient after backward(); zeros for leaves that were never reached.
  const Tensor<Real>& grad() const;

  std::size_t id() const { return id_; }
  Tape<Real>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of a forward pass. Creation order is a topological
/// order, so backward simply walks the node list in reverse.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Real>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Tensor<Real> value);
  /// Free leaf that requires a gradient.
  Var<Real> variable(Tensor<Real> value);
  /// Leaf bound to a parameter; at most one node per parameter per tape.
  Var<Real> param(Parameter<Real>& p);

  /// Records an operation output. The backward rule is dropped when no
  /// input requires a gradient. Throws NonFiniteError on NaN/Inf output.
  Var<Real> record(const char* op, Tensor<Real> value, std::initializer_list<Var<Real>> inputs,
                   BackwardFn backward);
  Var<Real> record(const char* op, Tensor<Real> value, const std::vector<Var<Real>>& inputs,
                   BackwardFn backward);

  void backward(const Var<Real>& loss);
  bool consumed() const { return consumed_; }

  const Tensor<Real>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor<Real>& grad(std::size_t id);

  /// Gradient buffer of an input, or nullptr when that input needs none.
  Tensor<Real>* grad_sink(const Var<Real>& v);

  std::size_t size() const { return nodes_.size(); }

  /// Test hook: scales the incoming gradient of every `op` node by `factor`
  /// before its backward rule runs.
  void inject_grad_fault(std::string op, Real factor);

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    bool has_grad = false;
    const char* op = "";
    BackwardFn backward;
    Parameter<Real>* param = nullptr;
    bool leaf = false;
  };

  Var<Real> push(Node node);
  Tensor<Real>& ensure_grad(std::size_t id);

  std::deque<Node> nodes_;  // stable references across push_back
  std::unordered_map<const Parameter<Real>*, std::size_t> param_nodes_;
  std::optional<std::pair<std::string, Real>> fault_;
  bool consumed_ = false;
};

extern template struct Parameter<float>;
extern template struct Parameter<double>;
extern template struct Parameter<long double>;
extern template class Var<float>;
extern template class Var<double>;
extern template class Var<long double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class Tape<long double>;

}  // namespace seqhgnn
