#pragma once

#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>

#include "seqhgnn/random.hpp"
#include "seqhgnn/tensor/tape.hpp"

namespace seqhgnn {

/// Owns every parameter of a model in creation order. Addresses are stable,
/// so modules keep raw pointers into the store.
template <typename Real>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<Real>& add(std::string name, Tensor<Real> value, bool trainable = true);
  Parameter<Real>& get(std::string_view name);
  const Parameter<Real>& get(std::string_view name) const;
  Parameter<Real>* find(std::string_view name);

  std::deque<Parameter<Real>>& all() { return params_; }
  const std::deque<Parameter<Real>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const;
  void zero_grad();

 private:
  std::deque<Parameter<Real>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename Real>
Tensor<Real> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class ParamStore<long double>;

}  // namespace seqhgnn
