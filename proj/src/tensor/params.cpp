#include "seqhgnn/tensor/params.hpp"

#include <cmath>

#include "seqhgnn/errors.hpp"

namespace seqhgnn {

template <typename Real>
Parameter<Real>& ParamStore<Real>::add(std::string name, Tensor<Real> value, bool trainable) {
  if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.emplace_back(std::move(name), std::move(value));
  params_.back().trainable = trainable;
  return params_.back();
}

template <typename Real>
Parameter<Real>* ParamStore<Real>::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename Real>
Parameter<Real>& ParamStore<Real>::get(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw Error("unknown parameter '" + std::string(name) + "'");
}

template <typename Real>
const Parameter<Real>& ParamStore<Real>::get(std::string_view name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

template <typename Real>
std::size_t ParamStore<Real>::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Real>
void ParamStore<Real>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename Real>
Tensor<Real> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<Real> t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<Real>(rng.uniform(-a, a));
  return t;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamStore<long double>;
template Tensor<float> xavier_uniform(Shape, std::size_t, std::size_t, Rng&);
template Tensor<double> xavier_uniform(Shape, std::size_t, std::size_t, Rng&);
template Tensor<long double> xavier_uniform(Shape, std::size_t, std::size_t, Rng&);

}  // namespace seqhgnn
