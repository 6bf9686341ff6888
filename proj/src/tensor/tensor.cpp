#include "seqhgnn/tensor/tensor.hpp"

#include <cmath>
#include <sstream>

#include "seqhgnn/errors.hpp"

namespace seqhgnn {

ValidationError::ValidationError(std::vector<std::string> problems)
    : Error([&] {
        std::string msg = "validation failed:";
        for (const auto& p : problems) msg += "\n  " + p;
        return msg;
      }()),
      problems_(std::move(problems)) {}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), Real(0)) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

template <typename Real>
Tensor<Real> Tensor<Real>::filled(Shape shape, Real value) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = value;
  return t;
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

template <typename Real>
Real& Tensor<Real>::at(std::size_t i, std::size_t j) {
  return data_[i * shape_[1] + j];
}

template <typename Real>
const Real& Tensor<Real>::at(std::size_t i, std::size_t j) const {
  return data_[i * shape_[1] + j];
}

template <typename Real>
Real& Tensor<Real>::at(std::size_t i, std::size_t j, std::size_t k) {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}

template <typename Real>
const Real& Tensor<Real>::at(std::size_t i, std::size_t j, std::size_t k) const {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename Real>
bool Tensor<Real>::all_finite() const {
  for (auto x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;

}  // namespace seqhgnn
