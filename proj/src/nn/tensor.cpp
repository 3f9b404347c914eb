#include "lesionforge/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lf::nn {

std::string Shape4::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor of shape " + shape_.str() + " needs " + std::to_string(shape_.size()) +
                     " values, got " + std::to_string(data_.size()));
  }
}

template <typename T>
void Tensor4<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor4<T> Tensor4<T>::reshaped(Shape4 shape) const {
  if (shape.size() != shape_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor4<T>(shape, data_);
}

template <typename T>
bool Tensor4<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor4<T> stack_batch(std::span<const Tensor4<T>* const> items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  const Shape4 first = items.front()->shape();
  Shape4 out_shape = first;
  out_shape.n = 0;
  for (const auto* t : items) {
    const Shape4 s = t->shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw ShapeError("stack_batch: mismatched item " + s.str() + " vs " + first.str());
    }
    out_shape.n += s.n;
  }
  std::vector<T> values;
  values.reserve(out_shape.size());
  for (const auto* t : items) values.insert(values.end(), t->values().begin(), t->values().end());
  return Tensor4<T>(out_shape, std::move(values));
}

template class Tensor4<float>;
template class Tensor4<double>;
template Tensor4<float> stack_batch(std::span<const Tensor4<float>* const>);
template Tensor4<double> stack_batch(std::span<const Tensor4<double>* const>);

}  // namespace lf::nn
