#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lf::nn {

/// Raised whenever operand extents are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Extents of a (batch, channel, height, width) tensor.
struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  std::size_t per_item() const { return c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

/// Dense row-major NCHW tensor. Matrices are stored as N x C x 1 x 1.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor4(Shape4 shape, std::vector<T> values);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  T operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const { return data_[index(n, c, h, w)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  /// View of batch item `n` (all channels).
  std::span<T> item(std::size_t n) { return std::span<T>(data_).subspan(n * shape_.per_item(), shape_.per_item()); }
  std::span<const T> item(std::size_t n) const {
    return std::span<const T>(data_).subspan(n * shape_.per_item(), shape_.per_item());
  }

  void fill(T v);
  /// Same data, new extents with an identical element count.
  Tensor4 reshaped(Shape4 shape) const;

  template <typename U>
  Tensor4<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor4<U>(shape_, std::move(out));
  }

  bool all_finite() const;

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

/// Concatenates single-item tensors of identical extents along the batch axis.
template <typename T>
Tensor4<T> stack_batch(std::span<const Tensor4<T>* const> items);

}  // namespace lf::nn
