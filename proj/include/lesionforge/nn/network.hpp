#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lesionforge/nn/layers.hpp"

namespace lf::nn {

/// Sequential stack of layers. Single writer: forward/backward mutate the
/// layer caches, so concurrent use of one instance must be serialized.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  /// Appends a layer named `<kind><index>`, e.g. `conv2d0`, `batchnorm2d1`.
  void add(const LayerSpec& spec);
  void initialize(std::uint64_t seed);

  Tensor4<T> forward(const Tensor4<T>& input);
  /// Forward pass without touching the training caches.
  Tensor4<T> infer(const Tensor4<T>& input) const;
  /// Backpropagates `grad_out` through the cached forward pass; returns the
  /// gradient with respect to the network input, or an empty tensor when
  /// `input_grad` is false.
  Tensor4<T> backward(const Tensor4<T>& grad_out, bool input_grad = true);
  void clear_cache();

  std::vector<Param<T>*> params();
  std::vector<const Param<T>*> params() const;
  std::size_t parameter_count() const;
  Shape4 output_shape(const Shape4& input) const;

  std::size_t size() const { return layers_.size(); }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  const std::vector<std::string>& layer_names() const { return names_; }

  /// Copy with every parameter converted to `U`.
  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    for (const auto& spec : specs_) out.add(spec);
    auto src = params();
    auto dst = out.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }
  Network clone() const { return cast<T>(); }

 private:
  std::vector<LayerSpec> specs_;
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace lf::nn
