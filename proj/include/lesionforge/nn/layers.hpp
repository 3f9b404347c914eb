#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lesionforge/nn/ops.hpp"
#include "lesionforge/nn/tensor.hpp"

namespace lf::nn {

enum class LayerKind { Conv2d, BatchNorm2d, Elu, Relu, Linear };

std::string to_string(LayerKind kind);

/// Static description of one layer. Channel fields are feature counts for
/// linear layers.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  double epsilon = 1e-5;

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding);
  static LayerSpec batchnorm(std::size_t channels, double epsilon = 1e-5);
  static LayerSpec linear(std::size_t in, std::size_t out);
  static LayerSpec elu();
  static LayerSpec relu();

  bool operator==(const LayerSpec&) const = default;
};

/// A named trainable tensor and its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;
};

template <typename T>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(spec) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const LayerSpec& spec() const { return spec_; }

  /// Forward pass; caches what backward needs.
  virtual Tensor4<T> forward(const Tensor4<T>& input) = 0;
  /// Forward pass that leaves the caches untouched.
  virtual Tensor4<T> infer(const Tensor4<T>& input) const = 0;
  /// Backward pass; writes parameter gradients and returns the input gradient
  /// (empty when `input_grad` is false and the layer can skip it).
  virtual Tensor4<T> backward(const Tensor4<T>& grad_out, bool input_grad = true) = 0;
  virtual Shape4 output_shape(const Shape4& input) const = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  /// Fan-in scaled normal weights (std = sqrt(2 / fan_in)), zero biases.
  virtual void initialize(std::mt19937_64& /*rng*/) {}
  /// Drops forward caches.
  virtual void clear_cache() {}

 private:
  LayerSpec spec_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const std::string& name);

}  // namespace lf::nn
