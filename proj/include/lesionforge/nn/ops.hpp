#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lesionforge/nn/tensor.hpp"

namespace lf::nn {

/// Output extent of a convolution along one axis: (in + 2p - k) / s + 1.
/// Throws ShapeError when the kernel does not fit the padded input.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// ---------------------------------------------------------------------------
// Convolution. Weights are (out_channels, in_channels, k, k).

template <typename T>
struct ConvCache {
  Tensor4<T> input;
  Tensor4<T> weights;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weights;
  std::vector<T> bias;
};

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const Tensor4<T>& weights, std::span<const T> bias,
                          std::size_t stride, std::size_t padding, ConvCache<T>* cache = nullptr);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& grad_out, const ConvCache<T>& cache, bool input_grad = true);

// ---------------------------------------------------------------------------
// Batch normalization over (batch, height, width) per channel, always using
// the statistics of the current batch.

template <typename T>
struct BatchNormCache {
  Tensor4<T> normalized;  // pre-affine values
  std::vector<double> inv_std;
  std::vector<T> gain;
};

template <typename T>
struct BatchNormGrads {
  Tensor4<T> input;
  std::vector<T> gain;
  std::vector<T> shift;
};

template <typename T>
Tensor4<T> batchnorm2d_forward(const Tensor4<T>& input, std::span<const T> gain, std::span<const T> shift,
                               double epsilon, BatchNormCache<T>* cache = nullptr);

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const Tensor4<T>& grad_out, const BatchNormCache<T>& cache);

// ---------------------------------------------------------------------------
// Pointwise activations. Backward passes take the forward input.

template <typename T>
Tensor4<T> elu_forward(const Tensor4<T>& input);
template <typename T>
Tensor4<T> elu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input);
template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& input);
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input);

// ---------------------------------------------------------------------------
// Fully connected layer. The input is read as N rows of C*H*W features;
// weights are (out_features, in_features, 1, 1); output is N x out x 1 x 1.

template <typename T>
struct LinearGrads {
  Tensor4<T> input;
  Tensor4<T> weights;
  std::vector<T> bias;
};

template <typename T>
Tensor4<T> linear_forward(const Tensor4<T>& input, const Tensor4<T>& weights, std::span<const T> bias);

template <typename T>
LinearGrads<T> linear_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input, const Tensor4<T>& weights);

// ---------------------------------------------------------------------------
// Losses.

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor4<T> grad;
};

/// Mean over rows of -log softmax(logits)[target]. Rows are the (n, h, w)
/// positions of an N x C x H x W tensor, so a matrix is N x C x 1 x 1.
/// `targets` is indexed in (n, h, w) order.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor4<T>& logits, std::span<const std::int32_t> targets);

/// Mean squared error over selected elements; unselected elements receive a
/// zero gradient. An absent selector selects everything.
template <typename T>
LossResult<T> mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target,
                       std::optional<std::span<const std::uint8_t>> selector = std::nullopt);

}  // namespace lf::nn
