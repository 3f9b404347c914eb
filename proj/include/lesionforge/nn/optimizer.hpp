#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "lesionforge/nn/layers.hpp"

namespace lf::nn {

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerConfig sgd(double lr, double momentum);
  static OptimizerConfig adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
  void validate() const;
};

/// Thrown when a gradient contains NaN or infinity; names the parameter.
class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-parameter accumulators of an SGD-momentum or Adam optimizer.
///
/// sgd-momentum: v <- m*v + g; p <- p - lr*v
/// adam: bias-corrected first/second moments, p <- p - lr*mhat/(sqrt(vhat)+eps)
///
/// Buffers are created lazily on the first step and must keep matching the
/// parameter shapes afterwards.
template <typename T>
class OptimizerState {
 public:
  explicit OptimizerState(OptimizerConfig config);

  void step(std::span<Param<T>* const> params);
  std::uint64_t step_count() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }
  /// First-moment (velocity) buffer of parameter `i`.
  std::span<const double> first_moment(std::size_t i) const { return first_.at(i); }

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace lf::nn
