#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lesionforge/nn/network.hpp"

namespace lf::nn {

struct GradcheckOptions {
  double step = 1e-4;
  /// Lower bound on the relative-error denominator, so gradients that are
  /// zero analytically do not divide by finite-difference noise.
  double denominator_floor = 1e-6;
  /// Also compare the gradient with respect to the network input (reported
  /// under the name "input").
  bool include_input = false;
  /// When nonzero, at most this many evenly spaced entries of each parameter
  /// tensor (and of the input) are perturbed.
  std::size_t max_per_tensor = 0;
};

struct GradcheckEntry {
  std::string layer;
  std::size_t checked = 0;
  double max_relative_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  bool empty() const { return entries.empty(); }
  double max_relative_error() const;
};

template <typename T>
using LossFn = std::function<LossResult<T>(const Tensor4<T>&)>;

/// Compares backprop gradients with central finite differences, per layer.
template <typename T>
GradcheckReport gradcheck(Network<T>& network, const Tensor4<T>& input, const LossFn<T>& loss,
                          const GradcheckOptions& options = {});

}  // namespace lf::nn
