#include "lesionforge/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace lf::nn {

double GradcheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
  return worst;
}

namespace {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Indices to perturb out of n: all, or `limit` evenly spaced ones including
// both ends.
std::vector<std::size_t> probe_indices(std::size_t n, std::size_t limit) {
  std::vector<std::size_t> out;
  if (limit == 0 || limit >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  if (limit == 1) return {0};
  for (std::size_t k = 0; k < limit; ++k) out.push_back(k * (n - 1) / (limit - 1));
  return out;
}

std::string layer_of(const std::string& param_name) {
  const auto dot = param_name.find('.');
  return dot == std::string::npos ? param_name : param_name.substr(0, dot);
}

}  // namespace

template <typename T>
GradcheckReport gradcheck(Network<T>& network, const Tensor4<T>& input, const LossFn<T>& loss,
                          const GradcheckOptions& options) {
  GradcheckReport report;
  auto params = network.params();
  if (params.empty() && !options.include_input) return report;

  const LossResult<T> base = loss(network.forward(input));
  const Tensor4<T> input_grad = network.backward(base.grad);
  std::vector<Tensor4<T>> analytic;
  analytic.reserve(params.size());
  for (const auto* p : params) analytic.push_back(p->grad);

  auto eval = [&](const Tensor4<T>& x) { return loss(network.forward(x)).loss; };
  const double h = options.step;

  std::vector<std::string> order;
  std::map<std::string, GradcheckEntry> by_layer;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string layer = layer_of(params[i]->name);
    auto [it, inserted] = by_layer.try_emplace(layer, GradcheckEntry{layer, 0, 0.0});
    if (inserted) order.push_back(layer);
    auto values = params[i]->value.values();
    for (std::size_t j : probe_indices(values.size(), options.max_per_tensor)) {
      const T saved = values[j];
      values[j] = static_cast<T>(saved + h);
      const double plus = eval(input);
      values[j] = static_cast<T>(saved - h);
      const double minus = eval(input);
      values[j] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      it->second.max_relative_error = std::max(
          it->second.max_relative_error, relative_error(analytic[i][j], numeric, options.denominator_floor));
      ++it->second.checked;
    }
  }
  for (const auto& name : order) report.entries.push_back(by_layer.at(name));

  if (options.include_input) {
    GradcheckEntry entry{"input", 0, 0.0};
    Tensor4<T> x = input;
    for (std::size_t j : probe_indices(x.size(), options.max_per_tensor)) {
      const T saved = x[j];
      x[j] = static_cast<T>(saved + h);
      const double plus = eval(x);
      x[j] = static_cast<T>(saved - h);
      const double minus = eval(x);
      x[j] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      entry.max_relative_error =
          std::max(entry.max_relative_error, relative_error(input_grad[j], numeric, options.denominator_floor));
      ++entry.checked;
    }
    report.entries.push_back(entry);
  }
  // Leave the caches consistent with the unperturbed input.
  network.forward(input);
  return report;
}

template GradcheckReport gradcheck(Network<float>&, const Tensor4<float>&, const LossFn<float>&,
                                   const GradcheckOptions&);
template GradcheckReport gradcheck(Network<double>&, const Tensor4<double>&, const LossFn<double>&,
                                   const GradcheckOptions&);

}  // namespace lf::nn
