#include "lesionforge/nn/optimizer.hpp"

#include <cmath>
#include <string>

namespace lf::nn {

OptimizerConfig OptimizerConfig::sgd(double lr, double momentum) {
  OptimizerConfig c;
  c.kind = OptimizerKind::SgdMomentum;
  c.learning_rate = lr;
  c.momentum = momentum;
  return c;
}

OptimizerConfig OptimizerConfig::adam(double lr, double beta1, double beta2, double epsilon) {
  OptimizerConfig c;
  c.kind = OptimizerKind::Adam;
  c.learning_rate = lr;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.epsilon = epsilon;
  return c;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
}

template <typename T>
OptimizerState<T>::OptimizerState(OptimizerConfig config) : config_(config) {
  config_.validate();
}

template <typename T>
void OptimizerState<T>::step(std::span<Param<T>* const> params) {
  for (const auto* p : params) {
    if (p->grad.shape() != p->value.shape()) {
      throw ShapeError("gradient of '" + p->name + "' has shape " + p->grad.shape().str() + ", parameter " +
                       p->value.shape().str());
    }
    if (!p->grad.all_finite()) throw NonFiniteGradient("non-finite gradient in parameter '" + p->name + "'");
  }
  if (first_.empty()) {
    first_.resize(params.size());
    if (config_.kind == OptimizerKind::Adam) second_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_[i].assign(params[i]->value.size(), 0.0);
      if (config_.kind == OptimizerKind::Adam) second_[i].assign(params[i]->value.size(), 0.0);
    }
  }
  if (first_.size() != params.size()) throw ShapeError("optimizer: parameter list changed between steps");
  ++steps_;

  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i]->value.values();
    auto grad = params[i]->grad.values();
    auto& m = first_[i];
    if (m.size() != value.size()) throw ShapeError("optimizer: accumulator size changed for '" + params[i]->name + "'");
    if (config_.kind == OptimizerKind::SgdMomentum) {
      for (std::size_t j = 0; j < value.size(); ++j) {
        m[j] = config_.momentum * m[j] + static_cast<double>(grad[j]);
        value[j] = static_cast<T>(static_cast<double>(value[j]) - lr * m[j]);
      }
    } else {
      auto& v = second_[i];
      const double b1 = config_.beta1;
      const double b2 = config_.beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j];
        m[j] = b1 * m[j] + (1.0 - b1) * g;
        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        value[j] = static_cast<T>(static_cast<double>(value[j]) - lr * mhat / (std::sqrt(vhat) + config_.epsilon));
      }
    }
  }
}

template class OptimizerState<float>;
template class OptimizerState<double>;

}  // namespace lf::nn
