#include "lesionforge/nn/network.hpp"

#include <random>

namespace lf::nn {

template <typename T>
void Network<T>::add(const LayerSpec& spec) {
  std::string name = to_string(spec.kind) + std::to_string(layers_.size());
  layers_.push_back(make_layer<T>(spec, name));
  specs_.push_back(spec);
  names_.push_back(std::move(name));
}

template <typename T>
void Network<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& layer : layers_) layer->initialize(rng);
}

template <typename T>
Tensor4<T> Network<T>::forward(const Tensor4<T>& input) {
  if (layers_.empty()) return input;
  Tensor4<T> x = layers_.front()->forward(input);
  for (std::size_t i = 1; i < layers_.size(); ++i) x = layers_[i]->forward(x);
  return x;
}

template <typename T>
Tensor4<T> Network<T>::infer(const Tensor4<T>& input) const {
  if (layers_.empty()) return input;
  Tensor4<T> x = layers_.front()->infer(input);
  for (std::size_t i = 1; i < layers_.size(); ++i) x = layers_[i]->infer(x);
  return x;
}

template <typename T>
Tensor4<T> Network<T>::backward(const Tensor4<T>& grad_out, bool input_grad) {
  Tensor4<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, i > 0 || input_grad);
  return g;
}

template <typename T>
void Network<T>::clear_cache() {
  for (auto& layer : layers_) layer->clear_cache();
}

template <typename T>
std::vector<Param<T>*> Network<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& layer : layers_) {
    for (auto* p : layer->params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<const Param<T>*> Network<T>::params() const {
  std::vector<const Param<T>*> out;
  for (const auto& layer : layers_) {
    for (const auto* p : layer->params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto* p : params()) total += p->value.size();
  return total;
}

template <typename T>
Shape4 Network<T>::output_shape(const Shape4& input) const {
  Shape4 s = input;
  for (const auto& layer : layers_) s = layer->output_shape(s);
  return s;
}

template class Network<float>;
template class Network<double>;

}  // namespace lf::nn
