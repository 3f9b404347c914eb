#include "lesionforge/nn/layers.hpp"

#include <cmath>

namespace lf::nn {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::BatchNorm2d: return "batchnorm2d";
    case LayerKind::Elu: return "elu";
    case LayerKind::Relu: return "relu";
    case LayerKind::Linear: return "linear";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::batchnorm(std::size_t channels, double epsilon) {
  LayerSpec s;
  s.kind = LayerKind::BatchNorm2d;
  s.in_channels = channels;
  s.out_channels = channels;
  s.epsilon = epsilon;
  return s;
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

LayerSpec LayerSpec::elu() {
  LayerSpec s;
  s.kind = LayerKind::Elu;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}

namespace {

template <typename T>
void fill_normal(Tensor4<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
void require_cache(const Tensor4<T>& cached, const char* who) {
  if (cached.empty()) throw std::logic_error(std::string(who) + ": backward called without a forward cache");
}

template <typename T>
class Conv2dLayer final : public Layer<T> {
 public:
  Conv2dLayer(const LayerSpec& spec, const std::string& name) : Layer<T>(spec) {
    const Shape4 ws{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
    weight_ = {name + ".weight", Tensor4<T>(ws), Tensor4<T>(ws)};
    bias_ = {name + ".bias", Tensor4<T>({1, spec.out_channels, 1, 1}), Tensor4<T>({1, spec.out_channels, 1, 1})};
  }

  Tensor4<T> forward(const Tensor4<T>& input) override {
    const auto& s = this->spec();
    return conv2d_forward<T>(input, weight_.value, bias_.value.values(), s.stride, s.padding, &cache_);
  }

  Tensor4<T> infer(const Tensor4<T>& input) const override {
    const auto& s = this->spec();
    return conv2d_forward<T>(input, weight_.value, bias_.value.values(), s.stride, s.padding);
  }

  Tensor4<T> backward(const Tensor4<T>& grad_out, bool input_grad) override {
    ConvGrads<T> g = conv2d_backward<T>(grad_out, cache_, input_grad);
    weight_.grad = std::move(g.weights);
    std::copy(g.bias.begin(), g.bias.end(), bias_.grad.values().begin());
    return std::move(g.input);
  }

  Shape4 output_shape(const Shape4& in) const override {
    const auto& s = this->spec();
    if (in.c != s.in_channels) throw ShapeError("conv2d expects " + std::to_string(s.in_channels) + " channels");
    return {in.n, s.out_channels, conv_output_extent(in.h, s.kernel, s.stride, s.padding),
            conv_output_extent(in.w, s.kernel, s.stride, s.padding)};
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

  void initialize(std::mt19937_64& rng) override {
    const auto& s = this->spec();
    fill_normal(weight_.value, std::sqrt(2.0 / static_cast<double>(s.in_channels * s.kernel * s.kernel)), rng);
    bias_.value.fill(T{0});
  }

  void clear_cache() override { cache_ = {}; }

 private:
  Param<T> weight_;
  Param<T> bias_;
  ConvCache<T> cache_;
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  BatchNormLayer(const LayerSpec& spec, const std::string& name) : Layer<T>(spec) {
    const Shape4 s{1, spec.out_channels, 1, 1};
    gain_ = {name + ".gain", Tensor4<T>(s, T{1}), Tensor4<T>(s)};
    shift_ = {name + ".shift", Tensor4<T>(s), Tensor4<T>(s)};
  }

  Tensor4<T> forward(const Tensor4<T>& input) override {
    return batchnorm2d_forward<T>(input, gain_.value.values(), shift_.value.values(), this->spec().epsilon, &cache_);
  }

  Tensor4<T> infer(const Tensor4<T>& input) const override {
    return batchnorm2d_forward<T>(input, gain_.value.values(), shift_.value.values(), this->spec().epsilon);
  }

  Tensor4<T> backward(const Tensor4<T>& grad_out, bool) override {
    BatchNormGrads<T> g = batchnorm2d_backward<T>(grad_out, cache_);
    std::copy(g.gain.begin(), g.gain.end(), gain_.grad.values().begin());
    std::copy(g.shift.begin(), g.shift.end(), shift_.grad.values().begin());
    return std::move(g.input);
  }

  Shape4 output_shape(const Shape4& in) const override {
    if (in.c != this->spec().out_channels) throw ShapeError("batchnorm2d channel mismatch for " + in.str());
    return in;
  }

  std::vector<Param<T>*> params() override { return {&gain_, &shift_}; }

  void initialize(std::mt19937_64&) override {
    gain_.value.fill(T{1});
    shift_.value.fill(T{0});
  }

  void clear_cache() override { cache_ = {}; }

 private:
  Param<T> gain_;
  Param<T> shift_;
  BatchNormCache<T> cache_;
};

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(const LayerSpec& spec) : Layer<T>(spec) {}

  Tensor4<T> forward(const Tensor4<T>& input) override {
    input_ = input;
    return this->spec().kind == LayerKind::Elu ? elu_forward(input) : relu_forward(input);
  }

  Tensor4<T> infer(const Tensor4<T>& input) const override {
    return this->spec().kind == LayerKind::Elu ? elu_forward(input) : relu_forward(input);
  }

  Tensor4<T> backward(const Tensor4<T>& grad_out, bool) override {
    require_cache(input_, "activation");
    return this->spec().kind == LayerKind::Elu ? elu_backward(grad_out, input_) : relu_backward(grad_out, input_);
  }

  Shape4 output_shape(const Shape4& in) const override { return in; }
  void clear_cache() override { input_ = {}; }

 private:
  Tensor4<T> input_;
};

template <typename T>
class LinearLayer final : public Layer<T> {
 public:
  LinearLayer(const LayerSpec& spec, const std::string& name) : Layer<T>(spec) {
    const Shape4 ws{spec.out_channels, spec.in_channels, 1, 1};
    weight_ = {name + ".weight", Tensor4<T>(ws), Tensor4<T>(ws)};
    bias_ = {name + ".bias", Tensor4<T>({1, spec.out_channels, 1, 1}), Tensor4<T>({1, spec.out_channels, 1, 1})};
  }

  Tensor4<T> forward(const Tensor4<T>& input) override {
    input_ = input;
    return linear_forward<T>(input, weight_.value, bias_.value.values());
  }

  Tensor4<T> infer(const Tensor4<T>& input) const override {
    return linear_forward<T>(input, weight_.value, bias_.value.values());
  }

  Tensor4<T> backward(const Tensor4<T>& grad_out, bool) override {
    require_cache(input_, "linear");
    LinearGrads<T> g = linear_backward<T>(grad_out, input_, weight_.value);
    weight_.grad = std::move(g.weights);
    std::copy(g.bias.begin(), g.bias.end(), bias_.grad.values().begin());
    return std::move(g.input);
  }

  Shape4 output_shape(const Shape4& in) const override {
    if (in.c * in.h * in.w != this->spec().in_channels) {
      throw ShapeError("linear expects " + std::to_string(this->spec().in_channels) + " features, input " + in.str());
    }
    return {in.n, this->spec().out_channels, 1, 1};
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

  void initialize(std::mt19937_64& rng) override {
    fill_normal(weight_.value, std::sqrt(2.0 / static_cast<double>(this->spec().in_channels)), rng);
    bias_.value.fill(T{0});
  }

  void clear_cache() override { input_ = {}; }

 private:
  Param<T> weight_;
  Param<T> bias_;
  Tensor4<T> input_;
};

}  // namespace

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const std::string& name) {
  switch (spec.kind) {
    case LayerKind::Conv2d:
      if (spec.kernel == 0 || spec.stride == 0 || spec.in_channels == 0 || spec.out_channels == 0) {
        throw ShapeError("conv2d layer '" + name + "' has a zero extent");
      }
      return std::make_unique<Conv2dLayer<T>>(spec, name);
    case LayerKind::BatchNorm2d:
      if (spec.out_channels == 0 || !(spec.epsilon > 0.0)) throw ShapeError("invalid batchnorm2d layer '" + name + "'");
      return std::make_unique<BatchNormLayer<T>>(spec, name);
    case LayerKind::Elu:
    case LayerKind::Relu:
      return std::make_unique<ActivationLayer<T>>(spec);
    case LayerKind::Linear:
      if (spec.in_channels == 0 || spec.out_channels == 0) throw ShapeError("linear layer '" + name + "' is empty");
      return std::make_unique<LinearLayer<T>>(spec, name);
  }
  throw std::invalid_argument("unknown layer kind");
}

template std::unique_ptr<Layer<float>> make_layer(const LayerSpec&, const std::string&);
template std::unique_ptr<Layer<double>> make_layer(const LayerSpec&, const std::string&);

}  // namespace lf::nn
