#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "lesionforge/deep_cluster.hpp"
#include "lesionforge/dqn_agent.hpp"
#include "lesionforge/nn/checkpoint.hpp"
#include "lesionforge/nn/gradcheck.hpp"
#include "lesionforge/nn/network.hpp"
#include "lesionforge/nn/ops.hpp"
#include "lesionforge/nn/optimizer.hpp"

using namespace lf::nn;

namespace {

template <typename T>
Tensor4<T> random_tensor(Shape4 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor4<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

// Explicit-loop convolution, zero padding.
Tensor4<double> conv_oracle(const Tensor4<double>& x, const Tensor4<double>& w, const std::vector<double>& b,
                            std::size_t stride, std::size_t pad) {
  const auto xs = x.shape();
  const auto ws = w.shape();
  const std::size_t oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const std::size_t ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor4<double> out({xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t ki = 0; ki < ws.h; ++ki)
              for (std::size_t kj = 0; kj < ws.w; ++kj) {
                const long r = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(xs.h) || q >= static_cast<long>(xs.w)) continue;
                acc += x(n, c, r, q) * w(o, c, ki, kj);
              }
          out(n, o, i, j) = acc;
        }
  return out;
}

LossFn<double> mse_against(const Tensor4<double>& target) {
  return [target](const Tensor4<double>& out) { return mse_loss<double>(out, target); };
}

}  // namespace

TEST_SUITE("conv2d") {
  TEST_CASE("identity kernel reproduces the input") {
    auto x = random_tensor<double>({1, 1, 3, 3}, 1);
    Tensor4<double> w({1, 1, 3, 3});
    w(0, 0, 1, 1) = 1.0;
    std::vector<double> b{0.0};
    auto y = conv2d_forward<double>(x, w, b, 1, 1);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }

  TEST_CASE("zero input yields the bias per channel") {
    Tensor4<double> x({2, 2, 4, 4});
    auto w = random_tensor<double>({3, 2, 3, 3}, 2);
    std::vector<double> b{0.5, -1.25, 3.0};
    auto y = conv2d_forward<double>(x, w, b, 1, 1);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 4; ++i)
          for (std::size_t j = 0; j < 4; ++j) CHECK(y(n, o, i, j) == b[o]);
  }

  TEST_CASE("matches a sliding-window oracle") {
    auto x = random_tensor<double>({1, 2, 5, 5}, 3);
    auto w = random_tensor<double>({3, 2, 3, 3}, 4);
    std::vector<double> b{0.1, -0.2, 0.3};
    auto y = conv2d_forward<double>(x, w, b, 2, 1);
    auto ref = conv_oracle(x, w, b, 2, 1);
    REQUIRE(y.shape() == Shape4{1, 3, 3, 3});
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }

  TEST_CASE("sliding-window oracle across strides and paddings") {
    std::uint64_t seed = 10;
    for (std::size_t stride : {1, 2, 3})
      for (std::size_t pad : {0, 1, 2}) {
        auto x = random_tensor<double>({2, 3, 7, 6}, ++seed);
        auto w = random_tensor<double>({4, 3, 3, 3}, ++seed);
        std::vector<double> b{0.0, 1.0, -1.0, 0.25};
        auto y = conv2d_forward<double>(x, w, b, stride, pad);
        auto ref = conv_oracle(x, w, b, stride, pad);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      }
  }

  TEST_CASE("float forward agrees with the oracle") {
    auto x = random_tensor<double>({1, 3, 9, 9}, 30);
    auto w = random_tensor<double>({5, 3, 3, 3}, 31);
    std::vector<double> b(5, 0.1);
    std::vector<float> bf(b.begin(), b.end());
    auto y = conv2d_forward<float>(x.cast<float>(), w.cast<float>(), bf, 1, 1);
    auto ref = conv_oracle(x, w, b, 1, 1);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-5);
  }

  TEST_CASE("linear in the input") {
    auto x = random_tensor<double>({1, 2, 6, 6}, 5);
    auto z = random_tensor<double>({1, 2, 6, 6}, 6);
    auto w = random_tensor<double>({3, 2, 3, 3}, 7);
    std::vector<double> zero(3, 0.0);
    const double a = 1.7, c = -0.3;
    Tensor4<double> mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + c * z[i];
    auto fm = conv2d_forward<double>(mix, w, zero, 1, 1);
    auto fx = conv2d_forward<double>(x, w, zero, 1, 1);
    auto fz = conv2d_forward<double>(z, w, zero, 1, 1);
    for (std::size_t i = 0; i < fm.size(); ++i) CHECK(std::abs(fm[i] - (a * fx[i] + c * fz[i])) < 1e-9);
  }

  TEST_CASE("output extents and shape errors") {
    CHECK(conv_output_extent(240, 3, 1, 1) == 240);
    CHECK(conv_output_extent(240, 3, 2, 1) == 120);
    CHECK(conv_output_extent(15, 3, 2, 1) == 8);
    CHECK_THROWS_AS(conv_output_extent(1, 5, 1, 1), ShapeError);
    Tensor4<double> x({1, 2, 4, 4});
    Tensor4<double> w({1, 3, 3, 3});
    std::vector<double> b{0.0};
    CHECK_THROWS_AS(conv2d_forward<double>(x, w, b, 1, 1), ShapeError);
    Tensor4<double> w2({1, 2, 3, 3});
    std::vector<double> b2{0.0, 0.0};
    CHECK_THROWS_AS(conv2d_forward<double>(x, w2, b2, 1, 1), ShapeError);
  }

  TEST_CASE("sum loss with zero weights: bias gradient counts output positions") {
    auto x = random_tensor<double>({2, 2, 5, 5}, 8);
    Tensor4<double> w({3, 2, 3, 3});
    std::vector<double> b(3, 0.0);
    ConvCache<double> cache;
    auto y = conv2d_forward<double>(x, w, b, 2, 1, &cache);
    Tensor4<double> ones(y.shape(), 1.0);
    auto g = conv2d_backward<double>(ones, cache);
    for (double v : g.bias) CHECK(v == doctest::Approx(2.0 * 3 * 3));
    for (double v : g.input.values()) CHECK(v == 0.0);
  }

  TEST_CASE("weight gradient matches central differences") {
    auto x = random_tensor<double>({1, 1, 4, 4}, 9);
    auto w = random_tensor<double>({1, 1, 3, 3}, 10);
    auto r = random_tensor<double>({1, 1, 4, 4}, 11);
    std::vector<double> b{0.2};
    auto loss = [&](const Tensor4<double>& wt) {
      auto y = conv2d_forward<double>(x, wt, b, 1, 1);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * y[i] * r[i];
      return s;
    };
    ConvCache<double> cache;
    auto y = conv2d_forward<double>(x, w, b, 1, 1, &cache);
    Tensor4<double> gy(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) gy[i] = 2.0 * y[i] * r[i];
    auto g = conv2d_backward<double>(gy, cache);
    const double h = 1e-4;
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      const double numeric = (loss(wp) - loss(wm)) / (2 * h);
      const double rel = std::abs(numeric - g.weights[i]) / std::max({std::abs(numeric), std::abs(g.weights[i]), 1e-8});
      CHECK(rel < 1e-3);
    }
  }

  TEST_CASE("zero upstream gradient gives zero gradients") {
    auto x = random_tensor<double>({1, 2, 5, 5}, 12);
    auto w = random_tensor<double>({2, 2, 3, 3}, 13);
    std::vector<double> b{1.0, 2.0};
    ConvCache<double> cache;
    auto y = conv2d_forward<double>(x, w, b, 1, 1, &cache);
    auto g = conv2d_backward<double>(Tensor4<double>(y.shape()), cache);
    for (double v : g.input.values()) CHECK(v == 0.0);
    for (double v : g.weights.values()) CHECK(v == 0.0);
    for (double v : g.bias) CHECK(v == 0.0);
  }

  TEST_CASE("backward without a cache or with a wrong shape is rejected") {
    ConvCache<double> empty;
    CHECK_THROWS_AS(conv2d_backward<double>(Tensor4<double>({1, 1, 2, 2}), empty), std::logic_error);
    auto x = random_tensor<double>({1, 1, 4, 4}, 14);
    Tensor4<double> w({1, 1, 3, 3});
    std::vector<double> b{0.0};
    ConvCache<double> cache;
    conv2d_forward<double>(x, w, b, 1, 1, &cache);
    CHECK_THROWS_AS(conv2d_backward<double>(Tensor4<double>({1, 1, 3, 3}), cache), ShapeError);
    auto net = Network<double>();
    net.add(LayerSpec::conv(1, 1, 3, 1, 1));
    net.initialize(1);
    CHECK_THROWS_AS(net.backward(Tensor4<double>({1, 1, 4, 4})), std::logic_error);
  }

  TEST_CASE("skipping the input gradient leaves parameter gradients unchanged") {
    auto x = random_tensor<double>({2, 2, 6, 6}, 15);
    auto w = random_tensor<double>({3, 2, 3, 3}, 16);
    std::vector<double> b{0.0, 0.0, 0.0};
    ConvCache<double> cache;
    auto y = conv2d_forward<double>(x, w, b, 2, 1, &cache);
    auto gy = random_tensor<double>(y.shape(), 17);
    auto full = conv2d_backward<double>(gy, cache, true);
    auto lean = conv2d_backward<double>(gy, cache, false);
    CHECK(lean.input.empty());
    CHECK(lean.weights.values().size() == full.weights.values().size());
    for (std::size_t i = 0; i < full.weights.size(); ++i) CHECK(lean.weights[i] == full.weights[i]);
    CHECK(lean.bias == full.bias);
  }
}

TEST_SUITE("batchnorm2d") {
  TEST_CASE("constant channel normalizes to zeros") {
    Tensor4<double> x({2, 1, 3, 3}, 4.5);
    std::vector<double> g{1.0}, s{0.0};
    auto y = batchnorm2d_forward<double>(x, g, s, 1e-5);
    for (double v : y.values()) CHECK(v == 0.0);
  }

  TEST_CASE("values 1..4 normalize with population variance") {
    Tensor4<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    std::vector<double> g{1.0}, s{0.0};
    auto y = batchnorm2d_forward<double>(x, g, s, 1e-5);
    const double var = 1.25;
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double expect = (x[i] - 2.5) / std::sqrt(var + 1e-5);
      CHECK(y[i] == doctest::Approx(expect).epsilon(1e-12));
      mean += y[i] / 4;
      sq += y[i] * y[i] / 4;
    }
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(sq - 1.0) < 1e-5);
  }

  TEST_CASE("zero gain yields the shift") {
    auto x = random_tensor<double>({2, 2, 3, 3}, 20);
    std::vector<double> g{0.0, 0.0}, s{1.5, -2.0};
    auto y = batchnorm2d_forward<double>(x, g, s, 1e-5);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 9; ++i) CHECK(y.item(n)[c * 9 + i] == s[c]);
  }

  TEST_CASE("per-channel moments of random inputs") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto x = random_tensor<float>({3, 4, 5, 5}, 100 + seed, -3.0, 7.0);
      std::vector<float> g(4, 1.0f), s(4, 0.0f);
      auto y = batchnorm2d_forward<float>(x, g, s, 1e-5);
      for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t n = 0; n < 3; ++n)
          for (std::size_t i = 0; i < 25; ++i) mean += y(n, c, i / 5, i % 5);
        mean /= 75;
        for (std::size_t n = 0; n < 3; ++n)
          for (std::size_t i = 0; i < 25; ++i) sq += std::pow(y(n, c, i / 5, i % 5) - mean, 2);
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(sq / 75 - 1.0) < 1e-4);
      }
    }
  }

  TEST_CASE("a single value per channel is rejected") {
    Tensor4<double> x({1, 1, 1, 1}, 1.0);
    std::vector<double> g{1.0}, s{0.0};
    CHECK_THROWS_AS(batchnorm2d_forward<double>(x, g, s, 1e-5), ShapeError);
  }
}

TEST_SUITE("activations") {
  TEST_CASE("elu and relu values") {
    Tensor4<double> x({1, 1, 1, 4}, std::vector<double>{0.0, -1.0, 2.0, -5.0});
    auto e = elu_forward(x);
    CHECK(e[0] == 0.0);
    CHECK(e[1] == doctest::Approx(std::exp(-1.0) - 1.0));
    CHECK(e[1] == doctest::Approx(-0.632).epsilon(1e-3));
    CHECK(e[2] == 2.0);
    auto r = relu_forward(x);
    CHECK(r[3] == 0.0);
    CHECK(r[2] == 2.0);
    CHECK(r[0] == 0.0);
  }

  TEST_CASE("elu is monotone") {
    std::vector<double> xs;
    for (int i = -400; i <= 400; ++i) xs.push_back(i / 40.0);
    Tensor4<double> x({1, 1, 1, xs.size()}, xs);
    auto e = elu_forward(x);
    for (std::size_t i = 1; i < e.size(); ++i) CHECK(e[i] > e[i - 1]);
  }
}

TEST_SUITE("linear") {
  TEST_CASE("identity weights and zero bias") {
    auto x = random_tensor<double>({3, 4, 1, 1}, 40);
    Tensor4<double> w({4, 4, 1, 1});
    for (std::size_t i = 0; i < 4; ++i) w(i, i, 0, 0) = 1.0;
    std::vector<double> b(4, 0.0);
    auto y = linear_forward<double>(x, w, b);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }

  TEST_CASE("zero input broadcasts the bias") {
    Tensor4<double> x({3, 2, 1, 1});
    auto w = random_tensor<double>({5, 2, 1, 1}, 41);
    std::vector<double> b{1, 2, 3, 4, 5};
    auto y = linear_forward<double>(x, w, b);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t o = 0; o < 5; ++o) CHECK(y(n, o, 0, 0) == b[o]);
  }

  TEST_CASE("2x3 by 3x2 matches a loop product") {
    auto x = random_tensor<double>({2, 3, 1, 1}, 42);
    auto w = random_tensor<double>({2, 3, 1, 1}, 43);
    std::vector<double> b{0.5, -0.5};
    auto y = linear_forward<double>(x, w, b);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 2; ++o) {
        double acc = b[o];
        for (std::size_t k = 0; k < 3; ++k) acc += x(n, k, 0, 0) * w(o, k, 0, 0);
        CHECK(y(n, o, 0, 0) == doctest::Approx(acc).epsilon(1e-14));
      }
  }

  TEST_CASE("feature mismatch is rejected") {
    Tensor4<double> x({2, 3, 1, 1});
    Tensor4<double> w({2, 4, 1, 1});
    std::vector<double> b{0, 0};
    CHECK_THROWS_AS(linear_forward<double>(x, w, b), ShapeError);
  }
}

TEST_SUITE("losses") {
  TEST_CASE("softmax cross entropy examples") {
    Tensor4<double> uniform({1, 25, 1, 1}, 0.3);
    std::vector<std::int32_t> t{7};
    CHECK(std::abs(softmax_cross_entropy<double>(uniform, t).loss - std::log(25.0)) < 1e-9);

    Tensor4<double> sat({1, 3, 1, 1}, std::vector<double>{0.0, 1000.0, 0.0});
    std::vector<std::int32_t> t1{1};
    CHECK(softmax_cross_entropy<double>(sat, t1).loss == doctest::Approx(0.0));

    Tensor4<double> l({1, 3, 1, 1}, std::vector<double>{1.0, 2.0, 3.0});
    std::vector<std::int32_t> t2{2};
    auto r = softmax_cross_entropy<double>(l, t2);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(r.loss == doctest::Approx(-std::log(std::exp(3.0) / z)).epsilon(1e-12));
    const double h = 1e-4;
    for (std::size_t i = 0; i < 3; ++i) {
      auto lp = l, lm = l;
      lp[i] += h;
      lm[i] -= h;
      const double numeric =
          (softmax_cross_entropy<double>(lp, t2).loss - softmax_cross_entropy<double>(lm, t2).loss) / (2 * h);
      CHECK(std::abs(numeric - r.grad[i]) / std::max(std::abs(numeric), 1e-8) < 1e-3);
    }
  }

  TEST_CASE("softmax cross entropy over spatial rows is nonnegative") {
    auto l = random_tensor<double>({2, 5, 3, 3}, 50, -4.0, 4.0);
    std::vector<std::int32_t> t(18);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<std::int32_t>(i % 5);
    auto r = softmax_cross_entropy<double>(l, t);
    CHECK(r.loss >= 0.0);
    double manual = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 9; ++p) {
        double z = 0.0;
        for (std::size_t c = 0; c < 5; ++c) z += std::exp(l(n, c, p / 3, p % 3));
        manual -= std::log(std::exp(l(n, t[n * 9 + p], p / 3, p % 3)) / z);
      }
    CHECK(r.loss == doctest::Approx(manual / 18).epsilon(1e-12));
  }

  TEST_CASE("softmax cross entropy rejects out-of-range classes") {
    Tensor4<double> l({1, 3, 1, 1});
    std::vector<std::int32_t> bad{3}, neg{-1};
    CHECK_THROWS_AS(softmax_cross_entropy<double>(l, bad), std::out_of_range);
    CHECK_THROWS_AS(softmax_cross_entropy<double>(l, neg), std::out_of_range);
  }

  TEST_CASE("mse examples") {
    auto p = random_tensor<double>({2, 2, 1, 1}, 51);
    CHECK(mse_loss<double>(p, p).loss == 0.0);

    Tensor4<double> one({1, 1, 1, 1}, 1.0), zero({1, 1, 1, 1}, 0.0);
    auto r = mse_loss<double>(one, zero);
    CHECK(r.loss == 1.0);
    CHECK(r.grad[0] == 2.0);

    Tensor4<double> p2({1, 2, 1, 1}, std::vector<double>{1.0, 2.0});
    Tensor4<double> t2({1, 2, 1, 1});
    std::vector<std::uint8_t> sel{1, 0};
    auto r2 = mse_loss<double>(p2, t2, std::span<const std::uint8_t>(sel));
    CHECK(r2.loss == 1.0);
    CHECK(r2.grad[0] == 2.0);
    CHECK(r2.grad[1] == 0.0);

    std::vector<std::uint8_t> none{0, 0};
    CHECK_THROWS_AS(mse_loss<double>(p2, t2, std::span<const std::uint8_t>(none)), std::invalid_argument);
    CHECK_THROWS_AS(mse_loss<double>(p2, Tensor4<double>({2, 1, 1, 1})), ShapeError);
  }
}

TEST_SUITE("optimizer") {
  Param<double> scalar_param(double value, double grad) {
    return {"p", Tensor4<double>({1, 1, 1, 1}, value), Tensor4<double>({1, 1, 1, 1}, grad)};
  }

  TEST_CASE("sgd momentum first and second steps") {
    auto p = scalar_param(1.0, 1.0);
    std::vector<Param<double>*> ps{&p};
    OptimizerState<double> opt(OptimizerConfig::sgd(0.1, 0.9));
    opt.step(ps);
    CHECK(p.value[0] == doctest::Approx(0.9));
    CHECK(opt.first_moment(0)[0] == 1.0);
    CHECK(opt.step_count() == 1);
    const double before = p.value[0];
    opt.step(ps);
    CHECK(before - p.value[0] == doctest::Approx(0.19));
    CHECK(opt.step_count() == 2);
  }

  TEST_CASE("zero gradient leaves parameters only when accumulators are zero") {
    auto p = scalar_param(2.0, 0.0);
    std::vector<Param<double>*> ps{&p};
    OptimizerState<double> opt(OptimizerConfig::sgd(0.1, 0.9));
    opt.step(ps);
    CHECK(p.value[0] == 2.0);
    p.grad[0] = 1.0;
    opt.step(ps);
    const double after_push = p.value[0];
    p.grad[0] = 0.0;
    opt.step(ps);
    CHECK(p.value[0] < after_push);
  }

  TEST_CASE("adam matches a hand iteration") {
    auto p = scalar_param(1.0, 0.5);
    std::vector<Param<double>*> ps{&p};
    OptimizerState<double> opt(OptimizerConfig::adam(1e-3));
    double m = 0, v = 0, x = 1.0;
    for (int t = 1; t <= 3; ++t) {
      const double g = 0.5 * t;
      p.grad[0] = g;
      opt.step(ps);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t));
      const double vh = v / (1 - std::pow(0.999, t));
      x -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value[0] == doctest::Approx(x).epsilon(1e-12));
    }
  }

  TEST_CASE("non-finite gradient names the parameter") {
    Param<double> p{"conv2.weight", Tensor4<double>({1, 1, 1, 2}), Tensor4<double>({1, 1, 1, 2})};
    p.grad[1] = std::nan("");
    std::vector<Param<double>*> ps{&p};
    OptimizerState<double> opt(OptimizerConfig::adam(1e-4));
    try {
      opt.step(ps);
      FAIL("expected NonFiniteGradient");
    } catch (const NonFiniteGradient& e) {
      CHECK(std::string(e.what()).find("conv2.weight") != std::string::npos);
    }
    CHECK(opt.step_count() == 0);
  }

  TEST_CASE("invalid configurations") {
    CHECK_THROWS(OptimizerConfig::sgd(0.0, 0.9).validate());
    CHECK_THROWS(OptimizerConfig::sgd(0.1, 1.0).validate());
    CHECK_THROWS(OptimizerConfig::adam(1e-3, 1.0).validate());
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("single linear layer with mse") {
    Network<double> net;
    net.add(LayerSpec::linear(4, 3));
    net.initialize(1);
    auto x = random_tensor<double>({2, 4, 1, 1}, 60);
    auto target = random_tensor<double>({2, 3, 1, 1}, 61);
    auto report = gradcheck<double>(net, x, mse_against(target), {.include_input = true});
    REQUIRE(report.entries.size() == 2);
    CHECK(report.max_relative_error() < 1e-5);
  }

  TEST_CASE("every layer type") {
    const std::vector<std::vector<LayerSpec>> nets = {
        {LayerSpec::conv(2, 3, 3, 1, 1)},
        {LayerSpec::conv(2, 3, 3, 2, 1)},
        {LayerSpec::conv(2, 2, 3, 1, 0), LayerSpec::batchnorm(2)},
        {LayerSpec::conv(2, 2, 3, 1, 1), LayerSpec::elu()},
        {LayerSpec::conv(2, 2, 3, 1, 1), LayerSpec::relu()},
        {LayerSpec::linear(2 * 5 * 5, 3), LayerSpec::elu()},
    };
    std::uint64_t seed = 70;
    for (const auto& specs : nets) {
      Network<double> net;
      for (const auto& s : specs) net.add(s);
      net.initialize(++seed);
      auto x = random_tensor<double>({2, 2, 5, 5}, ++seed);
      auto target = random_tensor<double>(net.output_shape(x.shape()), ++seed);
      auto report = gradcheck<double>(net, x, mse_against(target), {.include_input = true});
      CAPTURE(net.layer_names()[0]);
      CHECK(!report.empty());
      CHECK(report.max_relative_error() < 1e-3);
    }
  }

  TEST_CASE("clustering network at 8x8") {
    auto net = lf::build_cluster_cnn<double>(4);
    net.initialize(5);
    auto x = random_tensor<double>({1, 3, 8, 8}, 80, 0.0, 1.0);
    std::vector<std::int32_t> targets(64);
    for (std::size_t i = 0; i < 64; ++i) targets[i] = static_cast<std::int32_t>((i * 7) % 4);
    LossFn<double> ce = [&](const Tensor4<double>& out) { return softmax_cross_entropy<double>(out, targets); };
    auto report = gradcheck<double>(net, x, ce);
    CHECK(report.entries.size() == 6);
    CHECK(report.max_relative_error() < 1e-3);
  }

  TEST_CASE("DQN at 8x8") {
    auto net = lf::build_dqn<double>(3, 8, 8, {{4, 4, 4, 4}, 8});
    net.initialize(6);
    auto x = random_tensor<double>({2, 3, 8, 8}, 81, 0.0, 1.0);
    auto target = random_tensor<double>({2, 2, 1, 1}, 82);
    std::vector<std::uint8_t> sel{1, 0, 0, 1};
    LossFn<double> loss = [&](const Tensor4<double>& out) {
      return mse_loss<double>(out, target, std::span<const std::uint8_t>(sel));
    };
    auto report = gradcheck<double>(net, x, loss);
    CHECK(report.entries.size() == 6);
    CHECK(report.max_relative_error() < 1e-3);
  }

  TEST_CASE("probing a subset of entries") {
    Network<double> net;
    net.add(LayerSpec::linear(6, 4));
    net.initialize(2);
    auto x = random_tensor<double>({1, 6, 1, 1}, 63);
    auto target = random_tensor<double>({1, 4, 1, 1}, 64);
    auto report = gradcheck<double>(net, x, mse_against(target), {.include_input = true, .max_per_tensor = 5});
    REQUIRE(report.entries.size() == 2);
    // Weight (24) and bias (4) tensors of one layer, then the input (6).
    CHECK(report.entries[0].checked == 5 + 4);
    CHECK(report.entries[1].checked == 5);
    CHECK(report.max_relative_error() < 1e-5);
  }

  TEST_CASE("zero-parameter network gives an empty report") {
    Network<double> net;
    net.add(LayerSpec::relu());
    auto x = random_tensor<double>({1, 1, 2, 2}, 90);
    auto report = gradcheck<double>(net, x, mse_against(Tensor4<double>(x.shape())));
    CHECK(report.empty());
  }
}

TEST_SUITE("network") {
  TEST_CASE("infer matches forward and leaves caches alone") {
    auto net = lf::build_dqn<float>(3, 16, 16, {{4, 8, 8, 8}, 16});
    net.initialize(3);
    auto x = random_tensor<float>({3, 3, 16, 16}, 91, 0.0, 1.0);
    auto y = net.forward(x);
    auto z = net.infer(random_tensor<float>({1, 3, 16, 16}, 92));
    CHECK(z.shape() == Shape4{1, 2, 1, 1});
    auto y2 = net.infer(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == y2[i]);
    auto g = net.backward(Tensor4<float>(y.shape(), 1.0f));
    CHECK(g.shape() == x.shape());
  }

  TEST_CASE("parameter names and counts") {
    auto net = lf::build_cluster_cnn<float>(100);
    const auto params = net.params();
    REQUIRE(params.size() == 12);
    CHECK(params[0]->name == "conv2d0.weight");
    CHECK(params[2]->name == "batchnorm2d1.gain");
    const std::size_t expect = (100 * 3 * 9 + 100) + 2 * 100 + 2 * (100 * 100 * 9 + 100 + 2 * 100);
    CHECK(net.parameter_count() == expect);
  }

  TEST_CASE("same seed gives bit-identical training trajectories") {
    auto run = [] {
      auto net = lf::build_cluster_cnn<float>(6);
      net.initialize(11);
      OptimizerState<float> opt(OptimizerConfig::sgd(0.1, 0.9));
      auto x = random_tensor<float>({1, 3, 10, 10}, 12, 0.0, 1.0);
      std::vector<std::int32_t> t(100);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<std::int32_t>(i % 6);
      std::vector<float> trace;
      for (int step = 0; step < 5; ++step) {
        auto r = softmax_cross_entropy<float>(net.forward(x), t);
        net.backward(r.grad);
        opt.step(net.params());
        for (const auto* p : net.params()) trace.insert(trace.end(), p->value.values().begin(), p->value.values().end());
      }
      return trace;
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip and header layout") {
    const auto path = std::filesystem::temp_directory_path() / "lf_test_ckpt.lfck";
    auto net = lf::build_dqn<float>(3, 16, 16, {{4, 4, 4, 4}, 8});
    net.initialize(21);
    save_network(path, net);
    {
      std::ifstream in(path, std::ios::binary);
      char magic[8];
      std::uint32_t version = 0, count = 0;
      in.read(magic, 8);
      in.read(reinterpret_cast<char*>(&version), 4);
      in.read(reinterpret_cast<char*>(&count), 4);
      CHECK(std::memcmp(magic, kCheckpointMagic, 8) == 0);
      CHECK(version == 1);
      CHECK(count == net.params().size());
    }
    auto other = lf::build_dqn<float>(3, 16, 16, {{4, 4, 4, 4}, 8});
    other.initialize(22);
    load_network(path, other);
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      const auto a = net.params()[i]->value.values();
      const auto b = other.params()[i]->value.values();
      CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
    auto wrong = lf::build_dqn<float>(3, 16, 16, {{4, 4, 4, 8}, 8});
    CHECK_THROWS_AS(load_network(path, wrong), CheckpointError);
    std::filesystem::remove(path);
  }

  TEST_CASE("bad magic and truncation are rejected") {
    const auto path = std::filesystem::temp_directory_path() / "lf_test_bad.lfck";
    {
      std::ofstream out(path, std::ios::binary);
      out << "NOTACKPT0000";
    }
    CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
    write_checkpoint(path, {{"w", {1, 1, 1, 3}, {1.0f, 2.0f, 3.0f}}});
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 2);
    CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
    std::filesystem::remove(path);
  }
}
