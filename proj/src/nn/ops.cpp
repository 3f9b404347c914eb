#include "lesionforge/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace lf::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;

// im2col working set per tile, in elements.
constexpr std::size_t kTileElements = std::size_t{1} << 21;

struct ConvDims {
  std::size_t in_c, in_h, in_w, out_c, k, stride, pad, out_h, out_w;
  std::size_t patch() const { return in_c * k * k; }
};

template <typename T>
ConvDims conv_dims(const Shape4& in, const Shape4& wt, std::size_t stride, std::size_t padding) {
  if (wt.c != in.c) {
    throw ShapeError("conv2d: weights expect " + std::to_string(wt.c) + " input channels, input " + in.str());
  }
  if (wt.h != wt.w) throw ShapeError("conv2d: kernel must be square, weights " + wt.str());
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvDims d{in.c, in.h, in.w, wt.n, wt.h, stride, padding, 0, 0};
  d.out_h = conv_output_extent(in.h, d.k, stride, padding);
  d.out_w = conv_output_extent(in.w, d.k, stride, padding);
  return d;
}

std::size_t tile_rows(const ConvDims& d) {
  const std::size_t per_row = std::max<std::size_t>(1, d.patch() * d.out_w);
  return std::clamp<std::size_t>(kTileElements / per_row, 1, d.out_h);
}

// Fills `col` (patch x rows*out_w) for output rows [oy0, oy1) of one item.
template <typename T>
void im2col(const T* item, const ConvDims& d, std::size_t oy0, std::size_t oy1, RowMat<T>& col) {
  const std::size_t cols = (oy1 - oy0) * d.out_w;
  col.resize(static_cast<Eigen::Index>(d.patch()), static_cast<Eigen::Index>(cols));
  for (std::size_t ci = 0; ci < d.in_c; ++ci) {
    const T* plane = item + ci * d.in_h * d.in_w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        T* row = col.data() + ((ci * d.k + ky) * d.k + kx) * cols;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
          T* dst = row + (oy - oy0) * d.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.in_h)) {
            std::fill(dst, dst + d.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * d.in_w;
          for (std::size_t ox = 0; ox < d.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.in_w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& col, const ConvDims& d, std::size_t oy0, std::size_t oy1, T* item) {
  const std::size_t cols = (oy1 - oy0) * d.out_w;
  for (std::size_t ci = 0; ci < d.in_c; ++ci) {
    T* plane = item + ci * d.in_h * d.in_w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        const T* row = col.data() + ((ci * d.k + ky) * d.k + kx) * cols;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
          const T* src = row + (oy - oy0) * d.out_w;
          T* dst = plane + static_cast<std::size_t>(iy) * d.in_w;
          for (std::size_t ox = 0; ox < d.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.in_w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

std::size_t feature_count(const Shape4& s) { return s.c * s.h * s.w; }

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (kernel == 0 || kernel > in + 2 * padding) {
    throw ShapeError("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const Tensor4<T>& weights, std::span<const T> bias,
                          std::size_t stride, std::size_t padding, ConvCache<T>* cache) {
  const ConvDims d = conv_dims<T>(input.shape(), weights.shape(), stride, padding);
  if (bias.size() != d.out_c) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.size()) + " entries for " +
                     std::to_string(d.out_c) + " output channels");
  }
  const std::size_t batch = input.shape().n;
  Tensor4<T> out(Shape4{batch, d.out_c, d.out_h, d.out_w});
  const ConstMap<T> w(weights.data(), static_cast<Eigen::Index>(d.out_c), static_cast<Eigen::Index>(d.patch()));
  const std::size_t rows_per_tile = tile_rows(d);
  const std::size_t out_plane = d.out_h * d.out_w;
  RowMat<T> col;
  for (std::size_t n = 0; n < batch; ++n) {
    const T* item = input.item(n).data();
    T* out_item = out.item(n).data();
    for (std::size_t oy0 = 0; oy0 < d.out_h; oy0 += rows_per_tile) {
      const std::size_t oy1 = std::min(d.out_h, oy0 + rows_per_tile);
      im2col(item, d, oy0, oy1, col);
      StridedMap<T> dst(out_item + oy0 * d.out_w, static_cast<Eigen::Index>(d.out_c), col.cols(),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
      dst.noalias() = w * col;
    }
    for (std::size_t oc = 0; oc < d.out_c; ++oc) {
      T* p = out_item + oc * out_plane;
      const T b = bias[oc];
      for (std::size_t i = 0; i < out_plane; ++i) p[i] += b;
    }
  }
  if (cache != nullptr) {
    cache->input = input;
    cache->weights = weights;
    cache->stride = stride;
    cache->padding = padding;
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& grad_out, const ConvCache<T>& cache, bool input_grad) {
  if (cache.input.empty() || cache.weights.empty()) throw std::logic_error("conv2d_backward: missing forward cache");
  const ConvDims d = conv_dims<T>(cache.input.shape(), cache.weights.shape(), cache.stride, cache.padding);
  const Shape4 expected{cache.input.shape().n, d.out_c, d.out_h, d.out_w};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d_backward: grad shape " + grad_out.shape().str() + " != output shape " + expected.str());
  }
  ConvGrads<T> g;
  if (input_grad) g.input = Tensor4<T>(cache.input.shape());
  g.weights = Tensor4<T>(cache.weights.shape());
  std::vector<double> bias_acc(d.out_c, 0.0);

  const ConstMap<T> w(cache.weights.data(), static_cast<Eigen::Index>(d.out_c),
                      static_cast<Eigen::Index>(d.patch()));
  Eigen::Map<RowMat<T>> dw(g.weights.data(), static_cast<Eigen::Index>(d.out_c),
                           static_cast<Eigen::Index>(d.patch()));
  const std::size_t rows_per_tile = tile_rows(d);
  const std::size_t out_plane = d.out_h * d.out_w;
  RowMat<T> col;
  RowMat<T> dcol;
  for (std::size_t n = 0; n < expected.n; ++n) {
    const T* item = cache.input.item(n).data();
    const T* gitem = grad_out.item(n).data();
    T* dx_item = input_grad ? g.input.item(n).data() : nullptr;
    for (std::size_t oc = 0; oc < d.out_c; ++oc) {
      double s = 0.0;
      const T* p = gitem + oc * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) s += p[i];
      bias_acc[oc] += s;
    }
    for (std::size_t oy0 = 0; oy0 < d.out_h; oy0 += rows_per_tile) {
      const std::size_t oy1 = std::min(d.out_h, oy0 + rows_per_tile);
      im2col(item, d, oy0, oy1, col);
      ConstStridedMap<T> gy(gitem + oy0 * d.out_w, static_cast<Eigen::Index>(d.out_c), col.cols(),
                            Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
      dw.noalias() += gy * col.transpose();
      if (!input_grad) continue;
      dcol.noalias() = w.transpose() * gy;
      col2im_add(dcol, d, oy0, oy1, dx_item);
    }
  }
  g.bias.assign(bias_acc.begin(), bias_acc.end());
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> batchnorm2d_forward(const Tensor4<T>& input, std::span<const T> gain, std::span<const T> shift,
                               double epsilon, BatchNormCache<T>* cache) {
  const Shape4 s = input.shape();
  if (gain.size() != s.c || shift.size() != s.c) {
    throw ShapeError("batchnorm2d: affine parameters do not match " + std::to_string(s.c) + " channels");
  }
  const std::size_t count = s.n * s.h * s.w;
  if (count < 2) throw ShapeError("batchnorm2d: needs at least 2 values per channel, input " + s.str());
  Tensor4<T> normalized(s);
  Tensor4<T> out(s);
  std::vector<double> inv_std(s.c);
  const std::size_t plane = s.plane();
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = input.data() + input.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = input.data() + input.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        const double dv = static_cast<double>(p[i]) - mean;
        sq += dv * dv;
      }
    }
    const double var = sq / static_cast<double>(count);
    const double istd = 1.0 / std::sqrt(var + epsilon);
    inv_std[c] = istd;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t off = input.index(n, c, 0, 0);
      const T* p = input.data() + off;
      T* xn = normalized.data() + off;
      T* y = out.data() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        xn[i] = static_cast<T>((static_cast<double>(p[i]) - mean) * istd);
        y[i] = gain[c] * xn[i] + shift[c];
      }
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->gain.assign(gain.begin(), gain.end());
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const Tensor4<T>& grad_out, const BatchNormCache<T>& cache) {
  if (cache.normalized.empty()) throw std::logic_error("batchnorm2d_backward: missing forward cache");
  const Shape4 s = cache.normalized.shape();
  if (grad_out.shape() != s) {
    throw ShapeError("batchnorm2d_backward: grad shape " + grad_out.shape().str() + " != " + s.str());
  }
  BatchNormGrads<T> g;
  g.input = Tensor4<T>(s);
  g.gain.resize(s.c);
  g.shift.resize(s.c);
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n * plane);
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xn = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t off = cache.normalized.index(n, c, 0, 0);
      const T* dy = grad_out.data() + off;
      const T* xn = cache.normalized.data() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xn += static_cast<double>(dy[i]) * xn[i];
      }
    }
    g.shift[c] = static_cast<T>(sum_dy);
    g.gain[c] = static_cast<T>(sum_dy_xn);
    const double scale = static_cast<double>(cache.gain[c]) * cache.inv_std[c] / count;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t off = cache.normalized.index(n, c, 0, 0);
      const T* dy = grad_out.data() + off;
      const T* xn = cache.normalized.data() + off;
      T* dx = g.input.data() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        dx[i] = static_cast<T>(scale * (count * dy[i] - sum_dy - static_cast<double>(xn[i]) * sum_dy_xn));
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> elu_forward(const Tensor4<T>& input) {
  Tensor4<T> out(input.shape());
  auto src = input.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= T{0} ? src[i] : std::expm1(src[i]);
  return out;
}

template <typename T>
Tensor4<T> elu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input) {
  if (grad_out.shape() != input.shape()) throw ShapeError("elu_backward: shape mismatch");
  Tensor4<T> out(input.shape());
  auto x = input.values();
  auto g = grad_out.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] >= T{0} ? g[i] : g[i] * std::exp(x[i]);
  return out;
}

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& input) {
  Tensor4<T> out(input.shape());
  auto src = input.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input) {
  if (grad_out.shape() != input.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor4<T> out(input.shape());
  auto x = input.values();
  auto g = grad_out.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] > T{0} ? g[i] : T{0};
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> linear_forward(const Tensor4<T>& input, const Tensor4<T>& weights, std::span<const T> bias) {
  const std::size_t rows = input.shape().n;
  const std::size_t in_f = feature_count(input.shape());
  const std::size_t out_f = weights.shape().n;
  if (feature_count(weights.shape()) != in_f) {
    throw ShapeError("linear: weights " + weights.shape().str() + " do not accept input " + input.shape().str());
  }
  if (bias.size() != out_f) throw ShapeError("linear: bias size does not match output features");
  Tensor4<T> out(Shape4{rows, out_f, 1, 1});
  const ConstMap<T> x(input.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in_f));
  const ConstMap<T> w(weights.data(), static_cast<Eigen::Index>(out_f), static_cast<Eigen::Index>(in_f));
  Eigen::Map<RowMat<T>> y(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_f));
  y.noalias() = x * w.transpose();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_f; ++o) out[r * out_f + o] += bias[o];
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input, const Tensor4<T>& weights) {
  const std::size_t rows = input.shape().n;
  const std::size_t in_f = feature_count(input.shape());
  const std::size_t out_f = weights.shape().n;
  if (grad_out.shape() != Shape4{rows, out_f, 1, 1}) {
    throw ShapeError("linear_backward: grad shape " + grad_out.shape().str() + " does not match output");
  }
  LinearGrads<T> g;
  g.input = Tensor4<T>(input.shape());
  g.weights = Tensor4<T>(weights.shape());
  const ConstMap<T> x(input.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in_f));
  const ConstMap<T> w(weights.data(), static_cast<Eigen::Index>(out_f), static_cast<Eigen::Index>(in_f));
  const ConstMap<T> gy(grad_out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_f));
  Eigen::Map<RowMat<T>> gx(g.input.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in_f));
  Eigen::Map<RowMat<T>> gw(g.weights.data(), static_cast<Eigen::Index>(out_f), static_cast<Eigen::Index>(in_f));
  gx.noalias() = gy * w;
  gw.noalias() = gy.transpose() * x;
  g.bias.resize(out_f);
  for (std::size_t o = 0; o < out_f; ++o) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += grad_out[r * out_f + o];
    g.bias[o] = static_cast<T>(s);
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor4<T>& logits, std::span<const std::int32_t> targets) {
  const Shape4 s = logits.shape();
  const std::size_t plane = s.plane();
  const std::size_t rows = s.n * plane;
  if (targets.size() != rows) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " rows");
  }
  if (rows == 0 || s.c == 0) throw ShapeError("softmax_cross_entropy: empty logits");
  LossResult<T> r;
  r.grad = Tensor4<T>(s);
  const double inv_rows = 1.0 / static_cast<double>(rows);
  double total = 0.0;
  std::vector<double> row(s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t t = targets[n * plane + p];
      if (t < 0 || static_cast<std::size_t>(t) >= s.c) {
        throw std::out_of_range("softmax_cross_entropy: class index " + std::to_string(t) + " outside [0, " +
                                std::to_string(s.c) + ")");
      }
      const std::size_t base = n * s.c * plane + p;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < s.c; ++c) {
        row[c] = logits[base + c * plane];
        mx = std::max(mx, row[c]);
      }
      double z = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        row[c] = std::exp(row[c] - mx);
        z += row[c];
      }
      total += std::log(z) + mx - static_cast<double>(logits[base + static_cast<std::size_t>(t) * plane]);
      for (std::size_t c = 0; c < s.c; ++c) {
        const double prob = row[c] / z;
        r.grad[base + c * plane] = static_cast<T>((prob - (c == static_cast<std::size_t>(t) ? 1.0 : 0.0)) * inv_rows);
      }
    }
  }
  r.loss = total * inv_rows;
  return r;
}

template <typename T>
LossResult<T> mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target,
                       std::optional<std::span<const std::uint8_t>> selector) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: pred " + pred.shape().str() + " vs target " + target.shape().str());
  }
  if (selector && selector->size() != pred.size()) throw ShapeError("mse_loss: selector size mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!selector || (*selector)[i] != 0) ++count;
  }
  if (count == 0) throw std::invalid_argument("mse_loss: empty selection");
  LossResult<T> r;
  r.grad = Tensor4<T>(pred.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (selector && (*selector)[i] == 0) continue;
    const double diff = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += diff * diff;
    r.grad[i] = static_cast<T>(2.0 * diff / static_cast<double>(count));
  }
  r.loss = total / static_cast<double>(count);
  return r;
}

// ---------------------------------------------------------------------------

#define LF_INSTANTIATE_OPS(T)                                                                              \
  template Tensor4<T> conv2d_forward(const Tensor4<T>&, const Tensor4<T>&, std::span<const T>, std::size_t, \
                                     std::size_t, ConvCache<T>*);                                           \
  template ConvGrads<T> conv2d_backward(const Tensor4<T>&, const ConvCache<T>&, bool);                            \
  template Tensor4<T> batchnorm2d_forward(const Tensor4<T>&, std::span<const T>, std::span<const T>, double, \
                                          BatchNormCache<T>*);                                              \
  template BatchNormGrads<T> batchnorm2d_backward(const Tensor4<T>&, const BatchNormCache<T>&);             \
  template Tensor4<T> elu_forward(const Tensor4<T>&);                                                       \
  template Tensor4<T> elu_backward(const Tensor4<T>&, const Tensor4<T>&);                                   \
  template Tensor4<T> relu_forward(const Tensor4<T>&);                                                      \
  template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                                  \
  template Tensor4<T> linear_forward(const Tensor4<T>&, const Tensor4<T>&, std::span<const T>);            \
  template LinearGrads<T> linear_backward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&);         \
  template LossResult<T> softmax_cross_entropy(const Tensor4<T>&, std::span<const std::int32_t>);          \
  template LossResult<T> mse_loss(const Tensor4<T>&, const Tensor4<T>&,                                    \
                                  std::optional<std::span<const std::uint8_t>>);

LF_INSTANTIATE_OPS(float)
LF_INSTANTIATE_OPS(double)

#undef LF_INSTANTIATE_OPS

}  // namespace lf::nn
