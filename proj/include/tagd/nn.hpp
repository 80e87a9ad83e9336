#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <new>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tagd/core.hpp"

// Hand-written layer kernels with explicit forward/backward passes. All
// tensors are (batch, length, channels), channels fastest. Convolutions are
// cross-correlations (no kernel flip) with valid padding.
namespace tagd::nn {

// 64-byte aligned storage. Eigen's vectorised loops peel a different number
// of leading elements depending on buffer alignment, which changes rounding;
// fixing the alignment makes results a function of the shapes alone.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct Tensor3 {
  std::size_t batch = 0, length = 0, channels = 0;
  Buffer data;

  Tensor3() = default;
  Tensor3(std::size_t b, std::size_t l, std::size_t c, double fill = 0.0) : batch(b), length(l), channels(c), data(b * l * c, fill) {}

  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t b, std::size_t t, std::size_t c) { return data[(b * length + t) * channels + c]; }
  double operator()(std::size_t b, std::size_t t, std::size_t c) const { return data[(b * length + t) * channels + c]; }
  double* sample(std::size_t b) { return data.data() + b * length * channels; }
  const double* sample(std::size_t b) const { return data.data() + b * length * channels; }

  // (batch * length) x channels view
  MatrixMap rows() { return MatrixMap(data.data(), static_cast<Eigen::Index>(batch * length), static_cast<Eigen::Index>(channels)); }
  ConstMatrixMap rows() const { return ConstMatrixMap(data.data(), static_cast<Eigen::Index>(batch * length), static_cast<Eigen::Index>(channels)); }

  bool same_shape(const Tensor3& o) const { return batch == o.batch && length == o.length && channels == o.channels; }

  // (b, l, c) -> (b, 1, l * c); data untouched
  Tensor3 flattened() const& {
    Tensor3 t = *this;
    t.channels = length * channels;
    t.length = 1;
    return t;
  }
  Tensor3 reshaped(std::size_t l, std::size_t c) && {
    if (l * c != length * channels) throw InvalidArgument("Tensor3::reshaped: element count mismatch");
    length = l;
    channels = c;
    return std::move(*this);
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor3&) const = default;
};

inline std::string shape_str(const Tensor3& t) {
  return "(" + std::to_string(t.batch) + ", " + std::to_string(t.length) + ", " + std::to_string(t.channels) + ")";
}

// Parameter with its gradient accumulator.
struct Param {
  Buffer value;
  Buffer grad;

  Param() = default;
  explicit Param(std::size_t n) : value(n, 0.0), grad(n, 0.0) {}
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

inline void glorot_uniform(Param& p, std::size_t fan_in, std::size_t fan_out, RandomStream& stream) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : p.value) v = stream.uniform(-limit, limit);
}

// ---------------------------------------------------------------------------
// Convolution

// weight layout: out_ch x (kernel * in_ch), i.e. [o][j][c]
struct ConvParams {
  std::size_t kernel = 1, stride = 1, in_ch = 1, out_ch = 1;
  Param weight, bias;

  ConvParams() = default;
  ConvParams(std::size_t k, std::size_t s, std::size_t cin, std::size_t cout)
      : kernel(k), stride(s), in_ch(cin), out_ch(cout), weight(cout * k * cin), bias(cout) {
    if (k == 0 || s == 0 || cin == 0 || cout == 0) throw InvalidArgument("conv: kernel, stride and channels must be positive");
  }

  void init(RandomStream& stream) { glorot_uniform(weight, kernel * in_ch, kernel * out_ch, stream); }
  std::vector<Param*> params() { return {&weight, &bias}; }

  MatrixMap w() { return MatrixMap(weight.value.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(kernel * in_ch)); }
  ConstMatrixMap w() const { return ConstMatrixMap(weight.value.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(kernel * in_ch)); }
  MatrixMap dw() { return MatrixMap(weight.grad.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(kernel * in_ch)); }
};

inline std::size_t conv_output_length(std::size_t len, std::size_t kernel, std::size_t stride) {
  if (len < kernel) throw InvalidArgument("conv1d: input length " + std::to_string(len) + " shorter than kernel " + std::to_string(kernel));
  return (len - kernel) / stride + 1;
}

inline std::size_t conv_transpose_output_length(std::size_t len, std::size_t kernel, std::size_t stride) {
  if (len == 0) throw InvalidArgument("conv1d_transpose: empty input");
  return (len - 1) * stride + kernel;
}

namespace detail {

// Batch elements per im2col chunk, keeping the patch matrix near 2M doubles.
inline std::size_t chunk_batch(std::size_t batch, std::size_t rows_per_sample, std::size_t width) {
  const std::size_t per = std::max<std::size_t>(1, rows_per_sample * width);
  return std::clamp<std::size_t>((std::size_t{1} << 21) / per, 1, std::max<std::size_t>(batch, 1));
}

// Copy the sliding windows of samples [b0, b1) into rows of `patches`.
// Channels are fastest, so every window is one contiguous run of k * C values.
inline void im2col(const Tensor3& x, std::size_t b0, std::size_t b1, std::size_t kernel, std::size_t stride,
                   std::size_t out_len, RowMatrix& patches) {
  const std::size_t width = kernel * x.channels;
  patches.resize(static_cast<Eigen::Index>((b1 - b0) * out_len), static_cast<Eigen::Index>(width));
  for (std::size_t b = b0; b < b1; ++b) {
    const double* src = x.sample(b);
    for (std::size_t t = 0; t < out_len; ++t)
      std::memcpy(patches.data() + ((b - b0) * out_len + t) * width, src + t * stride * x.channels, width * sizeof(double));
  }
}

inline void col2im_add(const RowMatrix& cols, std::size_t b0, std::size_t b1, std::size_t kernel, std::size_t stride,
                       std::size_t in_len, Tensor3& out) {
  const std::size_t width = kernel * out.channels;
  for (std::size_t b = b0; b < b1; ++b) {
    double* dst = out.sample(b);
    for (std::size_t t = 0; t < in_len; ++t) {
      const double* src = cols.data() + ((b - b0) * in_len + t) * width;
      double* d = dst + t * stride * out.channels;
      for (std::size_t i = 0; i < width; ++i) d[i] += src[i];
    }
  }
}

}  // namespace detail

// y[b, t, o] = bias[o] + sum_{j, c} x[b, t*s + j, c] * w[o, j, c]
inline Tensor3 conv1d_forward(const Tensor3& x, const ConvParams& p) {
  if (x.channels != p.in_ch) throw InvalidArgument("conv1d: expected " + std::to_string(p.in_ch) + " input channels, got " + std::to_string(x.channels));
  const std::size_t out_len = conv_output_length(x.length, p.kernel, p.stride);
  Tensor3 y(x.batch, out_len, p.out_ch);
  const Eigen::Map<const Eigen::RowVectorXd> bias(p.bias.value.data(), static_cast<Eigen::Index>(p.out_ch));
  const std::size_t chunk = detail::chunk_batch(x.batch, out_len, p.kernel * p.in_ch);
  RowMatrix patches;
  for (std::size_t b0 = 0; b0 < x.batch; b0 += chunk) {
    const std::size_t b1 = std::min(x.batch, b0 + chunk);
    detail::im2col(x, b0, b1, p.kernel, p.stride, out_len, patches);
    MatrixMap out(y.data.data() + b0 * out_len * p.out_ch, patches.rows(), static_cast<Eigen::Index>(p.out_ch));
    out.noalias() = patches * p.w().transpose();
    out.rowwise() += bias;
  }
  return y;
}

// Accumulates weight/bias gradients into p and returns dL/dx (empty tensor
// when need_input_grad is false).
inline Tensor3 conv1d_backward(const Tensor3& x, const Tensor3& dy, ConvParams& p, bool need_input_grad = true) {
  const std::size_t out_len = conv_output_length(x.length, p.kernel, p.stride);
  if (dy.batch != x.batch || dy.length != out_len || dy.channels != p.out_ch)
    throw InvalidArgument("conv1d_backward: gradient shape " + shape_str(dy) + " does not match output");
  Tensor3 dx;
  if (need_input_grad) dx = Tensor3(x.batch, x.length, x.channels);
  Eigen::Map<Eigen::RowVectorXd> db(p.bias.grad.data(), static_cast<Eigen::Index>(p.out_ch));
  db += dy.rows().colwise().sum();
  const std::size_t chunk = detail::chunk_batch(x.batch, out_len, p.kernel * p.in_ch);
  RowMatrix patches, dpatches;
  for (std::size_t b0 = 0; b0 < x.batch; b0 += chunk) {
    const std::size_t b1 = std::min(x.batch, b0 + chunk);
    detail::im2col(x, b0, b1, p.kernel, p.stride, out_len, patches);
    ConstMatrixMap g(dy.data.data() + b0 * out_len * p.out_ch, patches.rows(), static_cast<Eigen::Index>(p.out_ch));
    p.dw().noalias() += g.transpose() * patches;
    if (need_input_grad) {
      dpatches.noalias() = g * p.w();
      detail::col2im_add(dpatches, b0, b1, p.kernel, p.stride, out_len, dx);
    }
  }
  return dx;
}

// Transposed convolution: the adjoint of conv1d with the same weight buffer.
// Here in_ch/out_ch refer to the transposed layer, so the weight is laid out
// in_ch x (kernel * out_ch), exactly the layout of a conv1d mapping out_ch
// channels to in_ch channels.
struct ConvTransposeParams {
  std::size_t kernel = 1, stride = 1, in_ch = 1, out_ch = 1;
  Param weight, bias;

  ConvTransposeParams() = default;
  ConvTransposeParams(std::size_t k, std::size_t s, std::size_t cin, std::size_t cout)
      : kernel(k), stride(s), in_ch(cin), out_ch(cout), weight(cin * k * cout), bias(cout) {
    if (k == 0 || s == 0 || cin == 0 || cout == 0) throw InvalidArgument("conv_transpose: kernel, stride and channels must be positive");
  }

  void init(RandomStream& stream) { glorot_uniform(weight, kernel * in_ch, kernel * out_ch, stream); }
  std::vector<Param*> params() { return {&weight, &bias}; }

  MatrixMap w() { return MatrixMap(weight.value.data(), static_cast<Eigen::Index>(in_ch), static_cast<Eigen::Index>(kernel * out_ch)); }
  ConstMatrixMap w() const { return ConstMatrixMap(weight.value.data(), static_cast<Eigen::Index>(in_ch), static_cast<Eigen::Index>(kernel * out_ch)); }
  MatrixMap dw() { return MatrixMap(weight.grad.data(), static_cast<Eigen::Index>(in_ch), static_cast<Eigen::Index>(kernel * out_ch)); }
};

// y[b, t*s + j, o] += sum_c x[b, t, c] * w[c, j, o], plus bias[o] everywhere.
inline Tensor3 conv1d_transpose_forward(const Tensor3& x, const ConvTransposeParams& p) {
  if (x.channels != p.in_ch) throw InvalidArgument("conv1d_transpose: expected " + std::to_string(p.in_ch) + " input channels, got " + std::to_string(x.channels));
  const std::size_t out_len = conv_transpose_output_length(x.length, p.kernel, p.stride);
  Tensor3 y(x.batch, out_len, p.out_ch);
  const RowMatrix cols = x.rows() * p.w();
  detail::col2im_add(cols, 0, x.batch, p.kernel, p.stride, x.length, y);
  const Eigen::Map<const Eigen::RowVectorXd> bias(p.bias.value.data(), static_cast<Eigen::Index>(p.out_ch));
  y.rows().rowwise() += bias;
  return y;
}

inline Tensor3 conv1d_transpose_backward(const Tensor3& x, const Tensor3& dy, ConvTransposeParams& p, bool need_input_grad = true) {
  const std::size_t out_len = conv_transpose_output_length(x.length, p.kernel, p.stride);
  if (dy.batch != x.batch || dy.length != out_len || dy.channels != p.out_ch)
    throw InvalidArgument("conv1d_transpose_backward: gradient shape " + shape_str(dy) + " does not match output");
  Eigen::Map<Eigen::RowVectorXd> db(p.bias.grad.data(), static_cast<Eigen::Index>(p.out_ch));
  db += dy.rows().colwise().sum();
  RowMatrix dcols;
  detail::im2col(dy, 0, dy.batch, p.kernel, p.stride, x.length, dcols);
  p.dw().noalias() += x.rows().transpose() * dcols;
  Tensor3 dx;
  if (need_input_grad) {
    dx = Tensor3(x.batch, x.length, x.channels);
    dx.rows().noalias() = dcols * p.w().transpose();
  }
  return dx;
}

// Keeps positions [front, front + length) along the time axis.
inline Tensor3 crop_forward(const Tensor3& x, std::size_t front, std::size_t length) {
  if (front + length > x.length) throw InvalidArgument("crop: window exceeds input length");
  Tensor3 y(x.batch, length, x.channels);
  for (std::size_t b = 0; b < x.batch; ++b)
    std::memcpy(y.sample(b), x.sample(b) + front * x.channels, length * x.channels * sizeof(double));
  return y;
}

inline Tensor3 crop_backward(const Tensor3& x_shape, const Tensor3& dy, std::size_t front) {
  Tensor3 dx(x_shape.batch, x_shape.length, x_shape.channels);
  for (std::size_t b = 0; b < dy.batch; ++b)
    std::memcpy(dx.sample(b) + front * dx.channels, dy.sample(b), dy.length * dy.channels * sizeof(double));
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling

struct PoolResult {
  Tensor3 out;
  std::vector<std::uint32_t> argmax;  // input time index per output element
};

// Non-overlapping windows; a trailing partial window is dropped. Ties go to
// the first index in the window.
inline PoolResult maxpool1d_forward(const Tensor3& x, std::size_t window) {
  if (window == 0 || x.length < window) throw InvalidArgument("maxpool1d: window must be in [1, length]");
  const std::size_t out_len = x.length / window;
  PoolResult r{Tensor3(x.batch, out_len, x.channels), std::vector<std::uint32_t>(x.batch * out_len * x.channels)};
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t c = 0; c < x.channels; ++c) {
        std::size_t best = t * window;
        for (std::size_t j = 1; j < window; ++j)
          if (x(b, t * window + j, c) > x(b, best, c)) best = t * window + j;
        r.out(b, t, c) = x(b, best, c);
        r.argmax[(b * out_len + t) * x.channels + c] = static_cast<std::uint32_t>(best);
      }
  return r;
}

inline Tensor3 maxpool1d_backward(const Tensor3& x_shape, const Tensor3& dy, std::span<const std::uint32_t> argmax) {
  Tensor3 dx(x_shape.batch, x_shape.length, x_shape.channels);
  for (std::size_t b = 0; b < dy.batch; ++b)
    for (std::size_t t = 0; t < dy.length; ++t)
      for (std::size_t c = 0; c < dy.channels; ++c) {
        const std::size_t i = (b * dy.length + t) * dy.channels + c;
        dx(b, argmax[i], c) += dy.data[i];
      }
  return dx;
}

// ---------------------------------------------------------------------------
// Dense

// weight layout: out x in
struct DenseParams {
  std::size_t in = 1, out = 1;
  Param weight, bias;

  DenseParams() = default;
  DenseParams(std::size_t n_in, std::size_t n_out) : in(n_in), out(n_out), weight(n_in * n_out), bias(n_out) {
    if (n_in == 0 || n_out == 0) throw InvalidArgument("dense: widths must be positive");
  }
  void init(RandomStream& stream) { glorot_uniform(weight, in, out, stream); }
  std::vector<Param*> params() { return {&weight, &bias}; }

  MatrixMap w() { return MatrixMap(weight.value.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)); }
  ConstMatrixMap w() const { return ConstMatrixMap(weight.value.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)); }
  MatrixMap dw() { return MatrixMap(weight.grad.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)); }
};

// Input is treated as (batch, 1, in) whatever its length/channel split.
inline Tensor3 dense_forward(const Tensor3& x, const DenseParams& p) {
  if (x.length * x.channels != p.in) throw InvalidArgument("dense: expected " + std::to_string(p.in) + " inputs, got " + std::to_string(x.length * x.channels));
  Tensor3 y(x.batch, 1, p.out);
  const ConstMatrixMap in(x.data.data(), static_cast<Eigen::Index>(x.batch), static_cast<Eigen::Index>(p.in));
  const Eigen::Map<const Eigen::RowVectorXd> bias(p.bias.value.data(), static_cast<Eigen::Index>(p.out));
  y.rows().noalias() = in * p.w().transpose();
  y.rows().rowwise() += bias;
  return y;
}

inline Tensor3 dense_backward(const Tensor3& x, const Tensor3& dy, DenseParams& p, bool need_input_grad = true) {
  if (dy.batch != x.batch || dy.length * dy.channels != p.out) throw InvalidArgument("dense_backward: gradient shape mismatch");
  const ConstMatrixMap in(x.data.data(), static_cast<Eigen::Index>(x.batch), static_cast<Eigen::Index>(p.in));
  const ConstMatrixMap g(dy.data.data(), static_cast<Eigen::Index>(dy.batch), static_cast<Eigen::Index>(p.out));
  p.dw().noalias() += g.transpose() * in;
  Eigen::Map<Eigen::RowVectorXd>(p.bias.grad.data(), static_cast<Eigen::Index>(p.out)) += g.colwise().sum();
  Tensor3 dx;
  if (need_input_grad) {
    dx = Tensor3(x.batch, x.length, x.channels);
    MatrixMap(dx.data.data(), static_cast<Eigen::Index>(x.batch), static_cast<Eigen::Index>(p.in)).noalias() = g * p.w();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise activations. Backward passes take the forward output y where
// that is all they need.

inline Tensor3 relu_forward(Tensor3 x) {
  for (auto& v : x.data) v = v > 0.0 ? v : 0.0;
  return x;
}
inline Tensor3 relu_backward(const Tensor3& y, Tensor3 dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (!(y.data[i] > 0.0)) dy.data[i] = 0.0;
  return dy;
}

inline Tensor3 tanh_forward(Tensor3 x) {
  for (auto& v : x.data) v = std::tanh(v);
  return x;
}
inline Tensor3 tanh_backward(const Tensor3& y, Tensor3 dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= 1.0 - y.data[i] * y.data[i];
  return dy;
}

inline double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
inline Tensor3 sigmoid_forward(Tensor3 x) {
  for (auto& v : x.data) v = sigmoid(v);
  return x;
}
inline Tensor3 sigmoid_backward(const Tensor3& y, Tensor3 dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= y.data[i] * (1.0 - y.data[i]);
  return dy;
}

// Inverted dropout: survivors are scaled by 1/(1-rate) so inference is the identity.
struct DropoutResult {
  Tensor3 out;
  std::vector<double> mask;  // 0 or 1/(1-rate) per element; empty means identity
};

inline DropoutResult dropout_forward(Tensor3 x, double rate, RandomStream& stream, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return {std::move(x), {}};
  std::vector<double> mask(x.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = stream.uniform() < rate ? 0.0 : keep_scale;
    x.data[i] *= mask[i];
  }
  return {std::move(x), std::move(mask)};
}

inline Tensor3 dropout_backward(Tensor3 dy, std::span<const double> mask) {
  if (mask.empty()) return dy;
  for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= mask[i];
  return dy;
}

// ---------------------------------------------------------------------------
// Losses (mean over the batch)

struct LossResult {
  double loss = 0;
  Tensor3 grad;
};

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0;
  for (auto& v : p) z += (v = std::exp(v - mx));
  for (auto& v : p) v /= z;
  return p;
}

// logits: (batch, 1, classes)
inline LossResult softmax_xent(const Tensor3& logits, std::span<const int> labels) {
  const std::size_t k = logits.length * logits.channels;
  if (labels.size() != logits.batch) throw InvalidArgument("softmax_xent: label count mismatch");
  LossResult r{0.0, Tensor3(logits.batch, logits.length, logits.channels)};
  const double inv_b = 1.0 / static_cast<double>(logits.batch);
  for (std::size_t b = 0; b < logits.batch; ++b) {
    const std::span<const double> row(logits.sample(b), k);
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) throw InvalidArgument("softmax_xent: label out of range");
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    r.loss += (log_z - row[static_cast<std::size_t>(labels[b])]) * inv_b;
    double* g = r.grad.sample(b);
    for (std::size_t c = 0; c < k; ++c) g[c] = std::exp(row[c] - log_z) * inv_b;
    g[labels[b]] -= inv_b;
  }
  return r;
}

inline constexpr double kBceEpsilon = 1e-7;

// Binary cross-entropy on probabilities clamped to [eps, 1 - eps].
inline LossResult bce(const Tensor3& pred, std::span<const double> target) {
  if (target.size() != pred.size()) throw InvalidArgument("bce: target count mismatch");
  LossResult r{0.0, Tensor3(pred.batch, pred.length, pred.channels)};
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred.data[i], kBceEpsilon, 1.0 - kBceEpsilon);
    const double t = target[i];
    r.loss -= (t * std::log(p) + (1.0 - t) * std::log(1.0 - p)) * inv_n;
    r.grad.data[i] = (p - t) / (p * (1.0 - p)) * inv_n;
  }
  return r;
}

// sigmoid followed by binary cross-entropy, fused: the gradient with respect
// to the logit is (sigmoid(z) - t) / n and never saturates.
inline LossResult bce_with_logits(const Tensor3& logits, std::span<const double> target) {
  if (target.size() != logits.size()) throw InvalidArgument("bce_with_logits: target count mismatch");
  LossResult r{0.0, Tensor3(logits.batch, logits.length, logits.channels)};
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits.data[i];
    const double t = target[i];
    // log(1 + exp(-|z|)) + max(z, 0) - t z
    r.loss += (std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - t * z) * inv_n;
    r.grad.data[i] = (sigmoid(z) - t) * inv_n;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

  // Bias-corrected update of every parameter from its accumulated gradient.
  // The parameter list must be the same (same order and sizes) on every call.
  void step(std::span<Param* const> params) {
    if (m_.empty()) {
      for (const Param* p : params) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw InvalidArgument("adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Param& p = *params[k];
      auto& m = m_[k];
      auto& v = v_[k];
      if (m.size() != p.size()) throw InvalidArgument("adam: parameter size changed between steps");
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        p.value[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// NN v1 parameter container:
//   NN v1
//   meta <key> <value>          (any number, value runs to end of line)
//   tensor <name> <count>       (manifest, payload order)
//   data
//   <little-endian float64 payload>

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;

  const std::string& meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw DataError("NN checkpoint: missing meta key '" + key + "'");
  }
  const std::vector<double>& tensor(const std::string& name) const {
    for (const auto& [k, v] : tensors)
      if (k == name) return v;
    throw DataError("NN checkpoint: missing tensor '" + name + "'");
  }
};

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
  return r;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out << "NN v1\n";
  for (const auto& [k, v] : ck.meta) out << "meta " << k << ' ' << v << '\n';
  for (const auto& [name, values] : ck.tensors) out << "tensor " << name << ' ' << values.size() << '\n';
  out << "data\n";
  for (const auto& [name, values] : ck.tensors) {
    for (double v : values) {
      const auto bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw DataError("NN checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "NN v1") throw DataError("NN checkpoint: bad magic line");
  Checkpoint ck;
  std::vector<std::size_t> counts;
  while (true) {
    if (!std::getline(in, line)) throw DataError("NN checkpoint: truncated manifest");
    if (line == "data") break;
    std::istringstream ls(line);
    std::string kind, key;
    ls >> kind >> key;
    if (kind == "meta") {
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ck.meta.emplace_back(key, value);
    } else if (kind == "tensor") {
      std::size_t n = 0;
      if (!(ls >> n)) throw DataError("NN checkpoint: bad tensor line");
      ck.tensors.emplace_back(key, std::vector<double>());
      counts.push_back(n);
    } else {
      throw DataError("NN checkpoint: unknown manifest line '" + line + "'");
    }
  }
  for (std::size_t k = 0; k < ck.tensors.size(); ++k) {
    auto& values = ck.tensors[k].second;
    values.resize(counts[k]);
    for (auto& v : values) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw DataError("NN checkpoint: truncated payload");
      v = std::bit_cast<double>(detail::to_little_endian(bits));
    }
  }
  return ck;
}

inline void load_into(Param& p, const std::vector<double>& values, const std::string& name) {
  if (values.size() != p.size())
    throw DataError("NN checkpoint: tensor '" + name + "' has " + std::to_string(values.size()) + " values, expected " + std::to_string(p.size()));
  p.value.assign(values.begin(), values.end());
  p.zero_grad();
}

}  // namespace tagd::nn
