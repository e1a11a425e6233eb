#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "folc/nn/kernels.hpp"
#include "folc/nn/layer_spec.hpp"
#include "folc/nn/tensor.hpp"
#include "folc/rng.hpp"

namespace folc {

enum class Mode { Train, Infer };

/// Everything a layer needs to run its backward pass. Which fields are
/// populated depends on the layer kind recorded in `kind`.
template <typename T>
struct LayerCache {
  std::size_t kind = std::variant_npos;
  Mode mode = Mode::Infer;
  Shape input_shape;
  Tensor<T> input;  // kept only by layers whose backward pass reads it
  Tensor<T> output;
  std::vector<T> mask;              // dropout
  std::vector<T> xhat;              // batch norm
  std::vector<T> inv_std;           // batch norm, per channel
  std::vector<std::uint32_t> argmax;  // max pool
  Tensor<T> dw_out, hidden_pre, hidden_post;  // ConvNeXt block
};

template <typename T>
struct LayerGrads {
  Tensor<T> input_grad;
  std::vector<T> param_grads;  // same layout as the layer's parameter segment
};

template <typename T>
inline T activate(ActivationKind k, T alpha, T x) {
  switch (k) {
    case ActivationKind::ReLU: return x > T{0} ? x : T{0};
    case ActivationKind::LeakyReLU: return x > T{0} ? x : alpha * x;
    case ActivationKind::Tanh: return std::tanh(x);
    case ActivationKind::ELU: return x > T{0} ? x : alpha * std::expm1(x);
  }
  return x;
}

/// Derivative given the pre-activation x and the activation y.
template <typename T>
inline T activate_grad(ActivationKind k, T alpha, T x, T y) {
  switch (k) {
    case ActivationKind::ReLU: return x > T{0} ? T{1} : T{0};
    case ActivationKind::LeakyReLU: return x > T{0} ? T{1} : alpha;
    case ActivationKind::Tanh: return T{1} - y * y;
    case ActivationKind::ELU: return x > T{0} ? T{1} : y + alpha;
  }
  return T{1};
}

namespace detail {

inline Shape without_batch(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

inline Shape with_batch(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

template <typename T>
void batch_norm_stats(const Tensor<T>& x, std::size_t& channels, std::size_t& spatial) {
  channels = x.dim(1);
  spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
}

// Pointwise (1x1) conv over one sample: out(cout x hw) += W(cout x cin) * in(cin x hw).
template <typename T>
void pointwise(const T* w, const T* bias, const T* in, std::size_t cout, std::size_t cin, std::size_t hw, T* out) {
  if (bias)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t j = 0; j < hw; ++j) out[o * hw + j] = bias[o];
  kernels::gemm_acc(w, in, out, cout, cin, hw);
}

// Samples per im2col chunk: enough to give the GEMM long rows on small
// feature maps without materialising the whole batch at large ones.
inline std::size_t conv_chunk(std::size_t n, std::size_t hw) {
  return std::max<std::size_t>(1, std::min(n, std::max<std::size_t>(1, 4096 / hw)));
}

// (m, c, hw) sample-major block -> (c, m*hw) channel-major block.
template <typename T>
void gather_channels(const T* src, std::size_t c, std::size_t hw, std::size_t m, T* dst) {
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (s * c + ch) * hw, hw, dst + ch * m * hw + s * hw);
}

template <typename T>
void scatter_channels(const T* src, std::size_t c, std::size_t hw, std::size_t m, T* dst) {
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + ch * m * hw + s * hw, hw, dst + (s * c + ch) * hw);
}

// im2col over m samples: rows are (c*k*k), columns are (m*hw).
template <typename T>
void gather_columns(const T* in, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t m, T* cols) {
  const std::size_t hw = h * w, K = c * k * k;
  if (k == 1) {
    gather_channels(in, c, hw, m, cols);
    return;
  }
  if (m == 1) {
    kernels::im2col(in, c, h, w, k, cols);
    return;
  }
  std::vector<T> one(K * hw);
  for (std::size_t s = 0; s < m; ++s) {
    kernels::im2col(in + s * c * hw, c, h, w, k, one.data());
    for (std::size_t r = 0; r < K; ++r) std::copy_n(one.data() + r * hw, hw, cols + r * m * hw + s * hw);
  }
}

template <typename T>
void scatter_columns_acc(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t m,
                         T* in_grad) {
  const std::size_t hw = h * w, K = c * k * k;
  if (k == 1) {
    for (std::size_t s = 0; s < m; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = cols + ch * m * hw + s * hw;
        T* dst = in_grad + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
      }
    return;
  }
  if (m == 1) {
    kernels::col2im_acc(cols, c, h, w, k, in_grad);
    return;
  }
  std::vector<T> one(K * hw);
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t r = 0; r < K; ++r) std::copy_n(cols + r * m * hw + s * hw, hw, one.data() + r * hw);
    kernels::col2im_acc(one.data(), c, h, w, k, in_grad + s * c * hw);
  }
}

}  // namespace detail

/// Runs one layer. `params` is the layer's segment of the parameter vector;
/// batch norm in train mode writes its running statistics back into it.
template <typename T>
std::pair<Tensor<T>, LayerCache<T>> layer_forward(const LayerSpec& spec, const Tensor<T>& input, std::span<T> params,
                                                  Mode mode, Rng& rng, std::size_t index = 0) {
  if (input.rank() < 2)
    throw ShapeError("layer " + std::to_string(index) + " (" + layer_kind_name(spec) +
                     "): input needs a batch dimension, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0);
  const Shape in_shape = detail::without_batch(input.shape());
  const Shape out_shape = output_shape(spec, in_shape, index);
  const std::size_t expected = param_count(spec, in_shape);
  if (params.size() != expected)
    throw std::invalid_argument("layer " + std::to_string(index) + ": parameter segment has " +
                                std::to_string(params.size()) + " values, expected " + std::to_string(expected));

  LayerCache<T> cache;
  cache.kind = spec.index();
  cache.mode = mode;
  cache.input_shape = input.shape();
  Tensor<T> out(detail::with_batch(n, out_shape));

  std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, layer::Conv2D>) {
          cache.input = input;
          const std::size_t cin = in_shape[0], h = in_shape[1], w = in_shape[2], k = l.kernel;
          const std::size_t cout = l.out_channels, K = cin * k * k, hw = h * w;
          const T* weight = params.data();
          const T* bias = weight + cout * K;
          const std::size_t chunk = detail::conv_chunk(n, hw);
          std::vector<T> cols(K * chunk * hw), y(cout * chunk * hw);
          for (std::size_t s0 = 0; s0 < n; s0 += chunk) {
            const std::size_t m = std::min(chunk, n - s0), cols_n = m * hw;
            detail::gather_columns(input.data() + s0 * cin * hw, cin, h, w, k, m, cols.data());
            detail::pointwise(weight, bias, cols.data(), cout, K, cols_n, y.data());
            detail::scatter_channels(y.data(), cout, hw, m, out.data() + s0 * cout * hw);
          }
        } else if constexpr (std::is_same_v<L, layer::MaxPool2D>) {
          const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2], oh = h / 2, ow = w / 2;
          cache.argmax.resize(out.size());
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t base = (s * c + ch) * h * w;
              for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                  std::size_t best = base + 2 * y * w + 2 * x;
                  for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                      const std::size_t idx = base + (2 * y + dy) * w + 2 * x + dx;
                      if (input[idx] > input[best]) best = idx;
                    }
                  const std::size_t o = ((s * c + ch) * oh + y) * ow + x;
                  out[o] = input[best];
                  cache.argmax[o] = static_cast<std::uint32_t>(best);
                }
            }
        } else if constexpr (std::is_same_v<L, layer::Activation>) {
          const T a = static_cast<T>(l.alpha);
          for (std::size_t i = 0; i < input.size(); ++i) out[i] = activate(l.kind, a, input[i]);
          cache.input = input;
          cache.output = out;
        } else if constexpr (std::is_same_v<L, layer::Dropout>) {
          if (mode == Mode::Infer || l.rate == 0.0) {
            out = input;
            if (mode == Mode::Train) cache.mask.assign(input.size(), T{1});
          } else {
            const double keep = 1.0 - l.rate;
            const T scale = static_cast<T>(1.0 / keep);
            cache.mask.resize(input.size());
            for (std::size_t i = 0; i < input.size(); ++i) {
              cache.mask[i] = rng.uniform() < keep ? scale : T{0};
              out[i] = input[i] * cache.mask[i];
            }
          }
        } else if constexpr (std::is_same_v<L, layer::BatchNorm>) {
          std::size_t c, sp;
          detail::batch_norm_stats(input, c, sp);
          T* gamma = params.data();
          T* beta = gamma + c;
          T* rmean = beta + c;
          T* rvar = rmean + c;
          const T eps = static_cast<T>(l.epsilon);
          cache.xhat.resize(input.size());
          cache.inv_std.resize(c);
          const std::size_t m = n * sp;
          for (std::size_t ch = 0; ch < c; ++ch) {
            T mean, var;
            if (mode == Mode::Train) {
              double acc = 0.0;
              for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < sp; ++i) acc += input[(s * c + ch) * sp + i];
              mean = static_cast<T>(acc / static_cast<double>(m));
              double vacc = 0.0;
              for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < sp; ++i) {
                  const double d = input[(s * c + ch) * sp + i] - mean;
                  vacc += d * d;
                }
              var = static_cast<T>(vacc / static_cast<double>(m));
              const T mom = static_cast<T>(l.momentum);
              rmean[ch] = mom * rmean[ch] + (T{1} - mom) * mean;
              rvar[ch] = mom * rvar[ch] + (T{1} - mom) * var;
            } else {
              mean = rmean[ch];
              var = rvar[ch];
            }
            const T inv = T{1} / std::sqrt(var + eps);
            cache.inv_std[ch] = inv;
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t i = 0; i < sp; ++i) {
                const std::size_t idx = (s * c + ch) * sp + i;
                const T xh = (input[idx] - mean) * inv;
                cache.xhat[idx] = xh;
                out[idx] = gamma[ch] * xh + beta[ch];
              }
          }
        } else if constexpr (std::is_same_v<L, layer::Flatten>) {
          out = input.reshaped(out.shape());
        } else if constexpr (std::is_same_v<L, layer::GlobalAvgPool>) {
          const std::size_t c = in_shape[0], hw = in_shape[1] * in_shape[2];
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t ch = 0; ch < c; ++ch) {
              T acc{0};
              const T* p = input.data() + (s * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) acc += p[i];
              out[s * c + ch] = acc / static_cast<T>(hw);
            }
        } else if constexpr (std::is_same_v<L, layer::Dense> || std::is_same_v<L, layer::SoftmaxHead>) {
          std::size_t units;
          if constexpr (std::is_same_v<L, layer::Dense>) units = l.neurons;
          else units = l.classes;
          const std::size_t f = in_shape[0];
          const T* weight = params.data();
          const T* bias = weight + units * f;
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t o = 0; o < units; ++o) out[s * units + o] = bias[o];
          kernels::gemm_abt_acc(input.data(), weight, out.data(), n, f, units);
          cache.input = input;
        } else if constexpr (std::is_same_v<L, layer::ConvNeXtBlock>) {
          const std::size_t cin = in_shape[0], h = in_shape[1], w = in_shape[2], hw = h * w, k = l.kernel;
          const std::size_t hidden = l.expansion * l.channels, cout = l.channels;
          const T* dw_w = params.data();
          const T* dw_b = dw_w + cin * k * k;
          const T* pw1_w = dw_b + cin;
          const T* pw1_b = pw1_w + hidden * cin;
          const T* pw2_w = pw1_b + hidden;
          const T* pw2_b = pw2_w + cout * hidden;
          const T* proj = pw2_b + cout;
          const T a = static_cast<T>(l.alpha);
          cache.input = input;
          cache.dw_out = Tensor<T>({n, cin, h, w});
          cache.hidden_pre = Tensor<T>({n, hidden, h, w});
          cache.hidden_post = Tensor<T>({n, hidden, h, w});
          for (std::size_t s = 0; s < n; ++s) {
            const T* x = input.data() + s * cin * hw;
            T* d = cache.dw_out.data() + s * cin * hw;
            T* hp = cache.hidden_pre.data() + s * hidden * hw;
            T* hq = cache.hidden_post.data() + s * hidden * hw;
            T* y = out.data() + s * cout * hw;
            kernels::depthwise_forward(x, dw_w, dw_b, cin, h, w, k, d);
            detail::pointwise(pw1_w, pw1_b, d, hidden, cin, hw, hp);
            for (std::size_t i = 0; i < hidden * hw; ++i) hq[i] = activate(l.activation, a, hp[i]);
            detail::pointwise(pw2_w, pw2_b, hq, cout, hidden, hw, y);
            if (cin == cout)
              for (std::size_t i = 0; i < cout * hw; ++i) y[i] += x[i];
            else
              kernels::gemm_acc(proj, x, y, cout, cin, hw);
          }
        }
      },
      spec);

  if (!out.all_finite())
    throw std::runtime_error("layer " + std::to_string(index) + " (" + layer_kind_name(spec) +
                             "): non-finite activation");
  return {std::move(out), std::move(cache)};
}

/// Backward pass of one layer from its forward cache.
template <typename T>
LayerGrads<T> layer_backward(const LayerSpec& spec, const LayerCache<T>& cache, std::span<const T> params,
                             const Tensor<T>& upstream, std::size_t index = 0) {
  if (cache.kind != spec.index())
    throw std::invalid_argument("layer " + std::to_string(index) + ": cache was produced by a different layer kind");
  const Tensor<T>& input = cache.input;
  const std::size_t n = cache.input_shape.at(0);
  const Shape in_shape = detail::without_batch(cache.input_shape);
  const Shape out_shape = detail::with_batch(n, output_shape(spec, in_shape, index));
  if (upstream.shape() != out_shape)
    throw ShapeError("layer " + std::to_string(index) + " (" + layer_kind_name(spec) + "): upstream gradient " +
                     shape_str(upstream.shape()) + " does not match output " + shape_str(out_shape));

  LayerGrads<T> g;
  g.input_grad = Tensor<T>(cache.input_shape);
  g.param_grads.assign(params.size(), T{0});
  Tensor<T>& dx = g.input_grad;

  std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, layer::Conv2D>) {
          const std::size_t cin = in_shape[0], h = in_shape[1], w = in_shape[2], k = l.kernel;
          const std::size_t cout = l.out_channels, K = cin * k * k, hw = h * w;
          const T* weight = params.data();
          T* dW = g.param_grads.data();
          T* dB = dW + cout * K;
          const std::size_t chunk = detail::conv_chunk(n, hw);
          std::vector<T> cols(K * chunk * hw), dcols(K * chunk * hw), dy(cout * chunk * hw);
          for (std::size_t s0 = 0; s0 < n; s0 += chunk) {
            const std::size_t m = std::min(chunk, n - s0), cols_n = m * hw;
            detail::gather_channels(upstream.data() + s0 * cout * hw, cout, hw, m, dy.data());
            for (std::size_t o = 0; o < cout; ++o) {
              T acc{0};
              for (std::size_t j = 0; j < cols_n; ++j) acc += dy[o * cols_n + j];
              dB[o] += acc;
            }
            detail::gather_columns(input.data() + s0 * cin * hw, cin, h, w, k, m, cols.data());
            kernels::gemm_abt_acc(dy.data(), cols.data(), dW, cout, cols_n, K);
            std::fill(dcols.begin(), dcols.begin() + K * cols_n, T{0});
            kernels::gemm_atb_acc(weight, dy.data(), dcols.data(), cout, K, cols_n);
            detail::scatter_columns_acc(dcols.data(), cin, h, w, k, m, dx.data() + s0 * cin * hw);
          }
        } else if constexpr (std::is_same_v<L, layer::MaxPool2D>) {
          for (std::size_t o = 0; o < upstream.size(); ++o) dx[cache.argmax[o]] += upstream[o];
        } else if constexpr (std::is_same_v<L, layer::Activation>) {
          const T a = static_cast<T>(l.alpha);
          for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] = upstream[i] * activate_grad(l.kind, a, input[i], cache.output[i]);
        } else if constexpr (std::is_same_v<L, layer::Dropout>) {
          if (cache.mode == Mode::Infer) dx = upstream;
          else
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = upstream[i] * cache.mask[i];
        } else if constexpr (std::is_same_v<L, layer::BatchNorm>) {
          std::size_t c, sp;
          detail::batch_norm_stats(dx, c, sp);
          const T* gamma = params.data();
          T* dgamma = g.param_grads.data();
          T* dbeta = dgamma + c;
          const T m = static_cast<T>(n * sp);
          for (std::size_t ch = 0; ch < c; ++ch) {
            T sg{0}, sgx{0};
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t i = 0; i < sp; ++i) {
                const std::size_t idx = (s * c + ch) * sp + i;
                sg += upstream[idx];
                sgx += upstream[idx] * cache.xhat[idx];
              }
            dgamma[ch] = sgx;
            dbeta[ch] = sg;
            const T scale = gamma[ch] * cache.inv_std[ch];
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t i = 0; i < sp; ++i) {
                const std::size_t idx = (s * c + ch) * sp + i;
                if (cache.mode == Mode::Train)
                  dx[idx] = scale / m * (m * upstream[idx] - sg - cache.xhat[idx] * sgx);
                else
                  dx[idx] = scale * upstream[idx];
              }
          }
        } else if constexpr (std::is_same_v<L, layer::Flatten>) {
          dx = upstream.reshaped(cache.input_shape);
        } else if constexpr (std::is_same_v<L, layer::GlobalAvgPool>) {
          const std::size_t c = in_shape[0], hw = in_shape[1] * in_shape[2];
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T v = upstream[s * c + ch] / static_cast<T>(hw);
              T* p = dx.data() + (s * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) p[i] = v;
            }
        } else if constexpr (std::is_same_v<L, layer::Dense> || std::is_same_v<L, layer::SoftmaxHead>) {
          std::size_t units;
          if constexpr (std::is_same_v<L, layer::Dense>) units = l.neurons;
          else units = l.classes;
          const std::size_t f = in_shape[0];
          const T* weight = params.data();
          T* dW = g.param_grads.data();
          T* dB = dW + units * f;
          kernels::gemm_atb_acc(upstream.data(), input.data(), dW, n, units, f);
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t o = 0; o < units; ++o) dB[o] += upstream[s * units + o];
          kernels::gemm_acc(upstream.data(), weight, dx.data(), n, units, f);
        } else if constexpr (std::is_same_v<L, layer::ConvNeXtBlock>) {
          const std::size_t cin = in_shape[0], h = in_shape[1], w = in_shape[2], hw = h * w, k = l.kernel;
          const std::size_t hidden = l.expansion * l.channels, cout = l.channels;
          const T* dw_w = params.data();
          const T* pw1_w = dw_w + cin * k * k + cin;
          const T* pw2_w = pw1_w + hidden * cin + hidden;
          const T* proj = pw2_w + cout * hidden + cout;
          T* g_dw_w = g.param_grads.data();
          T* g_dw_b = g_dw_w + cin * k * k;
          T* g_pw1_w = g_dw_b + cin;
          T* g_pw1_b = g_pw1_w + hidden * cin;
          T* g_pw2_w = g_pw1_b + hidden;
          T* g_pw2_b = g_pw2_w + cout * hidden;
          T* g_proj = g_pw2_b + cout;
          const T a = static_cast<T>(l.alpha);
          std::vector<T> dh(hidden * hw), dd(cin * hw);
          for (std::size_t s = 0; s < n; ++s) {
            const T* x = input.data() + s * cin * hw;
            const T* dy = upstream.data() + s * cout * hw;
            const T* d = cache.dw_out.data() + s * cin * hw;
            const T* hp = cache.hidden_pre.data() + s * hidden * hw;
            const T* hq = cache.hidden_post.data() + s * hidden * hw;
            T* dxs = dx.data() + s * cin * hw;
            // shortcut
            if (cin == cout)
              for (std::size_t i = 0; i < cin * hw; ++i) dxs[i] += dy[i];
            else {
              kernels::gemm_abt_acc(dy, x, g_proj, cout, hw, cin);
              kernels::gemm_atb_acc(proj, dy, dxs, cout, cin, hw);
            }
            // projection
            for (std::size_t o = 0; o < cout; ++o)
              for (std::size_t j = 0; j < hw; ++j) g_pw2_b[o] += dy[o * hw + j];
            kernels::gemm_abt_acc(dy, hq, g_pw2_w, cout, hw, hidden);
            std::fill(dh.begin(), dh.end(), T{0});
            kernels::gemm_atb_acc(pw2_w, dy, dh.data(), cout, hidden, hw);
            for (std::size_t i = 0; i < hidden * hw; ++i) dh[i] *= activate_grad(l.activation, a, hp[i], hq[i]);
            // expansion
            for (std::size_t o = 0; o < hidden; ++o)
              for (std::size_t j = 0; j < hw; ++j) g_pw1_b[o] += dh[o * hw + j];
            kernels::gemm_abt_acc(dh.data(), d, g_pw1_w, hidden, hw, cin);
            std::fill(dd.begin(), dd.end(), T{0});
            kernels::gemm_atb_acc(pw1_w, dh.data(), dd.data(), hidden, cin, hw);
            // depthwise
            kernels::depthwise_backward(x, dw_w, dd.data(), cin, h, w, k, dxs, g_dw_w, g_dw_b);
          }
        }
      },
      spec);

  return g;
}

}  // namespace folc
