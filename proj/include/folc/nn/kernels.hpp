#pragma once

#include <cstddef>
#include <limits>

// Inner loops over contiguous rows. The reduction pragma lets the compiler
// vectorise float sums when built with -fopenmp-simd; without it the pragma
// is ignored and results are unchanged.

namespace folc::kernels {

/// C(m x n) += A(m x k) * B(k x n)
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C(m x k) += A(m x n) * B(k x n)^T
template <typename T>
void gemm_abt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T s{0};
#pragma omp simd reduction(+ : s)
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      c[i * k + p] += s;
    }
  }
}

/// C(k x n) += A(m x k)^T * B(m x n)
template <typename T>
void gemm_atb_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      T* crow = c + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// Same-padded im2col for one sample: cols is (C*k*k) x (H*W).
template <typename T>
void im2col(const T* in, std::size_t c, std::size_t h, std::size_t w, std::size_t k, T* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  std::size_t row = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = in + ch * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        T* dst = cols + row * h * w;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          T* drow = dst + y * W;
          if (sy < 0 || sy >= H) {
            for (std::ptrdiff_t x = 0; x < W; ++x) drow[x] = T{0};
            continue;
          }
          const T* srow = plane + sy * W;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx;
            drow[x] = (sx < 0 || sx >= W) ? T{0} : srow[sx];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the input plane.
template <typename T>
void col2im_acc(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, T* in_grad) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  std::size_t row = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* plane = in_grad + ch * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        const T* src = cols + row * h * w;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          const T* srow = src + y * W;
          T* drow = plane + sy * W;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx;
            if (sx >= 0 && sx < W) drow[sx] += srow[x];
          }
        }
      }
    }
  }
}

/// Depthwise same-padded kxk convolution for one sample, one filter per channel.
template <typename T>
void depthwise_forward(const T* in, const T* weight, const T* bias, std::size_t c, std::size_t h, std::size_t w,
                       std::size_t k, T* out) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = in + ch * h * w;
    const T* wk = weight + ch * k * k;
    T* o = out + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) o[i] = bias[ch];
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T wv = wk[ky * k + kx];
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx;
            if (sx >= 0 && sx < W) o[y * W + x] += wv * plane[sy * W + sx];
          }
        }
      }
  }
}

template <typename T>
void depthwise_backward(const T* in, const T* weight, const T* out_grad, std::size_t c, std::size_t h,
                        std::size_t w, std::size_t k, T* in_grad, T* weight_grad, T* bias_grad) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = in + ch * h * w;
    const T* g = out_grad + ch * h * w;
    T* ig = in_grad + ch * h * w;
    const T* wk = weight + ch * k * k;
    T* wg = weight_grad + ch * k * k;
    for (std::size_t i = 0; i < h * w; ++i) bias_grad[ch] += g[i];
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T wv = wk[ky * k + kx];
        T acc{0};
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx;
            if (sx < 0 || sx >= W) continue;
            acc += g[y * W + x] * plane[sy * W + sx];
            ig[sy * W + sx] += wv * g[y * W + x];
          }
        }
        wg[ky * k + kx] += acc;
      }
  }
}

}  // namespace folc::kernels
