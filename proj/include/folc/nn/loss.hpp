#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "folc/nn/tensor.hpp"

namespace folc {

/// Row-wise softmax of a (batch, classes) tensor, max-shifted for stability.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax expects (batch, classes), got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) {
      p[i * k + j] = std::exp(row[j] - mx);
      sum += p[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= sum;
  }
  return p;
}

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> logit_grad;
};

/// Mean categorical cross-entropy over the batch and its gradient
/// (softmax - labels) / batch. Each label row must be exactly one-hot.
template <typename T>
LossResult<T> loss_and_grad(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.shape() != labels.shape() || logits.rank() != 2)
    throw std::invalid_argument("logits " + shape_str(logits.shape()) + " and labels " + shape_str(labels.shape()) +
                                " must share a (batch, classes) shape");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  LossResult<T> r{T{0}, Tensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * k;
    const T* y = labels.data() + i * k;
    std::size_t ones = 0, truth = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (y[j] == T{1}) {
        ++ones;
        truth = j;
      } else if (y[j] != T{0}) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) throw std::invalid_argument("label row " + std::to_string(i) + " is not one-hot");
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    total += static_cast<double>(lse - row[truth]);
    for (std::size_t j = 0; j < k; ++j)
      r.logit_grad[i * k + j] = (std::exp(row[j] - lse) - y[j]) / static_cast<T>(n);
  }
  r.loss = static_cast<T>(total / static_cast<double>(n));
  return r;
}

/// One-hot encoding of integer labels.
template <typename T>
Tensor<T> one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor<T> t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw std::invalid_argument("label out of range");
    t[i * classes + labels[i]] = T{1};
  }
  return t;
}

}  // namespace folc
