#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace folc {

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, T{0}), v(n, T{0}) {}
};

/// Bias-corrected Adam update in place; increments state.t by one.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: params, grads and moment vectors must have equal length");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta2, t)));
  const T step = static_cast<T>(lr), eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
    state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
    const T mh = state.m[i] * c1;
    const T vh = state.v[i] * c2;
    params[i] -= step * mh / (std::sqrt(vh) + eps);
  }
}

/// Plain gradient descent: params -= lr * grads.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, double lr) {
  if (grads.size() != params.size()) throw std::invalid_argument("sgd_step: length mismatch");
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= step * grads[i];
}

}  // namespace folc
