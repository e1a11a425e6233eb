#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "folc/nn/network.hpp"

namespace folc {

/// Magnitude below which gradients are compared absolutely rather than
/// relatively; central differences at step 1e-5 carry roughly 1e-11 of
/// round-off in double precision.
inline constexpr double kGradFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
  return std::abs(analytic - numeric) / scale;
}

struct LayerGradCheck {
  std::size_t layer;
  std::string kind;
  std::size_t checked;
  double max_rel_error;
};

/// Compares backprop gradients against central differences for every
/// parameter. Forward passes run in train mode and reuse `seed` so dropout
/// masks stay frozen across probes. O(P) forward passes; keep networks small.
template <typename T>
std::vector<LayerGradCheck> gradient_check(const Network<T>& net, ParamVector<T> params, const Tensor<T>& input,
                                           const std::vector<std::size_t>& labels, std::uint64_t seed = 1,
                                           double step = 1e-5) {
  const Tensor<T> y = one_hot<T>(labels, net.classes());
  auto loss_at = [&](ParamVector<T>& p) {
    Rng rng(seed);
    auto pass = net.forward(p, input, Mode::Train, rng);
    return static_cast<double>(loss_and_grad(pass.logits, y).loss);
  };

  Rng rng(seed);
  auto pass = net.forward(params, input, Mode::Train, rng);
  auto lg = loss_and_grad(pass.logits, y);
  const ParamVector<T> analytic = net.backward(params, pass.caches, lg.logit_grad);

  std::vector<LayerGradCheck> out;
  for (const auto& seg : net.layout()->segments()) {
    if (seg.length == 0) continue;
    LayerGradCheck r{seg.layer, layer_kind_name(net.spec().layers[seg.layer]), 0, 0.0};
    for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) {
      const T saved = params[i];
      params[i] = saved + static_cast<T>(step);
      const double up = loss_at(params);
      params[i] = saved - static_cast<T>(step);
      const double down = loss_at(params);
      params[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(static_cast<double>(analytic[i]), numeric));
      ++r.checked;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace folc
