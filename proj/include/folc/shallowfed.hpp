#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "folc/nn/layer_spec.hpp"

namespace folc {

/// Option lists of the five searchable structure knobs, in genome order.
namespace grid {
inline constexpr std::array<std::size_t, 7> filters{8, 16, 32, 64, 128, 256, 512};
inline constexpr std::array<std::size_t, 4> kernels{3, 5, 7, 9};
inline constexpr std::array<ActivationKind, 4> activations{ActivationKind::ReLU, ActivationKind::LeakyReLU,
                                                           ActivationKind::Tanh, ActivationKind::ELU};
inline constexpr std::array<double, 5> dropouts{0.1, 0.2, 0.3, 0.4, 0.5};
inline constexpr std::array<std::size_t, 4> neurons{16, 32, 64, 128};
inline constexpr std::array<std::size_t, 5> sizes{filters.size(), kernels.size(), activations.size(),
                                                  dropouts.size(), neurons.size()};
inline constexpr std::size_t cells = 7 * 4 * 4 * 5 * 4;
}  // namespace grid

struct StructureSettings {
  std::size_t filters = 32;
  std::size_t kernel = 3;
  ActivationKind activation = ActivationKind::LeakyReLU;
  double dropout = 0.25;
  std::size_t neurons = 64;

  friend bool operator==(const StructureSettings&, const StructureSettings&) = default;
};

/// The hand-designed reference configuration (32 filters of 3x3, LeakyReLU
/// 0.1, dropout 0.25, a 64-unit penultimate dense layer).
inline StructureSettings default_settings() { return {}; }

inline constexpr std::size_t kGenomeDims = 5;
using StructureGenome = std::array<double, kGenomeDims>;

/// Option index for coordinate x on an axis with k options:
/// floor(x*k) clamped into [0, k-1].
inline std::size_t decode_axis(double x, std::size_t k) {
  if (!(x > 0.0)) return 0;  // also maps NaN to the first bin
  const double scaled = std::floor(x * static_cast<double>(k));
  return std::min(static_cast<std::size_t>(scaled), k - 1);
}

inline std::array<std::size_t, kGenomeDims> decode_indices(const StructureGenome& g) {
  std::array<std::size_t, kGenomeDims> idx{};
  for (std::size_t d = 0; d < kGenomeDims; ++d) idx[d] = decode_axis(g[d], grid::sizes[d]);
  return idx;
}

inline StructureSettings settings_from_indices(const std::array<std::size_t, kGenomeDims>& idx) {
  return {grid::filters.at(idx[0]), grid::kernels.at(idx[1]), grid::activations.at(idx[2]), grid::dropouts.at(idx[3]),
          grid::neurons.at(idx[4])};
}

inline StructureSettings decode_genome(const StructureGenome& g) { return settings_from_indices(decode_indices(g)); }

/// Flat cell number of a grid index tuple, row-major in genome order.
inline std::size_t cell_index(const std::array<std::size_t, kGenomeDims>& idx) {
  std::size_t c = 0;
  for (std::size_t d = 0; d < kGenomeDims; ++d) c = c * grid::sizes[d] + idx[d];
  return c;
}

inline std::array<std::size_t, kGenomeDims> cell_indices(std::size_t cell) {
  std::array<std::size_t, kGenomeDims> idx{};
  for (std::size_t d = kGenomeDims; d-- > 0;) {
    idx[d] = cell % grid::sizes[d];
    cell /= grid::sizes[d];
  }
  return idx;
}

enum class Variant { Baseline, ConvNeXt };

inline const char* to_string(Variant v) { return v == Variant::Baseline ? "baseline" : "convnext"; }

inline Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "convnext") return Variant::ConvNeXt;
  throw std::invalid_argument("unknown variant '" + s + "' (expected baseline or convnext)");
}

inline constexpr std::size_t kMaxFilters = 512;
inline constexpr std::size_t kConvCount = 7;

/// Width of the j-th convolution (0-based) for base width f: f at the first
/// conv, then doubling once per subsequent pair (f, 2f, 2f, 4f, 4f, 8f, 8f),
/// capped at 512.
inline std::size_t conv_width(std::size_t base, std::size_t j) {
  const std::size_t doublings = (j + 1) / 2;
  std::size_t w = base;
  for (std::size_t i = 0; i < doublings && w < kMaxFilters; ++i) w *= 2;
  return std::min(w, kMaxFilters);
}

/// Assembles the ShallowFed layer sequence:
///
///   conv act pool | conv act pool drop | conv act conv act pool drop |
///   conv act conv act BN | conv BN act | GAP |
///   dense128 act BN drop | dense(neurons) act BN drop0.5 | softmax
///
/// The convnext variant swaps the two convolutions of the fourth stage for
/// ConvNeXt blocks of the same output width.
inline NetworkSpec build_shallowfed(const StructureSettings& s, Variant variant, const Shape& input,
                                    std::size_t classes) {
  if (input.size() != 3) throw std::invalid_argument("input shape must be (C,H,W)");
  if (input[1] % 8 != 0 || input[2] % 8 != 0 || input[1] == 0 || input[2] == 0)
    throw std::invalid_argument("input spatial dims " + shape_str(input) + " must be positive multiples of 8");
  if (classes < 2) throw std::invalid_argument("at least two classes required");

  const double alpha = default_alpha(s.activation);
  const LayerSpec act = layer::Activation{s.activation, alpha};
  const LayerSpec drop = layer::Dropout{s.dropout};
  const LayerSpec bn = layer::BatchNorm{0.99, 0.01};
  std::size_t j = 0;
  auto conv = [&] { return LayerSpec{layer::Conv2D{conv_width(s.filters, j++), s.kernel}}; };
  auto staged = [&] {
    if (variant == Variant::ConvNeXt)
      return LayerSpec{layer::ConvNeXtBlock{conv_width(s.filters, j++), s.kernel, 4, s.activation, alpha}};
    return conv();
  };

  NetworkSpec n;
  n.input = input;
  n.classes = classes;
  n.variant = to_string(variant);
  auto& L = n.layers;
  L.push_back(conv()); L.push_back(act); L.push_back(layer::MaxPool2D{});
  L.push_back(conv()); L.push_back(act); L.push_back(layer::MaxPool2D{}); L.push_back(drop);
  L.push_back(conv()); L.push_back(act); L.push_back(conv()); L.push_back(act);
  L.push_back(layer::MaxPool2D{}); L.push_back(drop);
  L.push_back(staged()); L.push_back(act); L.push_back(staged()); L.push_back(act); L.push_back(bn);
  L.push_back(conv()); L.push_back(bn); L.push_back(act);
  L.push_back(layer::GlobalAvgPool{});
  L.push_back(layer::Dense{128}); L.push_back(act); L.push_back(bn); L.push_back(drop);
  L.push_back(layer::Dense{s.neurons}); L.push_back(act); L.push_back(bn); L.push_back(layer::Dropout{0.5});
  L.push_back(layer::SoftmaxHead{classes});
  n.validate();
  return n;
}

inline std::string describe(const StructureSettings& s) {
  std::ostringstream os;
  os << "filters=" << s.filters << " kernel=" << s.kernel << " activation=" << to_string(s.activation)
     << " dropout=" << s.dropout << " neurons=" << s.neurons;
  return os.str();
}

}  // namespace folc
