#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace folc::data {

/// Planar image, channels x height x width, row-major.
template <typename T>
struct Plane {
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<T> values;

  Plane() = default;
  Plane(std::size_t c, std::size_t h, std::size_t w, T fill = T{0})
      : channels(c), height(h), width(w), values(c * h * w, fill) {}

  T& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }

  // Bilinear sample at fractional coordinates, edges clamped.
  double sample(std::size_t c, double y, double x) const {
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    const double top = (1 - fx) * at(c, y0, x0) + fx * at(c, y0, x1);
    const double bottom = (1 - fx) * at(c, y1, x0) + fx * at(c, y1, x1);
    return (1 - fy) * top + fy * bottom;
  }

  friend bool operator==(const Plane&, const Plane&) = default;
};

/// Bilinear resize with corner alignment: output corners sample the input
/// corners exactly.
template <typename T>
Plane<T> resize_bilinear(const Plane<T>& in, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || in.height == 0 || in.width == 0) throw std::invalid_argument("resize: empty image");
  Plane<T> out(in.channels, h, w);
  const double sy = h > 1 ? static_cast<double>(in.height - 1) / static_cast<double>(h - 1) : 0.0;
  const double sx = w > 1 ? static_cast<double>(in.width - 1) / static_cast<double>(w - 1) : 0.0;
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.at(c, y, x) = static_cast<T>(in.sample(c, static_cast<double>(y) * sy, static_cast<double>(x) * sx));
  return out;
}

/// Resize to target x target, then map pixel values linearly onto [0,1].
/// With a known source range (for instance 0..255) that range is used;
/// otherwise the image's own min and max are, and a flat image becomes 0.5.
inline Plane<float> preprocess(const Plane<double>& src, std::size_t target,
                               std::optional<std::pair<double, double>> source_range = std::nullopt) {
  for (double v : src.values)
    if (!std::isfinite(v)) throw std::invalid_argument("preprocess: non-finite source pixel");
  Plane<double> r = (src.height == target && src.width == target) ? src : resize_bilinear(src, target, target);
  double lo, hi;
  if (source_range) {
    std::tie(lo, hi) = *source_range;
    if (!(hi > lo)) throw std::invalid_argument("preprocess: source range must have hi > lo");
  } else {
    auto [mn, mx] = std::minmax_element(r.values.begin(), r.values.end());
    lo = *mn;
    hi = *mx;
  }
  Plane<float> out(r.channels, r.height, r.width);
  for (std::size_t i = 0; i < r.values.size(); ++i)
    out.values[i] = hi > lo ? static_cast<float>(std::clamp((r.values[i] - lo) / (hi - lo), 0.0, 1.0)) : 0.5f;
  return out;
}

template <typename T>
Plane<T> flip_horizontal(const Plane<T>& in) {
  Plane<T> out = in;
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t y = 0; y < in.height; ++y)
      std::reverse(out.values.begin() + static_cast<std::ptrdiff_t>((c * in.height + y) * in.width),
                   out.values.begin() + static_cast<std::ptrdiff_t>((c * in.height + y + 1) * in.width));
  return out;
}

/// Inverse-mapped affine warp about the image centre with clamped edges.
template <typename T>
Plane<T> warp(const Plane<T>& in, double degrees, double shift_y, double shift_x) {
  Plane<T> out(in.channels, in.height, in.width);
  const double a = degrees * std::numbers::pi / 180.0, ca = std::cos(a), sa = std::sin(a);
  const double cy = (static_cast<double>(in.height) - 1) / 2, cx = (static_cast<double>(in.width) - 1) / 2;
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x) {
      const double dy = static_cast<double>(y) - cy - shift_y, dx = static_cast<double>(x) - cx - shift_x;
      const double sy = cy + ca * dy - sa * dx, sx = cx + sa * dy + ca * dx;
      for (std::size_t c = 0; c < in.channels; ++c) out.at(c, y, x) = static_cast<T>(in.sample(c, sy, sx));
    }
  return out;
}

template <typename T>
Plane<T> rotate(const Plane<T>& in, double degrees) {
  return warp(in, degrees, 0.0, 0.0);
}

/// Shift by fractions of the image height and width.
template <typename T>
Plane<T> translate(const Plane<T>& in, double frac_y, double frac_x) {
  return warp(in, 0.0, frac_y * static_cast<double>(in.height), frac_x * static_cast<double>(in.width));
}

}  // namespace folc::data
