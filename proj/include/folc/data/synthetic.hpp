#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "folc/data/dataset.hpp"

namespace folc::data {

inline constexpr const char* kGeneratorVersion = "folc-synth-1";
inline constexpr std::size_t kMaxSyntheticClasses = 4;

inline std::vector<std::string> synthetic_class_names(std::size_t k) {
  static const std::array<const char*, kMaxSyntheticClasses> names{"blob", "ring", "pair", "bar"};
  return {names.begin(), names.begin() + static_cast<std::ptrdiff_t>(k)};
}

struct GeneratorConfig {
  std::size_t classes = 4;
  // Images per view over all classes, shared out evenly between classes.
  std::array<std::size_t, 3> per_view{100, 100, 100};
  std::size_t size = 32;
  double noise = 0.1;
  // Extra noise added to one view to build a deliberately degraded view.
  std::array<double, 3> view_noise{0.0, 0.0, 0.0};
  std::uint64_t seed = 1;

  void validate() const {
    if (classes < 2 || classes > kMaxSyntheticClasses)
      throw std::invalid_argument("synthetic classes must be in [2, 4]");
    if (size < 16) throw std::invalid_argument("synthetic image size must be >= 16");
    for (auto c : per_view)
      if (c < 1) throw std::invalid_argument("per-view counts must be >= 1");
    if (!(noise >= 0.0)) throw std::invalid_argument("noise must be >= 0");
    for (double v : view_noise)
      if (!(v >= 0.0)) throw std::invalid_argument("view noise must be >= 0");
  }
};

namespace detail {

struct Jitter {
  double cx, cy, scale, amplitude, angle;
};

inline double gauss(double d2, double sigma) { return std::exp(-d2 / (2.0 * sigma * sigma)); }

// Noise-free class pattern at normalised coordinates (u,v) in [-1,1].
inline double pattern(std::size_t label, double u, double v, const Jitter& j) {
  u = (u - j.cx) / j.scale;
  v = (v - j.cy) / j.scale;
  const double ca = std::cos(j.angle), sa = std::sin(j.angle);
  const double pu = ca * u + sa * v, pv = -sa * u + ca * v;
  switch (label) {
    case 0: return gauss(u * u + v * v, 0.25);
    case 1: {
      const double r = std::sqrt(u * u + v * v) - 0.55;
      return gauss(r * r, 0.08);
    }
    case 2: {
      const double a = std::numbers::pi / 4 + j.angle, ox = 0.42 * std::cos(a), oy = 0.42 * std::sin(a);
      return std::max(gauss((u - ox) * (u - ox) + (v - oy) * (v - oy), 0.15),
                      gauss((u + ox) * (u + ox) + (v + oy) * (v + oy), 0.15));
    }
    default: return std::exp(-(pu * pu / (2 * 0.4 * 0.4) + pv * pv / (2 * 0.08 * 0.08)));
  }
}

inline LabeledImage render(std::size_t label, View view, std::size_t size, double noise, Rng& rng) {
  const Jitter j{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.9, 1.1), rng.uniform(0.7, 0.9),
                 rng.uniform(-0.2, 0.2)};
  LabeledImage im;
  im.label = static_cast<std::uint16_t>(label);
  im.view = view;
  im.pixels.resize(size * size);
  const double shift = view == View::Coronal ? 0.08 : 0.0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double u = 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(size) - 1.0;
      double v = 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(size) - 1.0;
      if (view == View::Coronal) std::swap(u, v);
      if (view == View::Sagittal) v /= 0.6;
      double p = 0.1 + shift + j.amplitude * pattern(label, u, v, j);
      if (noise > 0.0) p += noise * rng.normal();
      im.pixels[y * size + x] = static_cast<float>(std::clamp(p, 0.0, 1.0));
    }
  return im;
}

}  // namespace detail

/// Synthetic single-channel pool. Each class is a parametric pattern (blob,
/// ring, blob pair, bar) with per-image jitter and additive Gaussian noise;
/// each view applies a fixed coordinate transform (identity, transpose with
/// an intensity lift, vertical squash).
inline ImageSet generate_synthetic_multiview(const GeneratorConfig& cfg) {
  cfg.validate();
  ImageSet pool;
  pool.classes = cfg.classes;
  pool.channels = 1;
  pool.height = pool.width = cfg.size;
  const std::vector<double> even(cfg.classes, 1.0 / static_cast<double>(cfg.classes));
  for (View v : kViews) {
    const auto vi = static_cast<std::size_t>(v);
    const auto per_class = largest_remainder(cfg.per_view[vi], even);
    for (std::size_t c = 0; c < cfg.classes; ++c)
      for (std::size_t n = 0; n < per_class[c]; ++n) {
        Rng rng(derive_seed(cfg.seed, {0x6E4u, c, vi, n}));
        pool.images.push_back(detail::render(c, v, cfg.size, cfg.noise + cfg.view_noise[vi], rng));
      }
  }
  return pool;
}

inline DatasetMeta synthetic_meta(const GeneratorConfig& cfg) {
  return {synthetic_class_names(cfg.classes), cfg.seed, kGeneratorVersion, cfg.noise};
}

/// Accuracy of a nearest-centroid classifier on raw pixels: one centroid per
/// (class, view) cell of `fit`, each image of `eval` takes the class of the
/// closest centroid.
inline double nearest_centroid_accuracy(const ImageSet& fit, const ImageSet& eval) {
  if (fit.empty() || eval.empty()) throw std::invalid_argument("nearest centroid: empty set");
  const std::size_t per = fit.pixels_per_image();
  struct Centroid {
    std::size_t label;
    std::vector<double> mean;
    std::size_t n = 0;
  };
  std::vector<Centroid> cs;
  for (std::size_t c = 0; c < fit.classes; ++c)
    for (View v : kViews) {
      Centroid ct{c, std::vector<double>(per, 0.0)};
      for (const auto& im : fit.images)
        if (im.label == c && im.view == v) {
          for (std::size_t i = 0; i < per; ++i) ct.mean[i] += im.pixels[i];
          ++ct.n;
        }
      if (!ct.n) continue;
      for (auto& m : ct.mean) m /= static_cast<double>(ct.n);
      cs.push_back(std::move(ct));
    }
  std::size_t correct = 0;
  for (const auto& im : eval.images) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t label = 0;
    for (const auto& ct : cs) {
      double d = 0.0;
      for (std::size_t i = 0; i < per; ++i) d += (im.pixels[i] - ct.mean[i]) * (im.pixels[i] - ct.mean[i]);
      if (d < best) best = d, label = ct.label;
    }
    correct += label == im.label;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

}  // namespace folc::data
