#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "folc/data/imageops.hpp"
#include "folc/nn/tensor.hpp"
#include "folc/rng.hpp"

namespace folc::data {

enum class View : std::uint8_t { Axial = 0, Coronal = 1, Sagittal = 2 };
inline constexpr std::array<View, 3> kViews{View::Axial, View::Coronal, View::Sagittal};

inline const char* to_string(View v) {
  switch (v) {
    case View::Axial: return "axial";
    case View::Coronal: return "coronal";
    case View::Sagittal: return "sagittal";
  }
  return "?";
}

inline View view_from_string(const std::string& s) {
  for (View v : kViews)
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown view '" + s + "'");
}

struct LabeledImage {
  std::vector<float> pixels;  // channels x height x width, each in [0,1]
  std::uint16_t label = 0;
  View view = View::Axial;
  bool augmented = false;

  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

/// A flat list of same-sized images over k classes.
struct ImageSet {
  std::size_t classes = 0;
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<LabeledImage> images;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  std::size_t pixels_per_image() const { return channels * height * width; }
  Shape image_shape() const { return {channels, height, width}; }

  ImageSet like() const {
    ImageSet s;
    s.classes = classes;
    s.channels = channels;
    s.height = height;
    s.width = width;
    return s;
  }

  void validate() const {
    if (classes == 0 || channels == 0 || height == 0 || width == 0)
      throw std::invalid_argument("image set has a zero dimension");
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& im = images[i];
      if (im.pixels.size() != pixels_per_image())
        throw std::invalid_argument("image " + std::to_string(i) + " has the wrong pixel count");
      if (im.label >= classes) throw std::invalid_argument("image " + std::to_string(i) + " label out of range");
      for (float p : im.pixels)
        if (!(p >= 0.0f && p <= 1.0f))
          throw std::invalid_argument("image " + std::to_string(i) + " pixel outside [0,1]");
    }
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(classes, 0);
    for (const auto& im : images) ++c.at(im.label);
    return c;
  }

  std::array<std::size_t, 3> view_counts() const {
    std::array<std::size_t, 3> c{};
    for (const auto& im : images) ++c[static_cast<std::size_t>(im.view)];
    return c;
  }

  ImageSet filter_view(View v) const {
    ImageSet s = like();
    for (const auto& im : images)
      if (im.view == v) s.images.push_back(im);
    return s;
  }

  Plane<float> plane(std::size_t i) const {
    Plane<float> p(channels, height, width);
    p.values = images.at(i).pixels;
    return p;
  }

  friend bool operator==(const ImageSet&, const ImageSet&) = default;
};

struct DatasetMeta {
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  std::string generator_version;
  double noise = 0.0;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct DatasetSplit {
  ImageSet train, validation, test;
  DatasetMeta meta;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

/// Batch tensor (N,C,H,W) plus labels for the given image indices.
template <typename T>
std::pair<Tensor<T>, std::vector<std::size_t>> make_batch(const ImageSet& set, std::span<const std::size_t> idx) {
  const std::size_t per = set.pixels_per_image();
  Tensor<T> x({idx.size(), set.channels, set.height, set.width});
  std::vector<std::size_t> y(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& im = set.images.at(idx[b]);
    std::transform(im.pixels.begin(), im.pixels.end(), x.data() + b * per, [](float v) { return static_cast<T>(v); });
    y[b] = im.label;
  }
  return {std::move(x), std::move(y)};
}

/// Integer sizes for `total` items under `proportions`: floors first, then
/// the leftover units go to the largest fractional parts (earlier index on ties).
inline std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& proportions) {
  std::vector<std::size_t> out(proportions.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t used = 0;
  for (std::size_t i = 0; i < proportions.size(); ++i) {
    const double exact = proportions[i] * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += out[i];
    frac.emplace_back(exact - static_cast<double>(out[i]), i);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; used < total && j < frac.size(); ++j, ++used) ++out[frac[j].second];
  for (std::size_t j = 0; used > total; ++j) {
    // Only reachable through the epsilon above; trim from the smallest remainders.
    auto& slot = out[frac[frac.size() - 1 - j % frac.size()].second];
    if (slot) --slot, --used;
  }
  return out;
}

inline void check_proportions(const std::vector<double>& p, double tol = 1e-9) {
  if (p.empty()) throw std::invalid_argument("proportions must be non-empty");
  double s = 0.0;
  for (double v : p) {
    if (!(v > 0.0)) throw std::invalid_argument("proportions must all be > 0");
    s += v;
  }
  if (std::abs(s - 1.0) > tol) throw std::invalid_argument("proportions must sum to 1");
}

/// Stratified train/validation/test split over (class, view) cells. Cells
/// with fewer than three images go entirely to train with a warning.
inline DatasetSplit split_dataset(const ImageSet& pool, const std::vector<double>& proportions, std::uint64_t seed,
                                  std::vector<std::string>* warnings = nullptr) {
  if (proportions.size() != 3) throw std::invalid_argument("split needs three proportions");
  check_proportions(proportions);
  DatasetSplit out;
  out.train = out.validation = out.test = pool.like();
  ImageSet* parts[3] = {&out.train, &out.validation, &out.test};
  for (std::size_t c = 0; c < pool.classes; ++c)
    for (View v : kViews) {
      std::vector<std::size_t> cell;
      for (std::size_t i = 0; i < pool.size(); ++i)
        if (pool.images[i].label == c && pool.images[i].view == v) cell.push_back(i);
      if (cell.empty()) continue;
      if (cell.size() < 3) {
        if (warnings)
          warnings->push_back("class " + std::to_string(c) + " view " + to_string(v) + " has only " +
                              std::to_string(cell.size()) + " images; all assigned to train");
        for (auto i : cell) out.train.images.push_back(pool.images[i]);
        continue;
      }
      Rng rng(derive_seed(seed, {0x5117u, c, static_cast<std::uint64_t>(v)}));
      rng.shuffle(cell);
      const auto sizes = largest_remainder(cell.size(), proportions);
      std::size_t at = 0;
      for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t j = 0; j < sizes[p]; ++j) parts[p]->images.push_back(pool.images[cell[at++]]);
    }
  return out;
}

enum class Augmentation { Flip, Rotate, Translate };

/// Random draw of one of the three augmentations: horizontal flip, rotation
/// within +-15 degrees, or translation within +-10% per axis.
inline Plane<float> augment(const Plane<float>& in, Rng& rng, Augmentation* chosen = nullptr) {
  const auto kind = static_cast<Augmentation>(rng.index(3));
  if (chosen) *chosen = kind;
  Plane<float> out;
  switch (kind) {
    case Augmentation::Flip: out = flip_horizontal(in); break;
    case Augmentation::Rotate: out = rotate(in, rng.uniform(-15.0, 15.0)); break;
    case Augmentation::Translate: out = translate(in, rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)); break;
  }
  for (auto& v : out.values) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

/// Pads every class up to `target` images with augmented copies of randomly
/// chosen originals of that class. The copies are flagged as augmented.
inline ImageSet balance_by_augmentation(const ImageSet& set, std::size_t target, std::uint64_t seed) {
  const auto counts = set.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw std::invalid_argument("cannot balance: class " + std::to_string(c) + " is empty");
    if (counts[c] > target)
      throw std::invalid_argument("balance target " + std::to_string(target) + " is below class " +
                                  std::to_string(c) + "'s count " + std::to_string(counts[c]));
  }
  ImageSet out = set;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == target) continue;
    std::vector<std::size_t> originals;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (set.images[i].label == c && !set.images[i].augmented) originals.push_back(i);
    if (originals.empty())
      for (std::size_t i = 0; i < set.size(); ++i)
        if (set.images[i].label == c) originals.push_back(i);
    Rng rng(derive_seed(seed, {0xBA1Au, c}));
    for (std::size_t k = counts[c]; k < target; ++k) {
      const std::size_t src = originals[rng.index(originals.size())];
      LabeledImage im = set.images[src];
      im.pixels = augment(set.plane(src), rng).values;
      im.augmented = true;
      out.images.push_back(std::move(im));
    }
  }
  return out;
}

}  // namespace folc::data
