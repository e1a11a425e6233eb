#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "folc/nn/layer_spec.hpp"

namespace folc {

/// Allocator that default-initialises instead of value-initialising, so
/// sizing a large parameter buffer does not touch its pages.
template <typename T>
struct default_init_allocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

struct BlockRange {
  ParamBlock block;
  std::size_t offset;  // absolute offset in the flat vector
  std::size_t length;
};

struct LayerSegment {
  std::size_t layer;
  std::size_t offset;
  std::size_t length;
  std::vector<BlockRange> blocks;
};

/// Ordered segment table: one entry per layer (parameter-free layers get an
/// empty segment), segments contiguous and covering [0, total).
class ParamLayout {
 public:
  ParamLayout() = default;

  explicit ParamLayout(const NetworkSpec& spec) {
    const auto shapes = spec.shape_chain();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      LayerSegment seg{i, offset, 0, {}};
      for (auto& b : param_blocks(spec.layers[i], shapes[i])) {
        const std::size_t len = shape_size(b.shape);
        seg.blocks.push_back({b, offset, len});
        offset += len;
        seg.length += len;
      }
      segments_.push_back(std::move(seg));
    }
    total_ = offset;
  }

  std::size_t total() const { return total_; }
  const std::vector<LayerSegment>& segments() const { return segments_; }
  const LayerSegment& segment(std::size_t layer) const { return segments_.at(layer); }

 private:
  std::vector<LayerSegment> segments_;
  std::size_t total_ = 0;
};

/// Flat parameter vector plus the layout it was allocated from. The unit of
/// federated exchange.
template <typename T>
class ParamVector {
 public:
  using Storage = std::vector<T, default_init_allocator<T>>;

  ParamVector() = default;

  /// Allocates storage for `layout`; values are left uninitialised.
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), values_(layout_->total()) {}

  ParamVector(std::shared_ptr<const ParamLayout> layout, T fill)
      : layout_(std::move(layout)), values_(layout_->total(), fill) {}

  std::size_t size() const { return values_.size(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }

  std::span<T> segment(std::size_t layer) {
    const auto& s = layout_->segment(layer);
    return std::span<T>(values_).subspan(s.offset, s.length);
  }
  std::span<const T> segment(std::size_t layer) const {
    const auto& s = layout_->segment(layer);
    return std::span<const T>(values_).subspan(s.offset, s.length);
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  friend bool operator==(const ParamVector& a, const ParamVector& b) { return a.values_ == b.values_; }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  Storage values_;
};

}  // namespace folc
