#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "folc/nn/adam.hpp"
#include "folc/nn/layers.hpp"
#include "folc/nn/loss.hpp"
#include "folc/nn/param_vector.hpp"
#include "folc/rng.hpp"

namespace folc {

enum class OptimizerKind { SGD, Adam };

/// A validated NetworkSpec plus its parameter layout. Holds no parameters
/// itself; every pass takes the ParamVector explicitly so one instance can
/// serve the global model and all clients.
template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    shapes_ = spec_.shape_chain();
    layout_ = std::make_shared<const ParamLayout>(spec_);
  }

  const NetworkSpec& spec() const { return spec_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }
  std::size_t param_count() const { return layout_->total(); }
  std::size_t classes() const { return spec_.classes; }

  /// Storage sized for this network, values uninitialised.
  ParamVector<T> allocate() const { return ParamVector<T>(layout_); }

  /// He-uniform weights, zero biases, unit gamma, zero beta, zero running
  /// mean and unit running variance.
  ParamVector<T> init_params(std::uint64_t seed) const {
    ParamVector<T> p = allocate();
    Rng rng(seed);
    for (const auto& seg : layout_->segments())
      for (const auto& b : seg.blocks) {
        T* dst = p.values().data() + b.offset;
        switch (b.block.role) {
          case ParamRole::Weight: {
            const double limit = std::sqrt(6.0 / static_cast<double>(b.block.fan_in));
            for (std::size_t i = 0; i < b.length; ++i) dst[i] = static_cast<T>(rng.uniform(-limit, limit));
            break;
          }
          case ParamRole::Gamma:
          case ParamRole::RunningVar:
            std::fill(dst, dst + b.length, T{1});
            break;
          default:
            std::fill(dst, dst + b.length, T{0});
        }
      }
    return p;
  }

  struct Pass {
    Tensor<T> logits;
    std::vector<LayerCache<T>> caches;
  };

  /// Full forward pass. Train mode draws dropout masks from `rng` in layer
  /// order and updates batch-norm running statistics inside `params`.
  Pass forward(ParamVector<T>& params, const Tensor<T>& input, Mode mode, Rng& rng) const {
    check_input(input);
    Pass pass;
    pass.caches.reserve(spec_.layers.size());
    Tensor<T> x = input;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      auto [y, cache] = layer_forward<T>(spec_.layers[i], x, params.segment(i), mode, rng, i);
      pass.caches.push_back(std::move(cache));
      x = std::move(y);
    }
    pass.logits = std::move(x);
    return pass;
  }

  /// Inference-mode logits; a pure function of (params, input).
  Tensor<T> predict_logits(const ParamVector<T>& params, const Tensor<T>& input) const {
    check_input(input);
    Rng unused(0);
    Tensor<T> x = input;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      // Infer mode never writes to the parameter span.
      auto seg = params.segment(i);
      std::span<T> mut(const_cast<T*>(seg.data()), seg.size());
      x = layer_forward<T>(spec_.layers[i], x, mut, Mode::Infer, unused, i).first;
    }
    return x;
  }

  /// Gradient of the loss with respect to every parameter, given the caches
  /// of a forward pass and the loss gradient at the logits.
  ParamVector<T> backward(const ParamVector<T>& params, const std::vector<LayerCache<T>>& caches,
                          const Tensor<T>& logit_grad, Tensor<T>* input_grad = nullptr) const {
    if (caches.size() != spec_.layers.size())
      throw std::invalid_argument("backward: cache count does not match layer count");
    ParamVector<T> grads(layout_, T{0});
    Tensor<T> g = logit_grad;
    for (std::size_t i = spec_.layers.size(); i-- > 0;) {
      auto lg = layer_backward<T>(spec_.layers[i], caches[i], params.segment(i), g, i);
      auto dst = grads.segment(i);
      std::copy(lg.param_grads.begin(), lg.param_grads.end(), dst.begin());
      g = std::move(lg.input_grad);
    }
    if (input_grad) *input_grad = std::move(g);
    return grads;
  }

  struct StepResult {
    T loss;
    std::size_t correct;
  };

  /// One optimisation step on a mini-batch. With lr == 0 the parameter
  /// vector is left bit-for-bit unchanged, running statistics included.
  StepResult train_step(ParamVector<T>& params, const Tensor<T>& input, const std::vector<std::size_t>& labels,
                        OptimizerKind opt, AdamState<T>& adam, double lr, Rng& rng) const {
    std::vector<std::pair<std::size_t, std::vector<T>>> frozen;
    if (lr == 0.0) frozen = snapshot_running_stats(params);
    Pass pass = forward(params, input, Mode::Train, rng);
    auto lr_ = loss_and_grad(pass.logits, one_hot<T>(labels, spec_.classes));
    const std::size_t correct = count_correct(pass.logits, labels);
    if (lr == 0.0) {
      for (auto& [offset, vals] : frozen) std::copy(vals.begin(), vals.end(), params.values().begin() + offset);
      return {lr_.loss, correct};
    }
    ParamVector<T> grads = backward(params, pass.caches, lr_.logit_grad);
    if (opt == OptimizerKind::Adam) {
      if (adam.m.size() != params.size()) adam = AdamState<T>(params.size());
      adam_step<T>(params.values(), grads.values(), adam, lr);
    } else {
      sgd_step<T>(params.values(), grads.values(), lr);
    }
    return {lr_.loss, correct};
  }

  static std::size_t count_correct(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
    const std::size_t k = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const T* row = logits.data() + i * k;
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
      correct += best == labels[i];
    }
    return correct;
  }

 private:
  void check_input(const Tensor<T>& input) const {
    if (input.rank() != 4 || Shape(input.shape().begin() + 1, input.shape().end()) != spec_.input)
      throw ShapeError("network input must be (N," + shape_str(spec_.input).substr(1) + ", got " +
                       shape_str(input.shape()));
  }

  std::vector<std::pair<std::size_t, std::vector<T>>> snapshot_running_stats(const ParamVector<T>& params) const {
    std::vector<std::pair<std::size_t, std::vector<T>>> out;
    for (const auto& seg : layout_->segments())
      for (const auto& b : seg.blocks)
        if (b.block.role == ParamRole::RunningMean || b.block.role == ParamRole::RunningVar) {
          auto v = params.values().subspan(b.offset, b.length);
          out.emplace_back(b.offset, std::vector<T>(v.begin(), v.end()));
        }
    return out;
  }

  NetworkSpec spec_;
  std::vector<Shape> shapes_;
  std::shared_ptr<const ParamLayout> layout_;
};

}  // namespace folc
