#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "folc/data/dataset.hpp"
#include "folc/evalkit.hpp"
#include "folc/nn/network.hpp"

namespace folc {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  OptimizerKind optimizer = OptimizerKind::Adam;
  // Score the validation set after every epoch.
  bool validate_each_epoch = true;

  void validate() const {
    if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;  // global epoch index
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
  bool has_validation = false;
};

/// Seed of the stream that shuffles and draws dropout masks for one epoch of
/// one trainer. Keyed on the global epoch index so that splitting a run into
/// rounds does not change the sequence.
inline std::uint64_t epoch_seed(std::uint64_t master, std::size_t trainer, std::size_t global_epoch) {
  return derive_seed(master, {0xE90Cu, trainer, global_epoch});
}

template <typename T>
struct Evaluation {
  double loss = 0, accuracy = 0;
  eval::Predictions predictions;
};

/// Inference-mode loss, accuracy and class probabilities over a whole set.
template <typename T>
Evaluation<T> evaluate(const Network<T>& net, const ParamVector<T>& params, const data::ImageSet& set,
                       std::size_t batch_size = 64) {
  if (set.empty()) throw std::invalid_argument("evaluate: empty set");
  Evaluation<T> out;
  const std::size_t k = net.classes();
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    const std::size_t m = std::min(batch_size, idx.size() - s);
    auto [x, y] = data::make_batch<T>(set, std::span<const std::size_t>(idx.data() + s, m));
    auto logits = net.predict_logits(params, x);
    auto lg = loss_and_grad(logits, one_hot<T>(y, k));
    loss_sum += static_cast<double>(lg.loss) * static_cast<double>(m);
    auto probs = softmax(logits);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t best = 0;
      double row_sum = 0;
      for (std::size_t c = 0; c < k; ++c) {
        row_sum += static_cast<double>(probs[i * k + c]);
        if (logits[i * k + c] > logits[i * k + best]) best = c;
      }
      for (std::size_t c = 0; c < k; ++c)
        out.predictions.probs.push_back(static_cast<double>(probs[i * k + c]) / row_sum);
      out.predictions.labels.push_back(best);
      correct += best == y[i];
    }
  }
  out.loss = loss_sum / static_cast<double>(set.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return out;
}

template <typename T>
eval::Predictor make_predictor(const Network<T>& net, const ParamVector<T>& params, std::size_t batch_size = 64) {
  return [&net, &params, batch_size](const data::ImageSet& s) { return evaluate(net, params, s, batch_size).predictions; };
}

/// One pass over `set` in a seeded random order. The final batch may be
/// short. Returns the sample-weighted mean loss and the accuracy.
template <typename T>
std::pair<double, double> train_epoch(const Network<T>& net, ParamVector<T>& params, AdamState<T>& adam,
                                      const data::ImageSet& set, const TrainConfig& cfg, std::uint64_t seed) {
  if (set.empty()) throw std::invalid_argument("train_epoch: empty set");
  Rng rng(seed);
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
    const std::size_t m = std::min(cfg.batch_size, order.size() - s);
    auto [x, y] = data::make_batch<T>(set, std::span<const std::size_t>(order.data() + s, m));
    auto r = net.train_step(params, x, y, cfg.optimizer, adam, cfg.lr, rng);
    loss_sum += static_cast<double>(r.loss) * static_cast<double>(m);
    correct += r.correct;
  }
  return {loss_sum / static_cast<double>(set.size()), static_cast<double>(correct) / static_cast<double>(set.size())};
}

/// Runs epochs [first_epoch, first_epoch + count) for one trainer.
template <typename T>
std::vector<EpochMetrics> train_epochs(const Network<T>& net, ParamVector<T>& params, AdamState<T>& adam,
                                       const data::ImageSet& train, const data::ImageSet* val, const TrainConfig& cfg,
                                       std::uint64_t master_seed, std::size_t trainer, std::size_t first_epoch,
                                       std::size_t count) {
  cfg.validate();
  if (cfg.batch_size > train.size())
    throw std::invalid_argument("batch size " + std::to_string(cfg.batch_size) + " exceeds the " +
                                std::to_string(train.size()) + " training images");
  std::vector<EpochMetrics> hist;
  for (std::size_t e = first_epoch; e < first_epoch + count; ++e) {
    EpochMetrics m;
    m.epoch = e;
    std::tie(m.train_loss, m.train_accuracy) = train_epoch(net, params, adam, train, cfg, epoch_seed(master_seed, trainer, e));
    if (val && cfg.validate_each_epoch && !val->empty()) {
      auto ev = evaluate(net, params, *val, std::max<std::size_t>(cfg.batch_size, 64));
      m.val_loss = ev.loss;
      m.val_accuracy = ev.accuracy;
      m.has_validation = true;
    }
    hist.push_back(m);
  }
  return hist;
}

inline std::uint64_t init_seed(std::uint64_t master) { return derive_seed(master, {0x1417u}); }

template <typename T>
struct CentralizedRun {
  ParamVector<T> params;
  std::vector<EpochMetrics> history;
};

/// Plain single-trainer training from the seeded initialisation.
template <typename T>
CentralizedRun<T> train_centralized(const Network<T>& net, const data::ImageSet& train, const data::ImageSet* val,
                                    const TrainConfig& cfg, std::uint64_t master_seed) {
  CentralizedRun<T> run{net.init_params(init_seed(master_seed)), {}};
  AdamState<T> adam(run.params.size());
  run.history = train_epochs(net, run.params, adam, train, val, cfg, master_seed, 0, 0, cfg.epochs);
  return run;
}

}  // namespace folc
