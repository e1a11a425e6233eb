#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "folc/train.hpp"

namespace folc::fed {

enum class PartitionMode { IID, LabelSkew };

inline const char* to_string(PartitionMode m) { return m == PartitionMode::IID ? "iid" : "label_skew"; }
inline PartitionMode partition_from_string(const std::string& s) {
  if (s == "iid") return PartitionMode::IID;
  if (s == "label_skew" || s == "non_iid") return PartitionMode::LabelSkew;
  throw std::invalid_argument("unknown partition mode '" + s + "' (expected iid or label_skew)");
}

/// Splits a set into disjoint shards whose sizes follow `proportions` by
/// largest remainder. IID mode deals a class-sorted, per-class shuffled
/// sequence round-robin by quota so each shard's class mix tracks the whole;
/// label-skew mode slices the label-sorted sequence contiguously. Shards keep
/// the original relative order of their images.
inline std::vector<data::ImageSet> partition_dataset(const data::ImageSet& set, std::size_t n_clients,
                                                     const std::vector<double>& proportions, std::uint64_t seed,
                                                     PartitionMode mode = PartitionMode::IID) {
  if (n_clients < 1) throw std::invalid_argument("partition: need at least one client");
  if (proportions.size() != n_clients) throw std::invalid_argument("partition: one proportion per client required");
  data::check_proportions(proportions);
  const auto sizes = data::largest_remainder(set.size(), proportions);

  std::vector<std::size_t> sequence;
  for (std::size_t c = 0; c < set.classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (set.images[i].label == c) members.push_back(i);
    if (mode == PartitionMode::IID) {
      Rng rng(derive_seed(seed, {0x9A27u, c}));
      rng.shuffle(members);
    }
    sequence.insert(sequence.end(), members.begin(), members.end());
  }

  // Owner of each sequence slot.
  std::vector<std::size_t> owner;
  owner.reserve(set.size());
  if (mode == PartitionMode::LabelSkew) {
    for (std::size_t k = 0; k < n_clients; ++k) owner.insert(owner.end(), sizes[k], k);
  } else {
    // Client k's j-th slot sits at (j + 0.5) / size_k on [0,1]; merging
    // those marks spreads every client evenly along the sequence.
    std::vector<std::pair<double, std::size_t>> marks;
    for (std::size_t k = 0; k < n_clients; ++k)
      for (std::size_t j = 0; j < sizes[k]; ++j)
        marks.emplace_back((static_cast<double>(j) + 0.5) / static_cast<double>(sizes[k]), k);
    std::stable_sort(marks.begin(), marks.end());
    for (const auto& m : marks) owner.push_back(m.second);
  }

  std::vector<std::vector<std::size_t>> picks(n_clients);
  for (std::size_t s = 0; s < sequence.size(); ++s) picks[owner[s]].push_back(sequence[s]);
  std::vector<data::ImageSet> shards;
  for (auto& p : picks) {
    std::sort(p.begin(), p.end());
    data::ImageSet shard = set.like();
    for (auto i : p) shard.images.push_back(set.images[i]);
    shards.push_back(std::move(shard));
  }
  return shards;
}

inline std::vector<double> equal_proportions(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

/// Sample count credited to a client: its batch count times the batch size.
inline std::size_t local_sample_count(std::size_t shard_size, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  return (shard_size + batch_size - 1) / batch_size * batch_size;
}

/// w_i = N_i / sum_j N_j.
inline std::vector<double> weight_scaling_factors(std::span<const std::size_t> n_local) {
  if (n_local.empty()) throw std::invalid_argument("scaling factors: no clients");
  double total = 0;
  for (std::size_t i = 0; i < n_local.size(); ++i) {
    if (n_local[i] == 0) throw std::invalid_argument("scaling factors: client " + std::to_string(i) + " has no samples");
    total += static_cast<double>(n_local[i]);
  }
  std::vector<double> w(n_local.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(n_local[i]) / total;
  return w;
}

/// out[k] = sum_i w_i p_i[k], accumulated in double. Clients are combined in
/// a canonical order (by weight, then by their values) so the result does
/// not depend on how the caller ordered them.
template <typename T>
std::vector<T> aggregate(const std::vector<std::span<const T>>& clients, std::span<const double> weights) {
  if (clients.empty()) throw std::invalid_argument("aggregate: no clients");
  if (weights.size() != clients.size()) throw std::invalid_argument("aggregate: one weight per client required");
  const std::size_t n = clients[0].size();
  double wsum = 0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].size() != n)
      throw std::invalid_argument("aggregate: client " + std::to_string(i) + " has " + std::to_string(clients[i].size()) +
                                  " parameters, expected " + std::to_string(n));
    if (!(weights[i] >= 0.0 && weights[i] <= 1.0)) throw std::invalid_argument("aggregate: weight outside [0,1]");
    wsum += weights[i];
  }
  if (std::abs(wsum - 1.0) > 1e-12) throw std::invalid_argument("aggregate: weights do not sum to 1");

  std::vector<std::size_t> order(clients.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (weights[a] != weights[b]) return weights[a] < weights[b];
    return std::lexicographical_compare(clients[a].begin(), clients[a].end(), clients[b].begin(), clients[b].end());
  });
  std::vector<double> acc(n, 0.0);
  for (std::size_t i : order) {
    const double w = weights[i];
    const T* p = clients[i].data();
    for (std::size_t k = 0; k < n; ++k) acc[k] += w * static_cast<double>(p[k]);
  }
  return std::vector<T>(acc.begin(), acc.end());
}

template <typename T>
ParamVector<T> aggregate(const std::vector<const ParamVector<T>*>& clients, std::span<const double> weights) {
  if (clients.empty()) throw std::invalid_argument("aggregate: no clients");
  std::vector<std::span<const T>> views;
  for (const auto* c : clients) {
    if (c->size() != clients[0]->size()) throw std::invalid_argument("aggregate: clients do not share a layout");
    views.push_back(c->values());
  }
  auto avg = aggregate<T>(views, weights);
  ParamVector<T> out(clients[0]->layout_ptr());
  std::copy(avg.begin(), avg.end(), out.values().begin());
  return out;
}

template <typename T>
struct ClientState {
  std::size_t id = 0;
  data::ImageSet shard;
  ParamVector<T> local_params;
  AdamState<T> adam;  // persists across rounds
  std::size_t n_local = 0;
};

template <typename T>
struct GlobalState {
  std::size_t round = 0;
  ParamVector<T> params;
};

/// Value-copies the global parameters into every client.
template <typename T>
void clone_global(const GlobalState<T>& global, std::vector<ClientState<T>>& clients) {
  for (auto& c : clients) c.local_params = global.params;
}

struct FedConfig {
  std::size_t clients = 5;
  std::size_t rounds = 30;
  std::size_t local_epochs = 1;
  PartitionMode partition = PartitionMode::IID;
  std::vector<double> proportions;  // empty means equal shares
  TrainConfig train;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  // Score every client's local model on the validation set after each local
  // epoch. Off by default since it costs a forward pass per round and client.
  bool client_validation = false;
  // Order in which clients are launched; empty means by id. Results do not
  // depend on it.
  std::vector<std::size_t> execution_order;

  void validate() const {
    if (clients < 1) throw std::invalid_argument("federated: clients must be >= 1");
    if (rounds < 1) throw std::invalid_argument("federated: rounds must be >= 1");
    if (local_epochs < 1) throw std::invalid_argument("federated: local_epochs must be >= 1");
    if (!proportions.empty() && proportions.size() != clients)
      throw std::invalid_argument("federated: one proportion per client required");
    if (threads < 1) throw std::invalid_argument("federated: threads must be >= 1");
    if (!execution_order.empty()) {
      auto sorted = execution_order;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i)
        if (sorted[i] != i || sorted.size() != clients)
          throw std::invalid_argument("federated: execution_order must be a permutation of client ids");
    }
    train.validate();
  }
};

struct LocalResult {
  std::vector<EpochMetrics> epochs;
};

/// Clone of the global model trained on the client's shard for the given
/// number of epochs. The epoch stream is keyed on the client id and on the
/// global epoch index round * epochs + e.
template <typename T>
LocalResult local_train(const Network<T>& net, ClientState<T>& client, const ParamVector<T>& global_params,
                        const TrainConfig& cfg, std::size_t round, std::size_t epochs, std::uint64_t master_seed,
                        const data::ImageSet* val = nullptr) {
  if (client.shard.empty()) throw std::invalid_argument("client " + std::to_string(client.id) + " has an empty shard");
  if (epochs < 1) throw std::invalid_argument("local_train: epochs must be >= 1");
  client.local_params = global_params;
  if (client.adam.m.size() != client.local_params.size()) client.adam = AdamState<T>(client.local_params.size());
  return {train_epochs(net, client.local_params, client.adam, client.shard, val, cfg, master_seed, client.id,
                       round * epochs, epochs)};
}

struct HistoryRow {
  std::size_t round;
  std::string client;  // client id or GLOBAL
  double loss, accuracy, weight;  // weight is NaN on GLOBAL rows
};

template <typename T>
struct FedRun {
  GlobalState<T> global;
  std::vector<ClientState<T>> clients;
  std::vector<HistoryRow> history;
  std::vector<double> weights;
  std::vector<double> global_val_accuracy;  // one per round
};

/// Rounds of clone, local training, weighting and aggregation, with the
/// global model scored on `val` after each round.
template <typename T>
FedRun<T> run_federated(const Network<T>& net, const data::ImageSet& train, const data::ImageSet& val,
                        const FedConfig& cfg) {
  cfg.validate();
  FedRun<T> run;
  run.global.params = net.init_params(init_seed(cfg.seed));
  const auto props = cfg.proportions.empty() ? equal_proportions(cfg.clients) : cfg.proportions;
  auto shards = partition_dataset(train, cfg.clients, props, derive_seed(cfg.seed, {0x5A4Du}), cfg.partition);
  std::vector<std::size_t> n_local;
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    ClientState<T> c;
    c.id = i;
    c.shard = std::move(shards[i]);
    if (cfg.train.batch_size > c.shard.size())
      throw std::invalid_argument("batch size exceeds client " + std::to_string(i) + "'s shard of " +
                                  std::to_string(c.shard.size()));
    c.n_local = local_sample_count(c.shard.size(), cfg.train.batch_size);
    n_local.push_back(c.n_local);
    run.clients.push_back(std::move(c));
  }
  run.weights = weight_scaling_factors(n_local);

  std::vector<std::size_t> order = cfg.execution_order;
  if (order.empty()) {
    order.resize(cfg.clients);
    std::iota(order.begin(), order.end(), 0);
  }
  TrainConfig local_cfg = cfg.train;
  local_cfg.validate_each_epoch = cfg.client_validation;

  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    clone_global(run.global, run.clients);
    std::vector<LocalResult> results(cfg.clients);
    std::vector<std::exception_ptr> errors(cfg.clients);
    auto work = [&](std::size_t slot_begin, std::size_t stride) {
      for (std::size_t s = slot_begin; s < order.size(); s += stride) {
        const std::size_t id = order[s];
        try {
          results[id] = local_train(net, run.clients[id], run.global.params, local_cfg, r, cfg.local_epochs, cfg.seed,
                                    local_cfg.validate_each_epoch ? &val : nullptr);
        } catch (...) {
          errors[id] = std::current_exception();
        }
      }
    };
    const std::size_t workers = std::min(cfg.threads, cfg.clients);
    if (workers <= 1) {
      work(0, 1);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    std::vector<const ParamVector<T>*> locals;
    for (const auto& c : run.clients) locals.push_back(&c.local_params);
    run.global.params = aggregate<T>(locals, run.weights);
    run.global.round = r + 1;

    for (std::size_t i = 0; i < cfg.clients; ++i) {
      const auto& last = results[i].epochs.back();
      run.history.push_back({r + 1, std::to_string(i), last.train_loss, last.train_accuracy, run.weights[i]});
    }
    auto ev = evaluate(net, run.global.params, val, std::max<std::size_t>(cfg.train.batch_size, 64));
    run.history.push_back({r + 1, "GLOBAL", ev.loss, ev.accuracy, std::numeric_limits<double>::quiet_NaN()});
    run.global_val_accuracy.push_back(ev.accuracy);
  }
  return run;
}

inline void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& rows) {
  os << "round,client_id,loss,accuracy,weight\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.round << ',' << r.client << ',' << r.loss << ',' << r.accuracy << ',';
    if (!std::isnan(r.weight)) os << r.weight;
    os << '\n';
  }
}

}  // namespace folc::fed
