#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

#include "folc/mrfo.hpp"
#include "folc/shallowfed.hpp"
#include "folc/train.hpp"

namespace folc::search {

using GridIndex = std::array<std::size_t, kGenomeDims>;

inline StructureGenome to_genome(const mrfo::Position& x) {
  if (x.size() != kGenomeDims) throw std::invalid_argument("structure genome needs 5 coordinates");
  StructureGenome g{};
  std::copy(x.begin(), x.end(), g.begin());
  return g;
}

/// Genome coordinate at the centre of a grid cell.
inline mrfo::Position cell_centre(const GridIndex& idx) {
  mrfo::Position c(kGenomeDims);
  for (std::size_t d = 0; d < kGenomeDims; ++d)
    c[d] = (static_cast<double>(idx[d]) + 0.5) / static_cast<double>(grid::sizes[d]);
  return c;
}

inline std::vector<mrfo::Bounds> genome_bounds() { return std::vector<mrfo::Bounds>(kGenomeDims, {0.0, 1.0}); }

/// Synthetic objective on the structure grid: a bowl over the decoded option
/// indices that peaks at one planted cell.
struct PlantedGrid {
  GridIndex planted{};

  double score(const GridIndex& idx) const {
    double f = 0.0;
    for (std::size_t d = 0; d < kGenomeDims; ++d) {
      const double t = (static_cast<double>(idx[d]) - static_cast<double>(planted[d])) /
                       static_cast<double>(grid::sizes[d]);
      f -= t * t;
    }
    return f;
  }
  double operator()(const mrfo::Position& x) const { return score(decode_indices(to_genome(x))); }
};

/// Exhaustive pass over all grid cells, each scored once.
template <typename F>
std::size_t brute_force_best_cell(const F& score_cell) {
  std::size_t best_cell = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < grid::cells; ++c) {
    const double f = score_cell(cell_indices(c));
    if (f > best) best = f, best_cell = c;
  }
  return best_cell;
}

struct TrainingObjectiveConfig {
  Variant variant = Variant::Baseline;
  Shape input{1, 32, 32};
  std::size_t classes = 4;
  TrainConfig train;
  std::uint64_t seed = 1;
};

/// Fitness of a genome: the best validation accuracy reached while training
/// the decoded ShallowFed from scratch. Genomes decoding to the same cell
/// share one training run.
class TrainingObjective {
 public:
  TrainingObjective(const data::ImageSet& train, const data::ImageSet& val, TrainingObjectiveConfig cfg)
      : train_(&train), val_(&val), cfg_(std::move(cfg)) {
    if (val.empty()) throw std::invalid_argument("structure search needs a non-empty validation set");
    cfg_.train.validate_each_epoch = true;
  }

  double operator()(const mrfo::Position& x) {
    const std::size_t cell = cell_index(decode_indices(to_genome(x)));
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(cell); it != cache_.end()) return it->second;
    }
    const double f = fitness(settings_from_indices(cell_indices(cell)));
    std::lock_guard lock(mu_);
    cache_.emplace(cell, f);
    return f;
  }

  double fitness(const StructureSettings& s) const {
    Network<float> net(build_shallowfed(s, cfg_.variant, cfg_.input, cfg_.classes));
    auto run = train_centralized(net, *train_, val_, cfg_.train, cfg_.seed);
    double best = 0.0;
    for (const auto& e : run.history) best = std::max(best, e.val_accuracy);
    return best;
  }

  std::size_t trained_cells() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

 private:
  const data::ImageSet* train_;
  const data::ImageSet* val_;
  TrainingObjectiveConfig cfg_;
  mutable std::mutex mu_;
  std::map<std::size_t, double> cache_;
};

}  // namespace folc::search
