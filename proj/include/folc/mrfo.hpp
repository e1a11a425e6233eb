#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "folc/rng.hpp"

namespace folc::mrfo {

struct Bounds {
  double lower = 0.0;
  double upper = 1.0;
};

struct Config {
  std::size_t population = 10;
  std::size_t max_iterations = 10;
  std::vector<Bounds> bounds;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  // Worker threads for fitness evaluation; results never depend on it.
  std::size_t threads = 1;

  std::size_t dims() const { return bounds.size(); }

  void validate() const {
    if (population < 2) throw std::invalid_argument("mrfo: population must be >= 2");
    if (max_iterations < 1) throw std::invalid_argument("mrfo: max_iterations must be >= 1");
    if (bounds.empty()) throw std::invalid_argument("mrfo: at least one dimension required");
    for (std::size_t d = 0; d < bounds.size(); ++d)
      if (!(bounds[d].lower < bounds[d].upper))
        throw std::invalid_argument("mrfo: bounds of dimension " + std::to_string(d) + " need lower < upper");
    if (patience < 1 || patience > max_iterations)
      throw std::invalid_argument("mrfo: patience must lie in [1, max_iterations]");
    if (threads < 1) throw std::invalid_argument("mrfo: threads must be >= 1");
  }
};

using Position = std::vector<double>;

struct Population {
  std::vector<Position> positions;
  std::vector<double> fitness;
  Position best_position;
  double best_fitness = -std::numeric_limits<double>::infinity();
  std::size_t iteration = 0;
};

/// Cyclone weight with base e: 2 e^{r1 (R-s+1)/R} sin(2 pi r1).
inline double cyclone_gamma(double r1, std::size_t s, std::size_t R) {
  if (R == 0 || s < 1 || s > R) throw std::invalid_argument("cyclone_gamma: need 1 <= s <= R");
  const double decay = static_cast<double>(R - s + 1) / static_cast<double>(R);
  return 2.0 * std::exp(r1 * decay) * std::sin(2.0 * std::numbers::pi * r1);
}

/// Chain weight 2 alpha sqrt(|ln alpha|).
inline double chain_eta(double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("chain_eta: alpha must be > 0");
  return 2.0 * alpha * std::sqrt(std::abs(std::log(alpha)));
}

inline double clamp_to(double x, const Bounds& b) { return std::clamp(x, b.lower, b.upper); }

/// x + r (leader - x) + eta (best - x), per dimension, then clamped.
inline Position chain_move(const Position& x, const Position& leader, const Position& best, const std::vector<double>& r,
                           const std::vector<double>& eta, const std::vector<Bounds>& bounds) {
  Position out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d)
    out[d] = clamp_to(x[d] + r[d] * (leader[d] - x[d]) + eta[d] * (best[d] - x[d]), bounds[d]);
  return out;
}

/// anchor + r (leader - x) + gamma (anchor - x), per dimension, then clamped.
/// The anchor is the best position when exploiting, a random point when exploring.
inline Position cyclone_move(const Position& x, const Position& leader, const Position& anchor,
                             const std::vector<double>& r, double gamma, const std::vector<Bounds>& bounds) {
  Position out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d)
    out[d] = clamp_to(anchor[d] + r[d] * (leader[d] - x[d]) + gamma * (anchor[d] - x[d]), bounds[d]);
  return out;
}

enum class Move { Chain, CycloneExploit, CycloneExplore };

namespace detail {

inline std::vector<double> draw_unit(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

inline Position random_point(Rng& rng, const std::vector<Bounds>& bounds) {
  Position p(bounds.size());
  for (std::size_t d = 0; d < bounds.size(); ++d) p[d] = rng.uniform(bounds[d].lower, bounds[d].upper);
  return p;
}

// Individual i follows the best when first, otherwise its predecessor, both
// read from the pre-update snapshot.
inline const Position& leader_of(const Population& snap, std::size_t i) {
  return i == 0 ? snap.best_position : snap.positions[i - 1];
}

inline Position apply_move(Move m, const Population& snap, std::size_t i, std::size_t s, std::size_t R,
                           const std::vector<Bounds>& bounds, Rng& rng) {
  const Position& x = snap.positions[i];
  const std::size_t D = x.size();
  if (m == Move::Chain) {
    auto r = draw_unit(rng, D);
    std::vector<double> eta(D);
    for (auto& e : eta) e = chain_eta(rng.uniform_open_closed());
    return chain_move(x, leader_of(snap, i), snap.best_position, r, eta, bounds);
  }
  const double gamma = cyclone_gamma(rng.uniform(), s, R);
  auto r = draw_unit(rng, D);
  if (m == Move::CycloneExploit) return cyclone_move(x, leader_of(snap, i), snap.best_position, r, gamma, bounds);
  const Position anchor = random_point(rng, bounds);
  return cyclone_move(x, leader_of(snap, i), anchor, r, gamma, bounds);
}

}  // namespace detail

/// Moves every individual with one rule. Snapshot semantics: all reads see
/// the positions from before the call.
inline void apply_to_all(Population& pop, Move m, std::size_t s, std::size_t R, const std::vector<Bounds>& bounds,
                         Rng& rng) {
  const Population snap = pop;
  for (std::size_t i = 0; i < pop.positions.size(); ++i)
    pop.positions[i] = detail::apply_move(m, snap, i, s, R, bounds, rng);
}

inline void chain_step(Population& pop, const std::vector<Bounds>& bounds, Rng& rng) {
  apply_to_all(pop, Move::Chain, 1, 1, bounds, rng);
}
inline void cyclone_step_exploit(Population& pop, std::size_t s, std::size_t R, const std::vector<Bounds>& bounds,
                                 Rng& rng) {
  apply_to_all(pop, Move::CycloneExploit, s, R, bounds, rng);
}
inline void cyclone_step_explore(Population& pop, std::size_t s, std::size_t R, const std::vector<Bounds>& bounds,
                                 Rng& rng) {
  apply_to_all(pop, Move::CycloneExplore, s, R, bounds, rng);
}

/// One full update at iteration s: per individual a fair coin picks cyclone
/// or chain; cyclone explores when s/R < rand and exploits otherwise.
inline void update_population(Population& pop, std::size_t s, std::size_t R, const std::vector<Bounds>& bounds,
                              Rng& rng) {
  const Population snap = pop;
  for (std::size_t i = 0; i < pop.positions.size(); ++i) {
    Move m = Move::Chain;
    if (rng.uniform() < 0.5) {
      const double ratio = static_cast<double>(s) / static_cast<double>(R);
      m = ratio < rng.uniform() ? Move::CycloneExplore : Move::CycloneExploit;
    }
    pop.positions[i] = detail::apply_move(m, snap, i, s, R, bounds, rng);
  }
}

struct HistoryRow {
  std::size_t iteration;  // 0 is the initial population
  double best_fitness;
  double mean_fitness;
  std::size_t evaluations;  // cumulative
};

struct Result {
  Population population;
  std::vector<HistoryRow> history;
  std::size_t evaluations = 0;
  std::size_t iterations = 0;  // update iterations completed
  std::size_t nan_warnings = 0;
  bool stopped_on_patience = false;

  const Position& best_position() const { return population.best_position; }
  double best_fitness() const { return population.best_fitness; }
};

using Objective = std::function<double(const Position&)>;

namespace detail {

inline std::vector<double> evaluate_all(const std::vector<Position>& xs, const Objective& f, std::size_t threads,
                                        std::size_t& nan_warnings) {
  std::vector<double> out(xs.size());
  const std::size_t workers = std::min(threads, xs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < xs.size(); i += workers) out[i] = f(xs[i]);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& v : out)
    if (std::isnan(v)) {
      v = -std::numeric_limits<double>::infinity();
      ++nan_warnings;
    }
  return out;
}

// Strict improvement only, earliest index wins ties.
inline bool absorb(Population& pop) {
  bool improved = false;
  for (std::size_t i = 0; i < pop.fitness.size(); ++i)
    if (pop.fitness[i] > pop.best_fitness || pop.best_position.empty()) {
      improved = improved || pop.fitness[i] > pop.best_fitness;
      pop.best_fitness = pop.fitness[i];
      pop.best_position = pop.positions[i];
    }
  return improved;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Maximises `objective` over the box. Each iteration moves every
/// individual, evaluates the candidates and keeps the better of candidate
/// and parent. Iteration 1 sets the reference best;
/// from iteration 2 on, `patience` consecutive iterations without a strict
/// improvement end the run, so a flat objective stops at patience+1.
inline Result optimize(const Config& cfg, const Objective& objective) {
  cfg.validate();
  Rng rng(cfg.seed);
  Result res;
  Population& pop = res.population;
  for (std::size_t i = 0; i < cfg.population; ++i) pop.positions.push_back(detail::random_point(rng, cfg.bounds));

  // Candidates replace their parent only on a strict fitness gain.
  auto evaluate = [&](const std::vector<Position>* parents, const std::vector<double>* parent_fitness) {
    pop.fitness = detail::evaluate_all(pop.positions, objective, cfg.threads, res.nan_warnings);
    res.evaluations += pop.positions.size();
    if (parents)
      for (std::size_t i = 0; i < pop.positions.size(); ++i)
        if (!(pop.fitness[i] > (*parent_fitness)[i])) {
          pop.positions[i] = (*parents)[i];
          pop.fitness[i] = (*parent_fitness)[i];
        }
    const bool improved = detail::absorb(pop);
    res.history.push_back({pop.iteration, pop.best_fitness, detail::mean_of(pop.fitness), res.evaluations});
    return improved;
  };
  evaluate(nullptr, nullptr);

  std::size_t stall = 0;
  for (std::size_t s = 1; s <= cfg.max_iterations; ++s) {
    const std::vector<Position> parents = pop.positions;
    const std::vector<double> parent_fitness = pop.fitness;
    update_population(pop, s, cfg.max_iterations, cfg.bounds, rng);
    pop.iteration = s;
    const bool improved = evaluate(&parents, &parent_fitness);
    res.iterations = s;
    if (s == 1) continue;
    stall = improved ? 0 : stall + 1;
    if (stall >= cfg.patience) {
      res.stopped_on_patience = true;
      break;
    }
  }
  return res;
}

/// Uniform sampling with the same evaluation budget, for comparisons.
inline std::pair<Position, double> random_search(const std::vector<Bounds>& bounds, std::size_t evaluations,
                                                 std::uint64_t seed, const Objective& objective) {
  Rng rng(seed);
  Position best;
  double best_f = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < evaluations; ++i) {
    Position p = detail::random_point(rng, bounds);
    double f = objective(p);
    if (std::isnan(f)) f = -std::numeric_limits<double>::infinity();
    if (best.empty() || f > best_f) {
      best_f = f;
      best = std::move(p);
    }
  }
  return {best, best_f};
}

inline void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& rows) {
  os << "iteration,best_fitness,mean_fitness,evaluations\n";
  os.precision(17);
  for (const auto& r : rows) os << r.iteration << ',' << r.best_fitness << ',' << r.mean_fitness << ',' << r.evaluations << '\n';
}

}  // namespace folc::mrfo
