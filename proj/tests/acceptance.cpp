// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>

#include "folc/cli/pipeline.hpp"
#include "folc/nn/gradcheck.hpp"
#include "test_support.hpp"

using namespace folc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// 1. Metric oracle on the published two-class confusion matrix.
void metric_oracle(Outcome& o) {
  eval::ConfusionMatrix cm(2, {298, 2, 9, 291});
  const auto m = eval::metrics_from_confusion(cm);
  o.detail << "accuracy " << m.accuracy * 100 << "%";
  o.require(std::abs(m.accuracy * 100 - 98.16) <= 0.01, "accuracy within 0.01 pp of 98.16");
  for (std::size_t c = 0; c < 2; ++c) {
    const double p = std::round(m.per_class[c].precision * 100) / 100, r = std::round(m.per_class[c].recall * 100) / 100;
    o.detail << "; class " << c << " P " << p << " R " << r;
    o.require(p >= 0.97 && p <= 0.99 && r >= 0.97 && r <= 0.99, "per-class P/R in the 0.97-0.99 band");
  }
}

// 2. Chi-square degrees of freedom and the perfect-classifier closed form.
void chi_square_contract(Outcome& o) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    eval::ConfusionMatrix cm(4);
    for (auto& v : cm.counts) v = 1 + rng.index(50);
    o.require(eval::chi_square(cm).dof == 9, "dof 9 for a 4-class matrix");
  }
  double worst = 0;
  for (std::uint64_t n : {100u, 600u, 1311u}) {
    eval::ConfusionMatrix cm(4);
    for (std::size_t c = 0; c < 4; ++c) cm.at(c, c) = n / 4 + (c < n % 4 ? 1 : 0);
    const double chi = eval::chi_square(cm).statistic;
    worst = std::max(worst, std::abs(chi - static_cast<double>(n * 3)));
  }
  o.detail << "dof 9 on 50 random matrices; max |chi2 - n(k-1)| = " << worst;
  o.require(worst <= 1e-9, "closed form exact to 1e-9");
}

// 3. Finite-difference checks for every layer kind.
void gradient_suite(Outcome& o) {
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t cases = 0;
  for (std::size_t kind = 0; kind < testing::kLayerKinds; ++kind) {
    Rng rng(1000 + kind);
    for (int trial = 0; trial < 20; ++trial) {
      auto c = testing::random_layer_case(kind, rng);
      auto x = testing::random_tensor(c.input, rng);
      testing::push_off_zero(x);
      Shape in(c.input.begin() + 1, c.input.end());
      auto p = testing::random_layer_params(c.spec, in, rng);
      const double e = testing::check_layer_gradients(c.spec, x, p, 500 + trial).max();
      worst = std::max(worst, e);
      ++cases;
      if (!(e < 1e-4)) o.require(false, describe(c.spec) + " on " + shape_str(c.input));
    }
  }
  const double secs = seconds_since(t0);
  o.detail << testing::kLayerKinds << " kinds x 20 shapes (" << cases << " cases), max rel error " << worst << ", "
           << secs << " s";
  o.require(secs < 60, "under 60 s");
}

// 4. Weighted aggregation against a naive double loop.
void aggregation_oracle(Outcome& o) {
  Rng rng(4);
  double worst = 0;
  bool perm_exact = true;
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<double>> p(5, std::vector<double>(1000));
    for (auto& v : p)
      for (auto& x : v) x = rng.uniform(-5, 5);
    std::vector<std::size_t> n(5);
    for (auto& v : n) v = 1 + rng.index(1000);
    const auto w = fed::weight_scaling_factors(n);
    std::vector<std::span<const double>> cs(p.begin(), p.end());
    const auto out = fed::aggregate<double>(cs, w);
    for (std::size_t k = 0; k < 1000; ++k) {
      double naive = 0;
      for (std::size_t i = 0; i < 5; ++i) naive += w[i] * p[i][k];
      worst = std::max(worst, std::abs(out[k] - naive));
    }
    std::vector<std::size_t> perm{0, 1, 2, 3, 4};
    rng.shuffle(perm);
    std::vector<std::span<const double>> cs2;
    std::vector<double> w2;
    for (auto i : perm) cs2.push_back(p[i]), w2.push_back(w[i]);
    perm_exact = perm_exact && fed::aggregate<double>(cs2, w2) == out;
  }
  o.detail << "100 cases, max |agg - naive| = " << worst << ", permutation " << (perm_exact ? "exact" : "NOT exact");
  o.require(worst <= 1e-12, "within 1e-12");
  o.require(perm_exact, "permutation invariance exact");
}

// 5. Weight scaling factors.
void scaling_factors(Outcome& o) {
  Rng rng(5);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::size_t> n(1 + rng.index(20));
    for (auto& v : n) v = fed::local_sample_count(1 + rng.index(5000), 1 + rng.index(128));
    const auto w = fed::weight_scaling_factors(n);
    worst = std::max(worst, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
  }
  const std::size_t mine = fed::local_sample_count(10 * 64, 64);
  std::vector<std::size_t> worked{mine, 3200 - mine};
  const double w0 = fed::weight_scaling_factors(worked)[0];
  o.detail << "max |sum - 1| = " << worst << "; 10x64 of 3200 -> " << w0;
  o.require(worst <= 1e-12, "sum to 1 within 1e-12");
  o.require(w0 == 0.2, "worked case exactly 0.2");
}

// 6. Cloning and the one-client reduction.
void cloning_reduction(Outcome& o) {
  data::GeneratorConfig g;
  g.size = 16;
  g.per_view = {40, 40, 40};
  g.noise = 0.05;
  g.seed = 6;
  auto d = data::split_dataset(data::generate_synthetic_multiview(g), {0.7, 0.1, 0.2}, 6);
  Network<float> net(build_shallowfed(default_settings(), Variant::Baseline, {1, 16, 16}, 4));
  fed::GlobalState<float> global{0, net.init_params(11)};
  std::vector<fed::ClientState<float>> clients(5);
  fed::clone_global(global, clients);
  bool clones = true;
  for (const auto& c : clients) clones = clones && c.local_params == global.params;

  fed::FedConfig cfg;
  cfg.clients = 1;
  cfg.rounds = 3;
  cfg.train.batch_size = 8;
  cfg.seed = 6;
  auto run = fed::run_federated(net, d.train, d.validation, cfg);
  TrainConfig central = cfg.train;
  central.epochs = cfg.rounds * cfg.local_epochs;
  auto c = train_centralized(net, d.train, nullptr, central, cfg.seed);
  const bool same = run.global.params == c.params;
  o.detail << "clone bitwise " << (clones ? "yes" : "no") << "; 1-client federated vs centralised over "
           << net.param_count() << " params: " << (same ? "bitwise equal" : "DIFFER");
  o.require(clones, "clone_global bitwise");
  o.require(same, "1-client run equals centralised run");
}

std::vector<mrfo::Bounds> box(std::size_t d, double lo, double hi) { return std::vector<mrfo::Bounds>(d, {lo, hi}); }

// 7. MRFO dynamics and the sphere benchmark.
void mrfo_suite(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(7);
  bool bounded = true, monotone = true;
  for (int trial = 0; trial < 10; ++trial) {
    auto b = box(4, -2.0 - trial, 3.0);
    mrfo::Population pop;
    for (int i = 0; i < 8; ++i) pop.positions.push_back(mrfo::detail::random_point(rng, b));
    auto f = [](const mrfo::Position& x) { return -std::abs(x[0] - 1) - x[1] * x[1] + std::sin(x[2]) - x[3]; };
    for (const auto& x : pop.positions) pop.fitness.push_back(f(x));
    mrfo::detail::absorb(pop);
    for (std::size_t s = 1; s <= 100; ++s) {
      const double before = pop.best_fitness;
      auto cand = pop;
      mrfo::update_population(cand, s, 100, b, rng);
      for (std::size_t i = 0; i < cand.positions.size(); ++i) {
        for (std::size_t dd = 0; dd < 4; ++dd)
          bounded = bounded && cand.positions[i][dd] >= b[dd].lower && cand.positions[i][dd] <= b[dd].upper;
        const double fi = f(cand.positions[i]);
        if (fi > pop.fitness[i]) pop.positions[i] = cand.positions[i], pop.fitness[i] = fi;
      }
      mrfo::detail::absorb(pop);
      monotone = monotone && pop.best_fitness >= before;
    }
  }
  auto sphere = [](const mrfo::Position& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return -s;
  };
  int converged = 0, wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    mrfo::Config cfg;
    cfg.population = 10;
    cfg.max_iterations = 100;
    cfg.patience = 100;
    cfg.bounds = box(5, -10, 10);
    cfg.seed = seed;
    auto res = mrfo::optimize(cfg, sphere);
    converged += res.best_fitness() > -1e-2;
    auto rs = mrfo::random_search(cfg.bounds, res.evaluations, seed + 1000, sphere);
    wins += res.best_fitness() > rs.second;
  }
  const double secs = seconds_since(t0);
  o.detail << "1000 steps bounded " << (bounded ? "yes" : "no") << ", monotone " << (monotone ? "yes" : "no")
           << "; sphere converged " << converged << "/10, beats random search " << wins << "/10, " << secs << " s";
  o.require(bounded && monotone, "bounds and monotone best");
  o.require(converged >= 9, ">= 9/10 sphere seeds");
  o.require(wins >= 9, ">= 9/10 wins over random search");
  o.require(secs < 120, "under 2 min");
}

// 8. Structure search against the brute-force oracle.
void structure_search(Outcome& o) {
  const auto t0 = Clock::now();
  int found = 0;
  std::size_t max_evals = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng pick(seed * 7919);
    search::PlantedGrid obj{cell_indices(pick.index(grid::cells))};
    std::size_t scored = 0;
    const std::size_t oracle = search::brute_force_best_cell([&](const search::GridIndex& idx) {
      ++scored;
      return obj.score(idx);
    });
    if (scored != grid::cells) o.require(false, "oracle scores every cell once");
    mrfo::Config cfg;
    cfg.population = 10;
    cfg.max_iterations = 39;
    cfg.patience = 39;
    cfg.bounds = search::genome_bounds();
    cfg.seed = seed;
    auto res = mrfo::optimize(cfg, obj);
    max_evals = std::max(max_evals, res.evaluations);
    found += cell_index(decode_indices(search::to_genome(res.best_position()))) == oracle;
  }
  const double secs = seconds_since(t0);
  o.detail << "optimum found in " << found << "/10 seeds on the " << grid::cells << "-cell grid, at most " << max_evals
           << " evaluations, " << secs << " s";
  o.require(found >= 8, ">= 8/10 seeds");
  o.require(max_evals <= 400, "<= 400 evaluations");
  o.require(secs < 120, "under 2 min");
}

// 9. Desk-scale federated run.
void desk_federated(Outcome& o) {
  const auto t0 = Clock::now();
  cli::Settings s(cli::resolve_config(fs::path(FOLC_SOURCE_DIR) / "examples/configs/desk_federate.json", {}));
  const auto out = fs::temp_directory_path() / "folc_acceptance_fed";
  fs::remove_all(out);
  auto r = cli::cmd_federate(s, out);
  const double secs = seconds_since(t0);
  const double acc = r.run.global_val_accuracy.back();
  o.detail << s.federated.clients << " IID clients, " << s.federated.rounds << " rounds x "
           << s.federated.local_epochs << " epoch at " << s.generator.size << "x" << s.generator.size
           << ", default ShallowFed: global val accuracy " << acc << ", " << secs << " s";
  o.require(s.federated.clients == 5 && s.federated.rounds == 10 && s.federated.local_epochs == 1 &&
                s.generator.size == 32 && s.structure == default_settings(),
            "desk configuration");
  o.require(acc >= 0.90, "accuracy >= 0.90");
  o.require(secs < 300, "under 5 min");
}

// 10. Per-view harness with one deliberately corrupted view.
void per_view_harness(Outcome& o) {
  auto s = cli::Settings(cli::resolve_config(
      "", {"seed=10", "data.per_view=[120,120,120]", "data.size=16", "data.noise=0.05", "data.view_noise=[0,0,0.6]",
           "model.filters=8", "train.batch_size=8", "train.epochs=8"}));
  const auto out = fs::temp_directory_path() / "folc_acceptance_views";
  fs::remove_all(out);
  auto r = cli::cmd_train(s, out);
  auto sum = r.reports[1].cm;
  sum += r.reports[2].cm;
  sum += r.reports[3].cm;
  const bool identity = sum == r.reports[0].cm;
  const double ax = r.reports[1].metrics.accuracy, co = r.reports[2].metrics.accuracy,
               sa = r.reports[3].metrics.accuracy;
  o.detail << "partition identity " << (identity ? "exact" : "BROKEN") << "; accuracy axial " << ax << ", coronal "
           << co << ", corrupted sagittal " << sa;
  o.require(identity, "per-view matrices sum to all-views");
  o.require(sa < ax && sa < co, "corrupted view strictly lowest");
}

// 11. Parameter accounting over the whole grid.
void parameter_accounting(Outcome& o) {
  std::size_t mismatches = 0, checked = 0;
  for (std::size_t cell = 0; cell < grid::cells; ++cell)
    for (Variant v : {Variant::Baseline, Variant::ConvNeXt}) {
      const auto spec = build_shallowfed(settings_from_indices(cell_indices(cell)), v, {1, 32, 32}, 4);
      Network<float> net(spec);
      mismatches += net.allocate().size() != param_count(spec);
      ++checked;
    }
  const auto big = build_shallowfed(default_settings(), Variant::Baseline, {1, 224, 224}, 4);
  const std::size_t n = param_count(big);
  o.detail << checked << " specs, " << mismatches << " mismatches; default 224x224 build " << n << " params ("
           << n * sizeof(float) << " bytes as float32)";
  o.require(mismatches == 0, "param_count equals allocation");
  o.require(n >= 1'000'000 && n <= 1'450'000, "default build in [1.0M, 1.45M]");
}

template <typename E>
bool throws_exactly(const std::function<void()>& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

// 12. Dataset format round trip and corruption classes.
void format_round_trip(Outcome& o) {
  data::GeneratorConfig g;
  g.size = 16;
  g.per_view = {30, 30, 30};
  g.seed = 12;
  auto split = data::split_dataset(data::generate_synthetic_multiview(g), {0.7, 0.1, 0.2}, 12);
  split.meta = data::synthetic_meta(g);
  const auto a = fs::temp_directory_path() / "folc_acceptance_fmt_a", b = fs::temp_directory_path() / "folc_acceptance_fmt_b";
  fs::remove_all(a);
  fs::remove_all(b);
  data::write_dataset(a, split);
  const auto back = data::read_dataset(a);
  data::write_dataset(b, back);
  bool bitwise = back == split;
  for (const char* f : {"train.fds", "validation.fds", "test.fds", "metadata.json"})
    bitwise = bitwise && data::read_bytes(a / f) == data::read_bytes(b / f);

  const auto good = data::encode_images(split.train);
  auto truncated = good;
  truncated.resize(good.size() - 7);
  auto magic = good;
  magic[0] = 'X';
  auto flipped = good;
  flipped[data::kHeaderBytes + 5] ^= 0x10;
  const bool t = throws_exactly<data::TruncationError>([&] { data::decode_images(truncated); });
  const bool m = throws_exactly<data::FormatError>([&] { data::decode_images(magic); });
  const bool c = throws_exactly<data::ChecksumError>([&] { data::decode_images(flipped); });
  o.detail << "write/read/write " << (bitwise ? "bitwise idempotent" : "NOT idempotent") << "; truncation "
           << (t ? "ok" : "wrong") << ", bad magic " << (m ? "ok" : "wrong") << ", flipped byte "
           << (c ? "ok" : "wrong");
  o.require(bitwise, "bitwise idempotent");
  o.require(t && m && c, "corruption error classes");
}

}  // namespace

int main() {
  const std::vector<std::pair<int, void (*)(Outcome&)>> criteria{
      {1, metric_oracle},       {2, chi_square_contract}, {3, gradient_suite},     {4, aggregation_oracle},
      {5, scaling_factors},     {6, cloning_reduction},   {7, mrfo_suite},         {8, structure_search},
      {9, desk_federated},      {10, per_view_harness},   {11, parameter_accounting}, {12, format_round_trip}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail.str() << std::endl;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : "acceptance: all criteria passed")
            << std::endl;
  return failed ? 1 : 0;
}
