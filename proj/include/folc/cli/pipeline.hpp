#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "folc/cli/config.hpp"
#include "folc/data/io.hpp"
#include "folc/evalkit.hpp"
#include "folc/fedsim.hpp"
#include "folc/model_io.hpp"
#include "folc/search.hpp"

namespace folc::cli {

namespace fs = std::filesystem;

/// Failure to create or write an artifact.
struct OutputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

/// Output directory, first match wins: the --out flag, $FOLC_OUTPUT_DIR/<command>,
/// the config's output_dir, folc_runs/<command>.
inline fs::path output_dir(const std::string& explicit_dir, const std::string& command,
                           const fs::path& configured = {}) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("FOLC_OUTPUT_DIR"); env && *env) return fs::path(env) / command;
  if (!configured.empty()) return configured;
  return fs::path("folc_runs") / command;
}

namespace detail {

inline void prepare(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw OutputError("cannot create output directory " + dir.string());
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw OutputError("cannot write " + path.string());
  return os;
}

inline void write_echo(const fs::path& dir, const Settings& s) { open_out(dir / "config.json") << s.echo.dump(2) << '\n'; }

inline void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

inline nlohmann::json curve_json(const std::vector<eval::CurvePoint>& pts) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : pts) a.push_back({p.threshold, p.x, p.y});
  return a;
}

inline void write_reports(const fs::path& dir, const std::vector<eval::ScopeReport>& reports,
                          const std::vector<std::string>& class_names, const std::vector<std::string>& warnings) {
  auto csv = open_out(dir / "metrics.csv");
  eval::write_metrics_csv(csv, reports, class_names);
  nlohmann::json scopes = nlohmann::json::array();
  for (const auto& r : reports) {
    auto j = eval::to_json(r, class_names);
    j["roc_points_threshold_fpr_tpr"] = curve_json(r.roc);
    j["pr_points_threshold_recall_precision"] = curve_json(r.pr);
    scopes.push_back(std::move(j));
  }
  open_out(dir / "metrics.json") << nlohmann::json{{"class_names", class_names}, {"warnings", warnings}, {"reports", scopes}}.dump(2)
                                 << '\n';
}

inline data::DatasetSplit generate(const Settings& s, std::vector<std::string>* warnings) {
  auto split = data::split_dataset(data::generate_synthetic_multiview(s.generator), s.splits, derive_seed(s.generator.seed, {0x5117u}),
                                   warnings);
  split.meta = data::synthetic_meta(s.generator);
  return split;
}

/// The configured dataset directory, or an in-memory synthetic dataset when
/// none is set.
inline data::DatasetSplit load_data(const Settings& s, std::vector<std::string>* warnings) {
  if (!s.dataset.empty()) return data::read_dataset(s.dataset);
  return generate(s, warnings);
}

inline ModelDescriptor descriptor_for(const Settings& s, const data::DatasetSplit& d) {
  return {s.structure, s.variant, d.train.image_shape(), d.train.classes, d.meta.class_names};
}

inline nlohmann::json seeds_json(const Settings& s) {
  return {{"master", s.seed},
          {"init", init_seed(s.seed)},
          {"data", s.dataset.empty() ? nlohmann::json(s.generator.seed) : nullptr}};
}

inline void write_summary(const fs::path& dir, nlohmann::json j, const Settings& s,
                          const std::vector<eval::ScopeReport>& reports) {
  for (const auto& r : reports) j["test_accuracy"][r.scope] = r.metrics.accuracy;
  j["seeds"] = seeds_json(s);
  j["config"] = s.echo;
  open_out(dir / "summary.json") << j.dump(2) << '\n';
}

inline void write_epochs_csv(const fs::path& path, const std::vector<EpochMetrics>& hist) {
  auto os = open_out(path);
  os.precision(17);
  os << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& e : hist) {
    os << e.epoch + 1 << ',' << e.train_loss << ',' << e.train_accuracy << ',';
    if (e.has_validation) os << e.val_loss << ',' << e.val_accuracy;
    else os << ',';
    os << '\n';
  }
}

}  // namespace detail

struct GenerateResult {
  data::DatasetSplit split;
  std::vector<std::string> warnings;
};

inline GenerateResult cmd_generate(const Settings& s, const fs::path& out) {
  detail::prepare(out);
  GenerateResult r;
  r.split = detail::generate(s, &r.warnings);
  detail::warn(r.warnings);
  data::write_dataset(out, r.split);
  detail::write_echo(out, s);
  return r;
}

struct TrainResult {
  ModelDescriptor model;
  CentralizedRun<float> run;
  std::vector<eval::ScopeReport> reports;
};

inline TrainResult cmd_train(const Settings& s, const fs::path& out) {
  detail::prepare(out);
  std::vector<std::string> warnings;
  const auto d = detail::load_data(s, &warnings);
  TrainResult r{detail::descriptor_for(s, d), {}, {}};
  Network<float> net(r.model.spec());
  r.run = train_centralized(net, d.train, d.validation.empty() ? nullptr : &d.validation, s.train, s.seed);
  r.reports = eval::per_view_report(make_predictor(net, r.run.params), d.test, &warnings);
  detail::warn(warnings);
  save_model(out / "model", r.model, r.run.params);
  detail::write_epochs_csv(out / "epochs.csv", r.run.history);
  detail::write_reports(out, r.reports, d.meta.class_names, warnings);
  const auto& last = r.run.history.back();
  detail::write_summary(out,
                        {{"epochs", r.run.history.size()},
                         {"param_count", r.run.params.size()},
                         {"final_train_accuracy", last.train_accuracy},
                         {"final_val_accuracy", last.has_validation ? nlohmann::json(last.val_accuracy) : nullptr}},
                        s, r.reports);
  detail::write_echo(out, s);
  return r;
}

struct FederateResult {
  ModelDescriptor model;
  fed::FedRun<float> run;
  std::vector<eval::ScopeReport> reports;
};

inline FederateResult cmd_federate(const Settings& s, const fs::path& out) {
  detail::prepare(out);
  std::vector<std::string> warnings;
  const auto d = detail::load_data(s, &warnings);
  if (d.validation.empty()) throw data::DatasetError("federated training needs a non-empty validation split");
  FederateResult r{detail::descriptor_for(s, d), {}, {}};
  Network<float> net(r.model.spec());
  r.run = fed::run_federated(net, d.train, d.validation, s.federated);
  r.reports = eval::per_view_report(make_predictor(net, r.run.global.params), d.test, &warnings);
  detail::warn(warnings);
  save_model(out / "model", r.model, r.run.global.params);
  {
    auto os = detail::open_out(out / "history.csv");
    fed::write_history_csv(os, r.run.history);
  }
  detail::write_reports(out, r.reports, d.meta.class_names, warnings);
  std::vector<std::size_t> shard_sizes;
  for (const auto& c : r.run.clients) shard_sizes.push_back(c.shard.size());
  detail::write_summary(out,
                        {{"rounds", r.run.global.round},
                         {"param_count", r.run.global.params.size()},
                         {"client_shard_sizes", shard_sizes},
                         {"client_weights", r.run.weights},
                         {"global_val_accuracy_per_round", r.run.global_val_accuracy},
                         {"final_global_val_accuracy", r.run.global_val_accuracy.back()}},
                        s, r.reports);
  detail::write_echo(out, s);
  return r;
}

struct SearchResult {
  mrfo::Result result;
  std::size_t best_cell = 0;
  StructureSettings best;
  std::optional<std::size_t> oracle_cell;  // planted objective only
};

inline SearchResult cmd_search(const Settings& s, const fs::path& out) {
  detail::prepare(out);
  std::vector<std::string> warnings;
  SearchResult r;
  Shape input{1, s.generator.size, s.generator.size};
  std::size_t classes = s.generator.classes;
  nlohmann::json objective{{"kind", s.objective}};

  if (s.objective == "train") {
    const auto d = detail::load_data(s, &warnings);
    if (d.validation.empty()) throw data::DatasetError("structure search needs a non-empty validation split");
    input = d.train.image_shape();
    classes = d.train.classes;
    search::TrainingObjectiveConfig oc{s.variant, input, classes, s.train, s.seed};
    oc.train.epochs = s.search_epochs;
    search::TrainingObjective f(d.train, d.validation, oc);
    r.result = mrfo::optimize(s.mrfo, std::ref(f));
    objective["fitness"] = "max validation accuracy";
    objective["trained_cells"] = f.trained_cells();
  } else if (s.objective == "planted") {
    const std::size_t cell = s.planted_cell ? *s.planted_cell : Rng(derive_seed(s.seed, {0x91A7u})).index(grid::cells);
    search::PlantedGrid f{cell_indices(cell)};
    r.oracle_cell = search::brute_force_best_cell([&](const search::GridIndex& idx) { return f.score(idx); });
    r.result = mrfo::optimize(s.mrfo, f);
    objective["planted_cell"] = cell;
    objective["oracle_cell"] = *r.oracle_cell;
  } else {
    r.result = mrfo::optimize(s.mrfo, [](const mrfo::Position&) { return 0.0; });
  }
  detail::warn(warnings);

  const auto idx = decode_indices(search::to_genome(r.result.best_position()));
  r.best_cell = cell_index(idx);
  r.best = settings_from_indices(idx);
  if (r.oracle_cell) objective["found_oracle"] = r.best_cell == *r.oracle_cell;

  {
    auto os = detail::open_out(out / "history.csv");
    mrfo::write_history_csv(os, r.result.history);
  }
  const auto spec = build_shallowfed(r.best, s.variant, input, classes);
  nlohmann::json best{{"genome", r.result.best_position()},
                      {"cell", r.best_cell},
                      {"indices", idx},
                      {"settings", settings_to_json(r.best)},
                      {"fitness", r.result.best_fitness()},
                      {"evaluations", r.result.evaluations},
                      {"iterations", r.result.iterations},
                      {"stopped_on_patience", r.result.stopped_on_patience},
                      {"nan_warnings", r.result.nan_warnings},
                      {"param_count", param_count(spec)},
                      {"objective", objective}};
  detail::open_out(out / "best.json") << best.dump(2) << '\n';
  detail::open_out(out / "best_model_spec.txt") << to_text(spec);
  detail::write_echo(out, s);
  return r;
}

struct EvaluateResult {
  std::vector<eval::ScopeReport> reports;
};

/// Scores a saved model on the test split, or scores a literal confusion
/// matrix (rows true, columns predicted) when one is configured.
inline EvaluateResult cmd_evaluate(const Settings& s, const fs::path& out) {
  EvaluateResult r;
  std::vector<std::string> warnings;
  std::vector<std::string> names = s.class_names;
  if (s.confusion) {
    const auto& rows = *s.confusion;
    const std::size_t k = rows.size();
    if (k < 2) throw ConfigError("evaluate.confusion needs at least two rows");
    eval::ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < k; ++i) {
      if (rows[i].size() != k) throw ConfigError("evaluate.confusion must be square");
      for (std::size_t j = 0; j < k; ++j) cm.at(i, j) = rows[i][j];
    }
    if (cm.total() == 0) throw ConfigError("evaluate.confusion is all zeros");
    eval::ScopeReport rep{"confusion", cm, eval::metrics_from_confusion(cm), eval::chi_square(cm), {}, {}};
    r.reports.push_back(std::move(rep));
  } else {
    if (s.model_dir.empty()) throw ConfigError("evaluate needs model_dir (or evaluate.confusion)");
    auto model = load_model(s.model_dir);
    const auto d = detail::load_data(s, &warnings);
    if (d.test.image_shape() != model.descriptor.input || d.test.classes != model.descriptor.classes)
      throw data::DatasetError("dataset shape " + shape_str(d.test.image_shape()) + " with " +
                               std::to_string(d.test.classes) + " classes does not fit the model");
    if (names.empty()) names = model.descriptor.class_names;
    r.reports = eval::per_view_report(make_predictor(model.net, model.params), d.test, &warnings);
  }
  detail::prepare(out);
  detail::warn(warnings);
  detail::write_reports(out, r.reports, names, warnings);
  detail::write_echo(out, s);
  return r;
}

}  // namespace folc::cli
