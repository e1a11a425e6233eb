// folc: generate synthetic data, train, federate, search and evaluate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "folc/cli/pipeline.hpp"

namespace {

using namespace folc;
using namespace folc::cli;

struct Options {
  std::string config, out, dataset, model, confusion;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "JSON config file (see README for keys)");
  cmd->add_option("-s,--set", o.overrides, "Override a config key, e.g. --set train.lr=0.01")->take_all();
  cmd->add_option("-o,--out", o.out, "Output directory (else $FOLC_OUTPUT_DIR/<command>, config output_dir, folc_runs/<command>)");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--threads", o.threads, "Worker threads; results do not depend on it");
}

Settings settings_from(const Options& o) {
  auto cfg = resolve_config(o.config, o.overrides);
  if (o.seed) cfg["seed"] = *o.seed;
  if (o.threads) cfg["threads"] = *o.threads;
  if (!o.dataset.empty()) cfg["dataset"] = o.dataset;
  if (!o.model.empty()) cfg["model_dir"] = o.model;
  if (!o.confusion.empty()) {
    nlohmann::json m;
    if (std::filesystem::is_regular_file(o.confusion)) {
      std::ifstream is(o.confusion);
      m = nlohmann::json::parse(is, nullptr, false);
    } else {
      m = nlohmann::json::parse(o.confusion, nullptr, false);
    }
    if (m.is_discarded()) throw ConfigError("--confusion is neither a JSON matrix nor a file holding one");
    cfg["evaluate"]["confusion"] = m;
  }
  return Settings(cfg);
}

void summarise(const std::vector<eval::ScopeReport>& reports) {
  for (const auto& r : reports)
    std::cout << "  " << r.scope << ": accuracy " << r.metrics.accuracy << " macro_f1 " << r.metrics.macro_f1 << " (n="
              << r.metrics.samples << ")\n";
}

int run(const std::string& command, const Options& o) {
  const Settings s = settings_from(o);
  const auto out = output_dir(o.out, command, s.output_dir);
  if (command == "generate") {
    auto r = cmd_generate(s, out);
    std::cout << "wrote " << r.split.train.size() << "/" << r.split.validation.size() << "/" << r.split.test.size()
              << " train/validation/test images to " << out.string() << '\n';
  } else if (command == "train") {
    auto r = cmd_train(s, out);
    const auto& last = r.run.history.back();
    std::cout << "trained " << r.run.history.size() << " epochs, " << r.run.params.size()
              << " parameters; final val accuracy " << last.val_accuracy << '\n';
    summarise(r.reports);
  } else if (command == "federate") {
    auto r = cmd_federate(s, out);
    std::cout << s.federated.rounds << " rounds over " << s.federated.clients
              << " clients; global val accuracy " << r.run.global_val_accuracy.back() << '\n';
    summarise(r.reports);
  } else if (command == "search") {
    auto r = cmd_search(s, out);
    std::cout << "best cell " << r.best_cell << " (" << describe(r.best) << ") fitness " << r.result.best_fitness()
              << " after " << r.result.evaluations << " evaluations\n";
  } else {
    auto r = cmd_evaluate(s, out);
    summarise(r.reports);
  }
  std::cout << "artifacts in " << out.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated ShallowFed toolkit with MRFO structure search"};
  app.require_subcommand(1);
  Options o;
  auto* gen = app.add_subcommand("generate", "Write a synthetic multi-view dataset");
  auto* train = app.add_subcommand("train", "Centralised training run");
  auto* fedcmd = app.add_subcommand("federate", "Federated training run");
  auto* search = app.add_subcommand("search", "MRFO structure search");
  auto* evalcmd = app.add_subcommand("evaluate", "Score a saved model or a confusion matrix");
  for (auto* c : {gen, train, fedcmd, search, evalcmd}) add_common(c, o);
  for (auto* c : {train, fedcmd, search, evalcmd})
    c->add_option("-d,--dataset", o.dataset, "Dataset directory (default: generate in memory from the data keys)");
  evalcmd->add_option("-m,--model", o.model, "Model directory written by train or federate");
  evalcmd->add_option("--confusion", o.confusion, "Confusion matrix (rows true) as JSON or a JSON file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const data::DatasetError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ModelError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
