#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "folc/data/synthetic.hpp"
#include "folc/fedsim.hpp"
#include "folc/mrfo.hpp"
#include "folc/shallowfed.hpp"

namespace folc::cli {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Every recognised key with its default. A config file may set any subset;
/// keys not listed here are rejected. `null` marks an optional value.
inline nlohmann::json default_config() {
  return nlohmann::json::parse(R"({
    "seed": 1,
    "threads": 1,
    "dataset": "",
    "model_dir": "",
    "output_dir": "",
    "data": {
      "seed": null,
      "classes": 4,
      "per_view": [100, 100, 100],
      "size": 32,
      "noise": 0.1,
      "view_noise": [0.0, 0.0, 0.0],
      "splits": [0.7, 0.1, 0.2]
    },
    "model": {
      "filters": 32,
      "kernel": 3,
      "activation": "LeakyReLU",
      "dropout": 0.25,
      "neurons": 64,
      "variant": "baseline",
      "genome": null
    },
    "train": {
      "lr": 0.001,
      "batch_size": 64,
      "epochs": 30,
      "optimizer": "adam"
    },
    "federated": {
      "clients": 5,
      "rounds": 30,
      "local_epochs": 1,
      "partition": "iid",
      "proportions": [],
      "client_validation": false
    },
    "search": {
      "objective": "train",
      "population": 10,
      "max_iterations": 10,
      "patience": 10,
      "bounds": [0.0, 1.0],
      "train_epochs": 3,
      "planted_cell": null
    },
    "evaluate": {
      "confusion": null,
      "class_names": []
    }
  })");
}

namespace detail {

inline void check_keys(const nlohmann::json& given, const nlohmann::json& schema, const std::string& path) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    const auto& def = schema[it.key()];
    if (def.is_null() || it->is_null()) continue;
    if (def.is_object()) {
      if (!it->is_object()) throw ConfigError("config key '" + key + "' must be an object");
      check_keys(*it, def, key);
    } else if (def.is_number() != it->is_number() || def.is_string() != it->is_string() ||
               def.is_boolean() != it->is_boolean() || def.is_array() != it->is_array()) {
      throw ConfigError("config key '" + key + "' has the wrong type (expected " + std::string(def.type_name()) +
                        ", got " + it->type_name() + ")");
    } else if (def.is_number_unsigned() && !it->is_number_unsigned()) {
      throw ConfigError("config key '" + key + "' must be a non-negative integer");
    }
  }
}

// Deep assignment; unlike a JSON merge patch, null values are kept.
inline void merge_into(nlohmann::json& dst, const nlohmann::json& src) {
  for (auto it = src.begin(); it != src.end(); ++it) {
    if (it->is_object() && dst.contains(it.key()) && dst[it.key()].is_object())
      merge_into(dst[it.key()], *it);
    else
      dst[it.key()] = *it;
  }
}

}  // namespace detail

/// Parses one `key.path=value` override. The value is read as JSON when it
/// parses and as a plain string otherwise.
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json::json_pointer ptr;
  std::size_t start = 0;
  while (start <= key.size()) {
    const auto dot = key.find('.', start);
    ptr /= key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json patch;
  patch[ptr] = value;
  detail::check_keys(patch, default_config(), "");
  cfg[ptr] = value;
}

/// Defaults, then the file (if any), then each override in order.
inline nlohmann::json resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  nlohmann::json cfg = default_config();
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot read config file " + file.string());
    nlohmann::json given;
    try {
      given = nlohmann::json::parse(is, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
    }
    if (!given.is_object()) throw ConfigError("config file must hold a JSON object");
    detail::check_keys(given, cfg, "");
    detail::merge_into(cfg, given);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

/// Typed view of a resolved config. Construction validates every value.
struct Settings {
  nlohmann::json echo;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::filesystem::path dataset, model_dir, output_dir;
  data::GeneratorConfig generator;
  std::vector<double> splits;
  StructureSettings structure;
  Variant variant = Variant::Baseline;
  TrainConfig train;
  fed::FedConfig federated;
  std::string objective;
  mrfo::Config mrfo;
  std::size_t search_epochs = 3;
  std::optional<std::size_t> planted_cell;
  std::optional<std::vector<std::vector<std::uint64_t>>> confusion;
  std::vector<std::string> class_names;

  explicit Settings(const nlohmann::json& cfg) : echo(cfg) {
    try {
      seed = cfg.at("seed").get<std::uint64_t>();
      threads = cfg.at("threads").get<std::size_t>();
      if (threads < 1) throw ConfigError("threads must be >= 1");
      dataset = cfg.at("dataset").get<std::string>();
      model_dir = cfg.at("model_dir").get<std::string>();
      output_dir = cfg.at("output_dir").get<std::string>();

      const auto& d = cfg.at("data");
      generator.classes = d.at("classes").get<std::size_t>();
      generator.per_view = d.at("per_view").get<std::array<std::size_t, 3>>();
      generator.size = d.at("size").get<std::size_t>();
      generator.noise = d.at("noise").get<double>();
      generator.view_noise = d.at("view_noise").get<std::array<double, 3>>();
      generator.seed = d.at("seed").is_null() ? seed : d.at("seed").get<std::uint64_t>();
      generator.validate();
      splits = d.at("splits").get<std::vector<double>>();
      if (splits.size() != 3) throw ConfigError("data.splits needs three proportions");
      data::check_proportions(splits);

      const auto& m = cfg.at("model");
      structure = settings_from_json_checked(m);
      // A genome, when given, replaces the explicit structure keys.
      if (!m.at("genome").is_null()) {
        const auto g = m.at("genome").get<std::vector<double>>();
        if (g.size() != kGenomeDims) throw ConfigError("model.genome needs 5 coordinates");
        StructureGenome genome{};
        for (std::size_t i = 0; i < kGenomeDims; ++i) {
          if (!(g[i] >= 0.0 && g[i] <= 1.0)) throw ConfigError("model.genome coordinates must lie in [0, 1]");
          genome[i] = g[i];
        }
        structure = decode_genome(genome);
      }
      variant = variant_from_string(m.at("variant").get<std::string>());

      const auto& t = cfg.at("train");
      train.lr = t.at("lr").get<double>();
      train.batch_size = t.at("batch_size").get<std::size_t>();
      train.epochs = t.at("epochs").get<std::size_t>();
      const auto opt = t.at("optimizer").get<std::string>();
      if (opt == "adam") train.optimizer = OptimizerKind::Adam;
      else if (opt == "sgd") train.optimizer = OptimizerKind::SGD;
      else throw ConfigError("train.optimizer must be adam or sgd");
      train.validate();

      const auto& f = cfg.at("federated");
      federated.clients = f.at("clients").get<std::size_t>();
      federated.rounds = f.at("rounds").get<std::size_t>();
      federated.local_epochs = f.at("local_epochs").get<std::size_t>();
      federated.partition = fed::partition_from_string(f.at("partition").get<std::string>());
      federated.proportions = f.at("proportions").get<std::vector<double>>();
      if (!federated.proportions.empty()) data::check_proportions(federated.proportions);
      federated.client_validation = f.at("client_validation").get<bool>();
      federated.train = train;
      federated.seed = seed;
      federated.threads = threads;
      federated.validate();

      const auto& s = cfg.at("search");
      objective = s.at("objective").get<std::string>();
      if (objective != "train" && objective != "planted" && objective != "constant")
        throw ConfigError("search.objective must be train, planted or constant");
      mrfo.population = s.at("population").get<std::size_t>();
      mrfo.max_iterations = s.at("max_iterations").get<std::size_t>();
      mrfo.patience = s.at("patience").get<std::size_t>();
      mrfo.seed = seed;
      mrfo.threads = threads;
      const auto b = s.at("bounds").get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("search.bounds must be [lower, upper]");
      mrfo.bounds = std::vector<mrfo::Bounds>(kGenomeDims, {b[0], b[1]});
      mrfo.validate();
      search_epochs = s.at("train_epochs").get<std::size_t>();
      if (search_epochs < 1) throw ConfigError("search.train_epochs must be >= 1");
      if (!s.at("planted_cell").is_null()) {
        planted_cell = s.at("planted_cell").get<std::size_t>();
        if (*planted_cell >= grid::cells)
          throw ConfigError("search.planted_cell must be below " + std::to_string(grid::cells));
      }

      const auto& e = cfg.at("evaluate");
      if (!e.at("confusion").is_null()) confusion = e.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
      class_names = e.at("class_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(std::string("bad config value: ") + ex.what());
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
  }

 private:
  static StructureSettings settings_from_json_checked(const nlohmann::json& m) {
    StructureSettings s;
    s.filters = m.at("filters").get<std::size_t>();
    s.kernel = m.at("kernel").get<std::size_t>();
    s.activation = activation_from_string(m.at("activation").get<std::string>());
    s.dropout = m.at("dropout").get<double>();
    s.neurons = m.at("neurons").get<std::size_t>();
    if (s.filters < 1 || s.kernel < 1 || s.kernel % 2 == 0 || s.neurons < 1)
      throw ConfigError("model: filters and neurons must be >= 1 and kernel a positive odd number");
    if (!(s.dropout >= 0.0 && s.dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
    return s;
  }
};

}  // namespace folc::cli
