#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "folc/data/io.hpp"
#include "folc/shallowfed.hpp"

namespace folc {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything needed to rebuild a ShallowFed network.
struct ModelDescriptor {
  StructureSettings settings;
  Variant variant = Variant::Baseline;
  Shape input{1, 32, 32};
  std::size_t classes = 4;
  std::vector<std::string> class_names;

  NetworkSpec spec() const { return build_shallowfed(settings, variant, input, classes); }
};

inline nlohmann::json settings_to_json(const StructureSettings& s) {
  return {{"filters", s.filters},
          {"kernel", s.kernel},
          {"activation", to_string(s.activation)},
          {"dropout", s.dropout},
          {"neurons", s.neurons}};
}

inline StructureSettings settings_from_json(const nlohmann::json& j) {
  StructureSettings s;
  s.filters = j.at("filters").get<std::size_t>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.dropout = j.at("dropout").get<double>();
  s.neurons = j.at("neurons").get<std::size_t>();
  return s;
}

inline constexpr std::array<char, 8> kParamMagic{'F', 'O', 'L', 'C', 'P', 'R', 'M', '1'};

/// Magic, u64 count, little-endian float32 values, u32 CRC-32 of the values.
inline std::vector<unsigned char> encode_params(std::span<const float> values) {
  std::vector<unsigned char> b(kParamMagic.begin(), kParamMagic.end());
  const std::uint64_t n = values.size();
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(n >> (8 * i)));
  const std::size_t body = b.size();
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    data::detail::put_u32(b, bits);
  }
  data::detail::put_u32(b, data::detail::crc32_of(b.data() + body, b.size() - body));
  return b;
}

inline std::vector<float> decode_params(const std::vector<unsigned char>& b) {
  if (b.size() < 16 || !std::equal(kParamMagic.begin(), kParamMagic.end(), b.begin()))
    throw ModelError("parameter file has a bad magic number");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(b[8 + i]) << (8 * i);
  if (b.size() != 16 + 4 * n + 4) throw ModelError("parameter file size does not match its count");
  if (data::detail::crc32_of(b.data() + 16, 4 * n) != data::detail::get_u32(b.data() + 16 + 4 * n))
    throw ModelError("parameter file checksum mismatch");
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = data::detail::get_u32(b.data() + 16 + 4 * i);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

/// Writes model.json, model_spec.txt and params.bin into `dir`.
inline void save_model(const std::filesystem::path& dir, const ModelDescriptor& m, const ParamVector<float>& params) {
  const NetworkSpec spec = m.spec();
  if (param_count(spec) != params.size()) throw ModelError("parameter vector does not match the model");
  std::filesystem::create_directories(dir);
  data::write_bytes(dir / "params.bin", encode_params(params.values()));
  nlohmann::json j{{"format", "folc-model-1"},
                   {"settings", settings_to_json(m.settings)},
                   {"variant", to_string(m.variant)},
                   {"input", m.input},
                   {"classes", m.classes},
                   {"class_names", m.class_names},
                   {"param_count", params.size()},
                   {"param_bytes", params.size() * sizeof(float)},
                   {"params_file", "params.bin"}};
  std::ofstream(dir / "model.json") << j.dump(2) << '\n';
  std::ofstream(dir / "model_spec.txt") << to_text(spec);
}

struct LoadedModel {
  ModelDescriptor descriptor;
  Network<float> net;
  ParamVector<float> params;
};

inline LoadedModel load_model(const std::filesystem::path& dir) {
  std::ifstream is(dir / "model.json");
  if (!is) throw ModelError("no model.json in " + dir.string());
  ModelDescriptor m;
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("format") != "folc-model-1") throw ModelError("unknown model format");
    m.settings = settings_from_json(j.at("settings"));
    m.variant = variant_from_string(j.at("variant").get<std::string>());
    m.input = j.at("input").get<Shape>();
    m.classes = j.at("classes").get<std::size_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("bad model.json: " + std::string(e.what()));
  }
  Network<float> net(m.spec());
  const auto values = decode_params(data::read_bytes(dir / "params.bin"));
  if (values.size() != net.param_count())
    throw ModelError("params.bin holds " + std::to_string(values.size()) + " values, model needs " +
                     std::to_string(net.param_count()));
  auto params = net.allocate();
  std::copy(values.begin(), values.end(), params.values().begin());
  return {std::move(m), std::move(net), std::move(params)};
}

}  // namespace folc
