#pragma once

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "folc/data/dataset.hpp"

namespace folc::data {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : DatasetError {
  std::uint64_t offset;
  FormatError(const std::string& what, std::uint64_t at)
      : DatasetError(what + " at byte offset " + std::to_string(at)), offset(at) {}
};
struct TruncationError : DatasetError {
  using DatasetError::DatasetError;
};
struct ChecksumError : DatasetError {
  using DatasetError::DatasetError;
};

inline constexpr std::array<char, 8> kMagic{'F', 'O', 'L', 'C', 'D', 'S', '0', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 8 + 6 * 4;

namespace detail {

inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v));
  b.push_back(static_cast<unsigned char>(v >> 8));
}
inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw std::invalid_argument(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

/// Serialises an image set: magic, little-endian u32 header
/// {version, k, n, channels, H, W}, records {u16 label, u8 view,
/// u8 augmented, f32 pixels}, then CRC32 of everything before it.
inline std::vector<unsigned char> encode_images(const ImageSet& set) {
  set.validate();
  std::vector<unsigned char> b(kMagic.begin(), kMagic.end());
  const std::size_t per = set.pixels_per_image();
  b.reserve(kHeaderBytes + set.size() * (4 + 4 * per) + 4);
  detail::put_u32(b, kFormatVersion);
  detail::put_u32(b, detail::checked_u32(set.classes, "class count"));
  detail::put_u32(b, detail::checked_u32(set.size(), "image count"));
  detail::put_u32(b, detail::checked_u32(set.channels, "channels"));
  detail::put_u32(b, detail::checked_u32(set.height, "height"));
  detail::put_u32(b, detail::checked_u32(set.width, "width"));
  for (const auto& im : set.images) {
    detail::put_u16(b, im.label);
    b.push_back(static_cast<unsigned char>(im.view));
    b.push_back(im.augmented ? 1 : 0);
    for (float p : im.pixels) {
      std::uint32_t bits;
      std::memcpy(&bits, &p, 4);
      detail::put_u32(b, bits);
    }
  }
  detail::put_u32(b, detail::crc32_of(b.data(), b.size()));
  return b;
}

inline ImageSet decode_images(const std::vector<unsigned char>& b) {
  const std::size_t check = std::min(b.size(), kMagic.size());
  for (std::size_t i = 0; i < check; ++i)
    if (b[i] != static_cast<unsigned char>(kMagic[i])) throw FormatError("bad magic bytes", i);
  if (b.size() < kHeaderBytes) throw TruncationError("file ends inside the header (" + std::to_string(b.size()) + " bytes)");
  const unsigned char* h = b.data() + 8;
  if (detail::get_u32(h) != kFormatVersion)
    throw FormatError("unsupported version " + std::to_string(detail::get_u32(h)), 8);
  ImageSet set;
  set.classes = detail::get_u32(h + 4);
  const std::uint64_t n = detail::get_u32(h + 8);
  set.channels = detail::get_u32(h + 12);
  set.height = detail::get_u32(h + 16);
  set.width = detail::get_u32(h + 20);
  if (set.classes == 0) throw FormatError("class count is zero", 12);
  if (set.channels == 0 || set.height == 0 || set.width == 0) throw FormatError("zero image dimension", 20);
  const std::uint64_t per = static_cast<std::uint64_t>(set.channels) * set.height * set.width;
  const std::uint64_t record = 4 + 4 * per;
  const std::uint64_t expected = kHeaderBytes + n * record + 4;
  if (b.size() < expected)
    throw TruncationError("file has " + std::to_string(b.size()) + " bytes, header implies " + std::to_string(expected));
  if (b.size() > expected) throw FormatError("unexpected trailing bytes", expected);
  const std::uint32_t stored = detail::get_u32(b.data() + expected - 4);
  const std::uint32_t actual = detail::crc32_of(b.data(), expected - 4);
  if (stored != actual) throw ChecksumError("CRC32 mismatch: stored " + std::to_string(stored) + ", computed " + std::to_string(actual));

  set.images.resize(n);
  std::uint64_t at = kHeaderBytes;
  for (auto& im : set.images) {
    im.label = detail::get_u16(b.data() + at);
    if (im.label >= set.classes) throw FormatError("label " + std::to_string(im.label) + " out of range", at);
    if (b[at + 2] > 2) throw FormatError("unknown view code " + std::to_string(b[at + 2]), at + 2);
    im.view = static_cast<View>(b[at + 2]);
    if (b[at + 3] > 1) throw FormatError("augmented flag must be 0 or 1", at + 3);
    im.augmented = b[at + 3] == 1;
    at += 4;
    im.pixels.resize(per);
    for (auto& p : im.pixels) {
      const std::uint32_t bits = detail::get_u32(b.data() + at);
      std::memcpy(&p, &bits, 4);
      if (!(p >= 0.0f && p <= 1.0f)) throw FormatError("pixel value outside [0,1]", at);
      at += 4;
    }
  }
  return set;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& b) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DatasetError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!os) throw DatasetError("write failed for " + path.string());
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_images(const std::filesystem::path& path, const ImageSet& set) { write_bytes(path, encode_images(set)); }
inline ImageSet read_images(const std::filesystem::path& path) { return decode_images(read_bytes(path)); }

inline nlohmann::json meta_to_json(const DatasetSplit& s) {
  auto views = [](const ImageSet& set) {
    const auto c = set.view_counts();
    return nlohmann::json{{"axial", c[0]}, {"coronal", c[1]}, {"sagittal", c[2]}};
  };
  return {{"format", "FOLCDS01"},
          {"class_names", s.meta.class_names},
          {"seed", s.meta.seed},
          {"generator_version", s.meta.generator_version},
          {"noise", s.meta.noise},
          {"image_shape", {s.train.channels, s.train.height, s.train.width}},
          {"splits",
           {{"train", {{"file", "train.fds"}, {"images", s.train.size()}, {"views", views(s.train)}}},
            {"validation", {{"file", "validation.fds"}, {"images", s.validation.size()}, {"views", views(s.validation)}}},
            {"test", {{"file", "test.fds"}, {"images", s.test.size()}, {"views", views(s.test)}}}}}};
}

/// Writes train/validation/test files plus a metadata.json sidecar.
inline void write_dataset(const std::filesystem::path& dir, const DatasetSplit& s) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw DatasetError("cannot create directory " + dir.string());
  write_images(dir / "train.fds", s.train);
  write_images(dir / "validation.fds", s.validation);
  write_images(dir / "test.fds", s.test);
  std::ofstream os(dir / "metadata.json");
  if (!os) throw DatasetError("cannot write metadata in " + dir.string());
  os << meta_to_json(s).dump(2) << '\n';
}

inline DatasetSplit read_dataset(const std::filesystem::path& dir) {
  DatasetSplit s;
  s.train = read_images(dir / "train.fds");
  s.validation = read_images(dir / "validation.fds");
  s.test = read_images(dir / "test.fds");
  std::ifstream is(dir / "metadata.json");
  if (!is) throw DatasetError("missing metadata.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
    s.meta.class_names = j.at("class_names").get<std::vector<std::string>>();
    s.meta.seed = j.at("seed").get<std::uint64_t>();
    s.meta.generator_version = j.at("generator_version").get<std::string>();
    s.meta.noise = j.at("noise").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("bad metadata.json: " + std::string(e.what()));
  }
  for (const ImageSet* part : {&s.validation, &s.test})
    if (part->classes != s.train.classes || part->image_shape() != s.train.image_shape())
      throw DatasetError("split files disagree on class count or image shape");
  return s;
}

}  // namespace folc::data
