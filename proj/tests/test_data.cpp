#include <gtest/gtest.h>

#include <filesystem>

#include "folc/data/io.hpp"
#include "folc/data/synthetic.hpp"

using namespace folc;
using namespace folc::data;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("folc_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

ImageSet small_pool(std::uint64_t seed = 3, double noise = 0.1) {
  GeneratorConfig cfg;
  cfg.per_view = {24, 20, 16};
  cfg.size = 16;
  cfg.noise = noise;
  cfg.seed = seed;
  return generate_synthetic_multiview(cfg);
}

// One class, one view, n images of a given value.
ImageSet flat_set(std::size_t n, std::size_t classes = 1) {
  ImageSet s;
  s.classes = classes;
  s.height = s.width = 4;
  for (std::size_t i = 0; i < n; ++i)
    s.images.push_back({std::vector<float>(16, static_cast<float>(i % 7) / 7.0f), 0, View::Axial, false});
  return s;
}

}  // namespace

TEST(Generate, SameSeedGivesIdenticalPools) { EXPECT_EQ(small_pool(5), small_pool(5)); }

TEST(Generate, DifferentSeedsDiffer) { EXPECT_NE(small_pool(5), small_pool(6)); }

TEST(Generate, ViewCompositionIsExact) {
  GeneratorConfig cfg;
  cfg.per_view = {100, 80, 60};
  cfg.size = 16;
  auto pool = generate_synthetic_multiview(cfg);
  EXPECT_EQ(pool.view_counts(), (std::array<std::size_t, 3>{100, 80, 60}));
  EXPECT_EQ(pool.class_counts(), (std::vector<std::size_t>{60, 60, 60, 60}));
  EXPECT_NO_THROW(pool.validate());
}

TEST(Generate, NoiselessClassesAreCentroidSeparable) {
  GeneratorConfig cfg;
  cfg.noise = 0.0;
  cfg.per_view = {40, 40, 40};
  cfg.seed = 11;
  auto fit = generate_synthetic_multiview(cfg);
  cfg.seed = 12;
  cfg.per_view = {14, 13, 13};
  auto draw = generate_synthetic_multiview(cfg);
  ASSERT_EQ(draw.size(), 40u);
  EXPECT_EQ(nearest_centroid_accuracy(fit, draw), 1.0);
}

TEST(Generate, ExtraViewNoiseDegradesThatView) {
  GeneratorConfig cfg;
  cfg.noise = 0.15;
  cfg.per_view = {200, 200, 200};
  cfg.view_noise = {0.0, 0.0, 0.6};
  auto fit = generate_synthetic_multiview(cfg);
  cfg.seed = 99;
  auto eval = generate_synthetic_multiview(cfg);
  const double clean = nearest_centroid_accuracy(fit, eval.filter_view(View::Axial));
  const double noisy = nearest_centroid_accuracy(fit, eval.filter_view(View::Sagittal));
  EXPECT_GE(clean - noisy, 0.10);
}

TEST(Generate, RejectsBadConfig) {
  GeneratorConfig cfg;
  cfg.size = 8;
  EXPECT_THROW(generate_synthetic_multiview(cfg), std::invalid_argument);
  cfg.size = 16;
  cfg.per_view = {1, 0, 1};
  EXPECT_THROW(generate_synthetic_multiview(cfg), std::invalid_argument);
}

TEST(Preprocess, KnownScaleMapsMaxToOne) {
  Plane<double> p(1, 5, 5, 255.0);
  auto out = preprocess(p, 5, std::pair{0.0, 255.0});
  for (float v : out.values) EXPECT_EQ(v, 1.0f);
}

TEST(Preprocess, FlatImageWithoutScaleIsHalf) {
  Plane<double> p(1, 3, 3, 42.0);
  for (float v : preprocess(p, 3).values) EXPECT_EQ(v, 0.5f);
}

TEST(Preprocess, TargetSizedUnitImageIsUnchanged) {
  Plane<double> p(1, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) p.values[i] = static_cast<double>(i) / 15.0;
  auto out = preprocess(p, 4, std::pair{0.0, 1.0});
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(out.values[i], static_cast<float>(p.values[i]));
  auto auto_range = preprocess(p, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_FLOAT_EQ(auto_range.values[i], static_cast<float>(p.values[i]));
}

TEST(Preprocess, CheckerboardUpsampleKeepsCornersAndCentreIsHalf) {
  Plane<double> p(1, 2, 2);
  p.values = {0.0, 1.0, 1.0, 0.0};
  auto three = preprocess(p, 3, std::pair{0.0, 1.0});
  EXPECT_EQ(three.at(0, 0, 0), 0.0f);
  EXPECT_EQ(three.at(0, 0, 2), 1.0f);
  EXPECT_EQ(three.at(0, 2, 0), 1.0f);
  EXPECT_EQ(three.at(0, 2, 2), 0.0f);
  EXPECT_FLOAT_EQ(three.at(0, 1, 1), 0.5f);
  auto four = preprocess(p, 4, std::pair{0.0, 1.0});
  EXPECT_EQ(four.at(0, 0, 0), 0.0f);
  EXPECT_EQ(four.at(0, 3, 0), 1.0f);
  EXPECT_FLOAT_EQ((four.at(0, 1, 1) + four.at(0, 2, 2) + four.at(0, 1, 2) + four.at(0, 2, 1)) / 4, 0.5f);
}

TEST(Preprocess, NonFiniteSourceIsRejected) {
  Plane<double> p(1, 2, 2);
  p.values[1] = std::nan("");
  EXPECT_THROW(preprocess(p, 2), std::invalid_argument);
}

TEST(Augment, FlipIsAnInvolution) {
  auto pool = small_pool();
  auto plane = pool.plane(3);
  EXPECT_EQ(flip_horizontal(flip_horizontal(plane)), plane);
  EXPECT_NE(flip_horizontal(plane), plane);
}

TEST(Augment, ZeroRotationAndShiftAreIdentity) {
  auto plane = small_pool().plane(0);
  auto r = rotate(plane, 0.0);
  auto t = translate(plane, 0.0, 0.0);
  for (std::size_t i = 0; i < plane.values.size(); ++i) {
    EXPECT_FLOAT_EQ(r.values[i], plane.values[i]);
    EXPECT_FLOAT_EQ(t.values[i], plane.values[i]);
  }
}

TEST(Augment, OutputsStayInUnitRange) {
  auto pool = small_pool();
  Rng rng(4);
  for (std::size_t i = 0; i < 50; ++i)
    for (float v : augment(pool.plane(i % pool.size()), rng).values) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Balance, PadsEveryClassToTarget) {
  ImageSet s;
  s.classes = 4;
  s.height = s.width = 4;
  const std::vector<std::size_t> counts{1189, 1205, 1435, 1311};
  for (std::uint16_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i)
      s.images.push_back({std::vector<float>(16, 0.25f * static_cast<float>(c)), c, View::Axial, false});
  auto out = balance_by_augmentation(s, 1435, 1);
  EXPECT_EQ(out.class_counts(), (std::vector<std::size_t>(4, 1435)));
  std::size_t flagged = 0;
  for (const auto& im : out.images) flagged += im.augmented;
  EXPECT_EQ(flagged, 4 * 1435 - (1189 + 1205 + 1435 + 1311));
  EXPECT_NO_THROW(out.validate());
}

TEST(Balance, AlreadyBalancedIsUnchanged) {
  auto pool = small_pool();
  const auto counts = pool.class_counts();
  ASSERT_EQ(*std::min_element(counts.begin(), counts.end()), *std::max_element(counts.begin(), counts.end()));
  EXPECT_EQ(balance_by_augmentation(pool, counts[0], 9), pool);
}

TEST(Balance, EmptyClassOrLowTargetIsAnError) {
  auto s = flat_set(5, 2);
  EXPECT_THROW(balance_by_augmentation(s, 10, 1), std::invalid_argument);
  s.images[0].label = 1;
  EXPECT_THROW(balance_by_augmentation(s, 3, 1), std::invalid_argument);
}

TEST(Split, SingleCellSeventyTenTwenty) {
  auto s = split_dataset(flat_set(1000), {0.7, 0.1, 0.2}, 1);
  EXPECT_EQ(s.train.size(), 700u);
  EXPECT_EQ(s.validation.size(), 100u);
  EXPECT_EQ(s.test.size(), 200u);
}

TEST(Split, LargestRemainderSizes) {
  EXPECT_EQ(largest_remainder(100, {0.5, 0.3, 0.2}), (std::vector<std::size_t>{50, 30, 20}));
  EXPECT_EQ(largest_remainder(10, {1.0 / 3, 1.0 / 3, 1.0 / 3}), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_EQ(largest_remainder(7, {0.7, 0.1, 0.2}), (std::vector<std::size_t>{5, 1, 1}));
}

TEST(Split, StratifiedDisjointAndExhaustive) {
  GeneratorConfig cfg;
  cfg.per_view = {97, 61, 43};
  cfg.size = 16;
  auto pool = generate_synthetic_multiview(cfg);
  // Tag each image uniquely through its first pixel so identity is checkable.
  for (std::size_t i = 0; i < pool.size(); ++i) pool.images[i].pixels[0] = static_cast<float>(i) / static_cast<float>(pool.size());
  auto s = split_dataset(pool, {0.7, 0.1, 0.2}, 8);
  std::vector<int> seen(pool.size(), 0);
  for (const ImageSet* part : {&s.train, &s.validation, &s.test})
    for (const auto& im : part->images) {
      const auto i = static_cast<std::size_t>(std::lround(im.pixels[0] * static_cast<float>(pool.size())));
      ASSERT_LT(i, pool.size());
      EXPECT_EQ(im, pool.images[i]);
      ++seen[i];
    }
  for (int n : seen) EXPECT_EQ(n, 1);
  for (std::size_t c = 0; c < pool.classes; ++c)
    for (View v : kViews) {
      auto count = [&](const ImageSet& set) {
        return std::count_if(set.images.begin(), set.images.end(),
                             [&](const LabeledImage& im) { return im.label == c && im.view == v; });
      };
      const double cell = static_cast<double>(count(pool));
      EXPECT_LE(std::abs(static_cast<double>(count(s.test)) - 0.2 * cell), 1.0);
    }
  EXPECT_EQ(split_dataset(pool, {0.7, 0.1, 0.2}, 8), s);
}

TEST(Split, TinyCellGoesToTrainWithWarning) {
  std::vector<std::string> warnings;
  auto s = split_dataset(flat_set(2), {0.7, 0.1, 0.2}, 1, &warnings);
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Split, PerViewFilteringPartitionsTheSet) {
  auto pool = small_pool();
  std::size_t total = 0;
  for (View v : kViews) {
    auto part = pool.filter_view(v);
    for (const auto& im : part.images) EXPECT_EQ(im.view, v);
    total += part.size();
  }
  EXPECT_EQ(total, pool.size());
}

TEST(Format, RoundTripIsBitwise) {
  auto pool = small_pool();
  auto split = split_dataset(pool, {0.7, 0.1, 0.2}, 2);
  const auto counts = split.train.class_counts();
  split.train = balance_by_augmentation(split.train, *std::ranges::max_element(counts), 3);
  split.meta = DatasetMeta{synthetic_class_names(4), 3, kGeneratorVersion, 0.1};
  const auto dir = scratch_dir("roundtrip");
  write_dataset(dir, split);
  auto back = read_dataset(dir);
  EXPECT_EQ(back, split);
  EXPECT_EQ(encode_images(back.train), read_bytes(dir / "train.fds"));
  std::filesystem::remove_all(dir);
}

TEST(Format, TruncatedFileIsATruncationError) {
  auto bytes = encode_images(small_pool());
  for (std::size_t keep : {std::size_t{12}, std::size_t{40}, bytes.size() - 1}) {
    std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_THROW(decode_images(cut), TruncationError) << keep;
  }
}

TEST(Format, ForeignMagicNamesTheOffset) {
  auto bytes = encode_images(small_pool());
  bytes[3] = 'X';
  try {
    decode_images(bytes);
    FAIL() << "accepted foreign magic";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset, 3u);
    EXPECT_NE(std::string(e.what()).find("offset 3"), std::string::npos);
  }
}

TEST(Format, FlippedPayloadBitIsAChecksumError) {
  auto bytes = encode_images(small_pool());
  bytes[kHeaderBytes + 100] ^= 0x01;
  EXPECT_THROW(decode_images(bytes), ChecksumError);
}

TEST(Format, OutOfRangePixelIsRejected) {
  auto set = flat_set(2);
  auto bytes = encode_images(set);
  const float bad = 1.5f;
  std::uint32_t bits;
  std::memcpy(&bits, &bad, 4);
  const std::size_t at = kHeaderBytes + 4;
  for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<unsigned char>(bits >> (8 * i));
  const std::uint32_t crc = detail::crc32_of(bytes.data(), bytes.size() - 4);
  for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + i] = static_cast<unsigned char>(crc >> (8 * i));
  try {
    decode_images(bytes);
    FAIL() << "accepted pixel 1.5";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset, at);
  }
  set.images[0].pixels[0] = -0.1f;
  EXPECT_THROW(encode_images(set), std::invalid_argument);
}

TEST(Format, MissingDirectoryIsACleanError) {
  EXPECT_THROW(read_dataset("/nonexistent/folc/dataset"), DatasetError);
}
