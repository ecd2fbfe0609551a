#include <doctest.h>

#include <cmath>
#include <fstream>

#include "faultdx/detail/binary_io.hpp"
#include "faultdx/error.hpp"
#include "faultdx/preprocess.hpp"
#include "faultdx/rng.hpp"
#include "support.hpp"

using namespace faultdx;
using namespace faultdx::preprocess;
using dataset::Dataset;
using dataset::SensorFrame;

namespace {

Dataset make_dataset(const std::vector<std::vector<float>>& rows) {
  std::vector<SensorFrame> frames;
  for (const auto& r : rows) frames.push_back({r, 0, 0, static_cast<std::uint32_t>(frames.size())});
  return Dataset(std::move(frames), {{0, "only"}}, dataset::IngestedProvenance{});
}

Dataset random_dataset(std::size_t n, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<float>> rows(n, std::vector<float>(p));
  for (std::size_t j = 0; j < p; ++j) {
    const double scale = std::pow(10.0, rng.uniform(-3.0, 4.0));
    const double offset = rng.uniform(-1e3, 1e3);
    for (std::size_t i = 0; i < n; ++i) rows[i][j] = static_cast<float>(offset + scale * rng.normal());
  }
  for (std::size_t i = 0; i < n; ++i) rows[i][p - 1] = 7.0f;  // constant channel
  return make_dataset(rows);
}

NormalizedFrame random_normalized(std::size_t p, Rng& rng) {
  NormalizedFrame f;
  f.values.resize(p);
  for (auto& v : f.values) v = static_cast<float>(rng.uniform(0.0, 1.0));
  f.values[0] = 0.0f;
  f.values[p - 1] = 1.0f;
  return f;
}

}  // namespace

TEST_CASE("fit_minmax records extrema and constant channels") {
  const auto stats = fit_minmax(make_dataset({{2, 7}, {5, 7}, {3, 7}}));
  CHECK(stats.min[0] == 2);
  CHECK(stats.max[0] == 5);
  CHECK(stats.min[1] == 7);
  CHECK(stats.max[1] == 7);
  CHECK(stats.constant_channels == std::vector<std::size_t>{1});
}

TEST_CASE("normalize endpoints, midpoint and clamp") {
  const auto stats = fit_minmax(make_dataset({{2, 7}, {6, 7}}));
  auto norm = [&](float x) { return normalize({{x, 7.0f}, 0, 0, 0}, stats).values; };
  CHECK(norm(2.0f)[0] == 0.0f);
  CHECK(norm(6.0f)[0] == 1.0f);
  CHECK(norm(4.0f)[0] == 0.5f);
  CHECK(norm(6.5f)[0] == 1.0f);
  CHECK(norm(-100.0f)[0] == 0.0f);
  CHECK(norm(4.0f)[1] == 0.0f);
  CHECK(normalize({{1.0f, 99.0f}, 0, 0, 0}, stats).values[1] == 0.0f);
  CHECK_THROWS_AS(normalize({{1.0f}, 0, 0, 0}, stats), InvalidArgument);
}

TEST_CASE("re-normalizing the training set spans exactly [0, 1]") {
  const auto ds = random_dataset(50, 40, 3);
  const auto stats = fit_minmax(ds);
  std::vector<float> lo(40, 2.0f), hi(40, -1.0f);
  for (const auto& f : ds.frames()) {
    const auto n = normalize(f, stats);
    for (std::size_t j = 0; j < 40; ++j) {
      lo[j] = std::min(lo[j], n.values[j]);
      hi[j] = std::max(hi[j], n.values[j]);
    }
  }
  for (std::size_t j = 0; j + 1 < 40; ++j) {
    CHECK(lo[j] == 0.0f);
    CHECK(hi[j] == 1.0f);
  }
  CHECK(lo[39] == 0.0f);
  CHECK(hi[39] == 0.0f);
}

TEST_CASE("normalized values stay in range and preserve order") {
  const auto ds = random_dataset(30, 20, 4);
  const auto stats = fit_minmax(ds);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    SensorFrame f{std::vector<float>(20), 0, 0, 0};
    for (std::size_t j = 0; j < 20; ++j) {
      const double span = stats.max[j] - stats.min[j];
      f.values[j] = static_cast<float>(stats.min[j] + span * rng.uniform(-0.5, 1.5));
    }
    const auto n = normalize(f, stats);
    for (float v : n.values) REQUIRE((v >= 0.0f && v <= 1.0f));
  }
  for (std::size_t j = 0; j + 1 < 20; ++j) {
    const float a = static_cast<float>(stats.min[j] + 0.25 * (stats.max[j] - stats.min[j]));
    const float b = static_cast<float>(stats.min[j] + 0.75 * (stats.max[j] - stats.min[j]));
    SensorFrame fa{std::vector<float>(20, a), 0, 0, 0}, fb{std::vector<float>(20, b), 0, 0, 0};
    CHECK(normalize(fa, stats).values[j] < normalize(fb, stats).values[j]);
  }
}

TEST_CASE("stats serialize with min, max and constant_channels") {
  const auto stats = fit_minmax(random_dataset(10, 5, 6));
  const nlohmann::json j = stats;
  CHECK(j.contains("min"));
  CHECK(j.contains("max"));
  CHECK(j.at("constant_channels") == nlohmann::json::array({4}));
  CHECK(j.get<NormalizationStats>() == stats);
}

TEST_CASE("image side and padding") {
  CHECK(image_side(10725) == 104);
  CHECK(image_side(10816) == 104);
  CHECK(image_side(10817) == 105);
  CHECK(image_side(1) == 1);

  NormalizedFrame f{std::vector<float>(10725, 0.5f), 3};
  const auto img = encode_gray(f);
  CHECK(img.side == 104);
  CHECK(img.pad_count == 91);
  CHECK(img.label == 3);
  for (std::size_t i = 10725; i < 10816; ++i) CHECK(img.pixels[i] == 0.0f);

  const auto sq = encode_gray({{0.1f, 0.2f, 0.3f, 0.4f}, 0});
  CHECK(sq.side == 2);
  CHECK(sq.pad_count == 0);
  CHECK(sq.at(0, 0) == 0.1f);
  CHECK(sq.at(0, 1) == 0.2f);
  CHECK(sq.at(1, 0) == 0.3f);
  CHECK(sq.at(1, 1) == 0.4f);

  const auto three = encode_gray({{0.7f, 0.8f, 0.9f}, 0});
  CHECK(three.pixels == std::vector<float>{0.7f, 0.8f, 0.9f, 0.0f});
  CHECK(three.pad_count == 1);
}

TEST_CASE("decode inverts encode exactly") {
  Rng rng(8);
  for (std::size_t p : {1u, 3u, 17u, 10725u}) {
    const auto f = random_normalized(p, rng);
    const auto img = encode_gray(f);
    CHECK(decode_gray(img, p).values == f.values);
  }
  const auto img = encode_gray({std::vector<float>(10725, 0.25f), 0});
  CHECK(decode_gray(img, 10725).values.size() == 10725);
  CHECK_THROWS_AS(decode_gray(img, 10817), InvalidArgument);
}

TEST_CASE("quantization rounds half away from zero") {
  CHECK(quantize(0.0f) == 0);
  CHECK(quantize(1.0f) == 255);
  CHECK(quantize(0.5f) == 128);
  for (int k = 0; k <= 255; ++k) {
    const float v = static_cast<float>(k) / 255.0f;
    CHECK(quantize(v) == k);
  }
  // Independent oracle: floor(v * 255 + 0.5) evaluated in long double.
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const float v = static_cast<float>(rng.uniform(0.0, 1.0));
    const auto expect = static_cast<int>(std::floor(static_cast<long double>(v) * 255.0L + 0.5L));
    REQUIRE(quantize(v) == expect);
  }
}

TEST_CASE("pgm output matches the golden bytes") {
  testing::TempDir dir("pgm");
  const std::vector<float> vals{0.0f, 1.0f,    0.5f,  0.25f, 0.75f,        0.1f, 0.2f,
                                0.3f, 0.9f,    0.001f, 0.999f, 0.0019607843f, 0.6f, 0.123f};
  const auto img = encode_gray({vals, 0});
  REQUIRE(img.side == 4);
  export_image(img, dir / "g.pgm", ImageFormat::pgm);
  CHECK(detail::read_file(dir / "g.pgm") == detail::read_file(testing::fixture("golden_4x4.pgm")));
}

TEST_CASE("export then import round-trips the quantized bytes") {
  testing::TempDir dir("img");
  Rng rng(10);
  for (auto fmt : {ImageFormat::pgm, ImageFormat::png}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto f = random_normalized(10725, rng);
      const auto img = encode_gray(f);
      const auto path = dir / (fmt == ImageFormat::png ? "x.png" : "x.pgm");
      export_image(img, path, fmt);
      const auto back = import_image(path);
      REQUIRE(back.side == img.side);
      double worst = 0.0;
      for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        REQUIRE(back.pixels[i] == static_cast<float>(quantize(img.pixels[i])) / 255.0f);
        worst = std::max(worst, std::abs(static_cast<double>(back.pixels[i]) - img.pixels[i]));
      }
      // 1/510 plus float rounding of q / 255.
      CHECK(worst <= 1.0 / 510.0 + 1e-7);
      const auto again = dir / (fmt == ImageFormat::png ? "y.png" : "y.pgm");
      export_image(back, again, fmt);
      CHECK(detail::read_file(again) == detail::read_file(path));
    }
  }
}

TEST_CASE("png files are 8-bit grayscale") {
  testing::TempDir dir("png");
  export_image(encode_gray({{0.0f, 0.5f, 1.0f, 0.25f}, 0}), dir / "a.png", ImageFormat::png);
  const auto bytes = detail::read_file(dir / "a.png");
  REQUIRE(bytes.size() > 33);
  CHECK(bytes.substr(1, 3) == "PNG");
  CHECK(static_cast<unsigned char>(bytes[24]) == 8);  // bit depth
  CHECK(static_cast<unsigned char>(bytes[25]) == 0);  // color type: grayscale
}

TEST_CASE("image i/o failures are data errors") {
  const auto img = encode_gray({{0.5f}, 0});
  CHECK_THROWS_AS(export_image(img, "/nonexistent-dir/x.pgm", ImageFormat::pgm), DataError);
  CHECK_THROWS_AS(export_image(img, "/nonexistent-dir/x.png", ImageFormat::png), DataError);
  CHECK_THROWS_AS(import_image("/nonexistent-dir/x.pgm"), DataError);
}

TEST_CASE("area resize averages blocks") {
  GrayImage img;
  img.side = 4;
  img.pixels.resize(16);
  for (std::size_t i = 0; i < 16; ++i) img.pixels[i] = static_cast<float>(i) / 16.0f;
  CHECK(resize_area(img, 4) == img.pixels);
  const auto half = resize_area(img, 2);
  REQUIRE(half.size() == 4);
  CHECK(half[0] == doctest::Approx((0 + 1 + 4 + 5) / 64.0));
  CHECK(half[3] == doctest::Approx((10 + 11 + 14 + 15) / 64.0));

  // 3 -> 2 uses fractional coverage: output (0,0) covers rows/cols [0, 1.5).
  GrayImage three{3, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f}, 0, 0};
  const auto r = resize_area(three, 2);
  CHECK(r[0] == doctest::Approx((0.1 + 0.5 * 0.2 + 0.5 * 0.4 + 0.25 * 0.5) / 2.25).epsilon(1e-6));

  // Mean brightness is preserved.
  Rng rng(11);
  GrayImage big{104, std::vector<float>(104 * 104), 0, 0};
  for (auto& v : big.pixels) v = static_cast<float>(rng.uniform(0.0, 1.0));
  double m0 = 0, m1 = 0;
  for (float v : big.pixels) m0 += v;
  for (float v : resize_area(big, 52)) m1 += v;
  CHECK(m0 / (104.0 * 104.0) == doctest::Approx(m1 / (52.0 * 52.0)).epsilon(1e-6));
}

TEST_CASE("image tensor file round trip") {
  testing::TempDir dir("imgs");
  Rng rng(12);
  std::vector<GrayImage> imgs;
  for (std::uint32_t i = 0; i < 4; ++i) {
    auto f = random_normalized(30, rng);
    f.label = i;
    imgs.push_back(encode_gray(f));
  }
  save_images(imgs, 30, dir / "images.bin");
  CHECK(load_images(dir / "images.bin") == imgs);
  const auto bytes = detail::read_file(dir / "images.bin");
  CHECK(bytes.substr(0, 4) == "FDXI");
  detail::write_file(dir / "trunc.bin", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_images(dir / "trunc.bin"), DataError);
}

TEST_CASE("encode_dataset normalizes with the given stats") {
  const auto ds = random_dataset(6, 10, 13);
  const auto stats = fit_minmax(ds);
  const auto imgs = encode_dataset(ds, stats);
  REQUIRE(imgs.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(imgs[i] == encode_gray(normalize(ds.frames()[i], stats)));
  }
}
