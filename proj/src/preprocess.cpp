#include "faultdx/preprocess.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "faultdx/detail/binary_io.hpp"
#include "faultdx/error.hpp"

namespace faultdx::preprocess {

using nlohmann::json;

void to_json(json& j, const NormalizationStats& s) {
  j = json{{"min", s.min}, {"max", s.max}, {"constant_channels", s.constant_channels}};
}

void from_json(const json& j, NormalizationStats& s) {
  j.at("min").get_to(s.min);
  j.at("max").get_to(s.max);
  j.at("constant_channels").get_to(s.constant_channels);
  if (s.min.size() != s.max.size()) throw DataError("stats.json: min and max lengths differ");
}

NormalizationStats fit_minmax(const dataset::Dataset& train) {
  if (train.size() == 0) throw DataError("cannot fit normalization on an empty dataset");
  const std::size_t p = train.n_params();
  NormalizationStats stats;
  stats.min.assign(p, std::numeric_limits<double>::infinity());
  stats.max.assign(p, -std::numeric_limits<double>::infinity());
  for (const auto& f : train.frames()) {
    for (std::size_t i = 0; i < p; ++i) {
      const double v = f.values[i];
      stats.min[i] = std::min(stats.min[i], v);
      stats.max[i] = std::max(stats.max[i], v);
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    if (stats.max[i] == stats.min[i]) stats.constant_channels.push_back(i);
  }
  return stats;
}

NormalizedFrame normalize(const dataset::SensorFrame& frame, const NormalizationStats& stats) {
  if (frame.values.size() != stats.size()) {
    throw InvalidArgument("frame has " + std::to_string(frame.values.size()) + " channels, stats have " +
                          std::to_string(stats.size()));
  }
  NormalizedFrame out;
  out.label = frame.label;
  out.values.resize(frame.values.size());
  for (std::size_t i = 0; i < frame.values.size(); ++i) {
    const double range = stats.max[i] - stats.min[i];
    double v = 0.0;
    if (range > 0.0) v = std::clamp((static_cast<double>(frame.values[i]) - stats.min[i]) / range, 0.0, 1.0);
    out.values[i] = static_cast<float>(v);
  }
  return out;
}

std::size_t image_side(std::size_t n_params) {
  auto n = static_cast<std::size_t>(std::sqrt(static_cast<double>(n_params)));
  while (n * n < n_params) ++n;
  while (n > 0 && (n - 1) * (n - 1) >= n_params) --n;
  return n;
}

GrayImage encode_gray(const NormalizedFrame& frame) {
  GrayImage img;
  img.side = image_side(frame.values.size());
  img.pixels.assign(img.side * img.side, 0.0F);
  std::copy(frame.values.begin(), frame.values.end(), img.pixels.begin());
  img.pad_count = img.pixels.size() - frame.values.size();
  img.label = frame.label;
  return img;
}

NormalizedFrame decode_gray(const GrayImage& img, std::size_t n_params) {
  if (n_params > img.side * img.side) {
    throw InvalidArgument("cannot decode " + std::to_string(n_params) + " channels from a " +
                          std::to_string(img.side) + "x" + std::to_string(img.side) + " image");
  }
  NormalizedFrame out;
  out.label = img.label;
  out.values.assign(img.pixels.begin(), img.pixels.begin() + static_cast<std::ptrdiff_t>(n_params));
  return out;
}

std::vector<float> resize_area(const GrayImage& img, std::size_t side) {
  if (side == img.side) return img.pixels;
  if (side == 0) throw InvalidArgument("resize target side must be positive");
  const std::size_t src = img.side;
  const double ratio = static_cast<double>(src) / static_cast<double>(side);
  // Fractional coverage weights of source cells for each destination cell.
  struct Span {
    std::size_t first;
    std::vector<double> weights;
  };
  std::vector<Span> spans(side);
  for (std::size_t d = 0; d < side; ++d) {
    const double lo = static_cast<double>(d) * ratio;
    const double hi = static_cast<double>(d + 1) * ratio;
    auto first = static_cast<std::size_t>(std::floor(lo));
    auto last = std::min(src, static_cast<std::size_t>(std::ceil(hi)));
    spans[d].first = first;
    for (std::size_t s = first; s < last; ++s) {
      const double overlap = std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
      spans[d].weights.push_back(overlap / ratio);
    }
  }
  std::vector<float> out(side * side);
  for (std::size_t dy = 0; dy < side; ++dy) {
    for (std::size_t dx = 0; dx < side; ++dx) {
      double acc = 0.0;
      const auto& sy = spans[dy];
      const auto& sx = spans[dx];
      for (std::size_t a = 0; a < sy.weights.size(); ++a) {
        const float* row = img.pixels.data() + (sy.first + a) * src + sx.first;
        double racc = 0.0;
        for (std::size_t b = 0; b < sx.weights.size(); ++b) racc += sx.weights[b] * row[b];
        acc += sy.weights[a] * racc;
      }
      out[dy * side + dx] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  }
  return out;
}

std::uint8_t quantize(float v) {
  const double q = std::round(static_cast<double>(std::clamp(v, 0.0F, 1.0F)) * 255.0);
  return static_cast<std::uint8_t>(q);
}

namespace {

void write_png(const GrayImage& img, const std::filesystem::path& path) {
  std::unique_ptr<FILE, decltype(&std::fclose)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  const auto side = static_cast<png_uint_32>(img.side);
  png_set_IHDR(png, info, side, side, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(img.side);
  for (std::size_t y = 0; y < img.side; ++y) {
    for (std::size_t x = 0; x < img.side; ++x) row[x] = quantize(img.at(y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, decltype(&std::fclose)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot read " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG decoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8 || w != h) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + " is not a square 8-bit grayscale PNG");
  }
  GrayImage img;
  img.side = w;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  std::vector<png_byte> row(w);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) img.pixels[y * w + x] = static_cast<float>(row[x]) / 255.0F;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

GrayImage read_pgm(const std::string& bytes, const std::filesystem::path& path) {
  // Header: "P5" whitespace width whitespace height whitespace maxval, one whitespace byte.
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw DataError(path.string() + ": malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw DataError(path.string() + " is not a binary PGM");
  pos = 2;
  const std::size_t w = read_int();
  const std::size_t h = read_int();
  const std::size_t maxval = read_int();
  ++pos;
  if (maxval != 255 || w != h) throw DataError(path.string() + ": only square 8-bit PGM is supported");
  if (bytes.size() - pos < w * h) throw DataError(path.string() + ": truncated PGM data");
  GrayImage img;
  img.side = w;
  img.pixels.resize(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0F;
  }
  return img;
}

}  // namespace

void export_image(const GrayImage& img, const std::filesystem::path& path, ImageFormat format) {
  if (format == ImageFormat::png) {
    write_png(img, path);
    return;
  }
  std::string out = "P5\n" + std::to_string(img.side) + " " + std::to_string(img.side) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) out.push_back(static_cast<char>(quantize(v)));
  detail::write_file(path, out);
}

GrayImage import_image(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes.compare(1, 3, "PNG") == 0) {
    return read_png(path);
  }
  return read_pgm(bytes, path);
}

void save_images(const std::vector<GrayImage>& images, std::size_t n_params, const std::filesystem::path& path) {
  if (images.empty()) throw InvalidArgument("no images to save");
  detail::ByteWriter w;
  w.bytes("FDXI");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(images.size()));
  w.u32(static_cast<std::uint32_t>(images.front().side));
  w.u32(static_cast<std::uint32_t>(n_params));
  for (const auto& img : images) {
    if (img.side != images.front().side) throw InvalidArgument("images differ in size");
    w.u16(static_cast<std::uint16_t>(img.label));
    for (float v : img.pixels) w.f32(v);
  }
  detail::write_file(path, w.str());
}

std::vector<GrayImage> load_images(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader r(bytes);
  if (r.bytes(4) != "FDXI") throw DataError(path.string() + " is not an image tensor file");
  if (r.u32() != 1) throw DataError(path.string() + ": unsupported version");
  const std::size_t count = r.u32();
  const std::size_t side = r.u32();
  const std::size_t n_params = r.u32();
  if (n_params > side * side) throw DataError(path.string() + ": n_params exceeds image size");
  std::vector<GrayImage> out(count);
  for (auto& img : out) {
    img.side = side;
    img.pad_count = side * side - n_params;
    img.label = r.u16();
    img.pixels.resize(side * side);
    for (auto& v : img.pixels) v = r.f32();
  }
  return out;
}

std::vector<GrayImage> encode_dataset(const dataset::Dataset& ds, const NormalizationStats& stats) {
  std::vector<GrayImage> out;
  out.reserve(ds.size());
  for (const auto& f : ds.frames()) out.push_back(encode_gray(normalize(f, stats)));
  return out;
}

}  // namespace faultdx::preprocess
