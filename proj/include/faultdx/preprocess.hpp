#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "faultdx/dataset.hpp"

namespace faultdx::preprocess {

/// Per-channel extrema fitted on training frames only.
struct NormalizationStats {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<std::size_t> constant_channels;

  std::size_t size() const noexcept { return min.size(); }

  bool operator==(const NormalizationStats&) const = default;
};

void to_json(nlohmann::json& j, const NormalizationStats& stats);
void from_json(const nlohmann::json& j, NormalizationStats& stats);

struct NormalizedFrame {
  std::vector<float> values;
  std::uint32_t label = 0;

  bool operator==(const NormalizedFrame&) const = default;
};

/// Square single-channel image, row-major, values in [0, 1].
struct GrayImage {
  std::size_t side = 0;
  std::vector<float> pixels;
  std::size_t pad_count = 0;
  std::uint32_t label = 0;

  float at(std::size_t row, std::size_t col) const { return pixels[row * side + col]; }

  bool operator==(const GrayImage&) const = default;
};

NormalizationStats fit_minmax(const dataset::Dataset& train);

/// x' = (x - min) / (max - min), clamped to [0, 1]. Constant channels map to 0.
NormalizedFrame normalize(const dataset::SensorFrame& frame, const NormalizationStats& stats);

/// Smallest N with N * N >= P.
std::size_t image_side(std::size_t n_params);

/// Lays the channels out row-major in channel order, padding the tail with 0.
GrayImage encode_gray(const NormalizedFrame& frame);

NormalizedFrame decode_gray(const GrayImage& img, std::size_t n_params);

/// Area-averaging resample to `side` x `side`. Identity when sizes match.
std::vector<float> resize_area(const GrayImage& img, std::size_t side);

enum class ImageFormat { pgm, png };

/// q = round_half_away_from_zero(v * 255).
std::uint8_t quantize(float v);

/// Throws DataError on I/O failure.
void export_image(const GrayImage& img, const std::filesystem::path& path, ImageFormat format);

/// Reads an 8-bit PGM (P5) or grayscale PNG; pixels become q / 255.
GrayImage import_image(const std::filesystem::path& path);

/// Encoded image tensor file: magic "FDXI", u32 version, u32 count, u32 side,
/// u32 n_params, then per image a u16 label and side * side float32 pixels.
void save_images(const std::vector<GrayImage>& images, std::size_t n_params,
                 const std::filesystem::path& path);

std::vector<GrayImage> load_images(const std::filesystem::path& path);

/// Normalizes and encodes every frame of a dataset.
std::vector<GrayImage> encode_dataset(const dataset::Dataset& ds, const NormalizationStats& stats);

}  // namespace faultdx::preprocess
