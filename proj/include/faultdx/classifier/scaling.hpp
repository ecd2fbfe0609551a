#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

namespace faultdx::classifier {

/// Compound-scaling coefficients: depth, width and input resolution grow as
/// alpha^phi, beta^phi and gamma^phi under alpha * beta^2 * gamma^2 ~ 2.
struct ScalingConfig {
  std::uint32_t phi = 0;
  double alpha = 1.2;
  double beta = 1.1;
  double gamma = 1.15;

  double depth_mult() const;
  double width_mult() const;
  double resolution_mult() const;

  /// alpha * beta^2 * gamma^2.
  double flops_base() const { return alpha * beta * beta * gamma * gamma; }

  /// Throws InvalidArgument unless alpha, beta, gamma > 1 and the FLOPs base
  /// lies in [1.8, 2.2].
  void validate() const;

  bool operator==(const ScalingConfig&) const = default;
};

void to_json(nlohmann::json& j, const ScalingConfig& s);
void from_json(const nlohmann::json& j, ScalingConfig& s);

inline constexpr std::size_t kBaseSide = 52;
inline constexpr std::size_t kBaseStemChannels = 16;

struct StageSpec {
  std::size_t repeats;
  std::size_t channels;
};

/// (repeats, channels) of the unscaled network.
inline constexpr StageSpec kBaseStages[] = {{1, 16}, {2, 32}, {2, 64}};

/// Largest multiple of 8 not above `x`, at least 8.
std::size_t round_channels(double x);

/// Nearest even integer to `x`, at least 2.
std::size_t round_even(double x);

/// One 3x3 convolution (pad 1) followed by bias and ReLU.
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;

  bool operator==(const ConvSpec&) const = default;
};

/// Layer chain of a scaled network: stem, stage blocks, pooled affine head.
struct Architecture {
  ScalingConfig scaling;
  std::size_t input_side = kBaseSide;
  std::vector<ConvSpec> convs;
  std::size_t n_classes = 0;

  std::size_t feature_width() const { return convs.back().out_channels; }
  /// Spatial side after each conv layer.
  std::vector<std::size_t> output_sides() const;
  /// Repeats actually used by each stage.
  std::vector<std::size_t> stage_repeats() const;

  bool operator==(const Architecture&) const = default;
};

Architecture make_architecture(const ScalingConfig& scaling, std::size_t n_classes,
                               std::size_t base_side = kBaseSide);

/// Multiply-accumulate count of every conv and affine layer at the input side.
std::uint64_t estimate_flops(const Architecture& arch);

/// Output side of a 3x3, pad-1 convolution.
constexpr std::size_t conv_output_side(std::size_t side, std::size_t stride) {
  return (side - 1) / stride + 1;
}

}  // namespace faultdx::classifier
