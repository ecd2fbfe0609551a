#include "faultdx/classifier/scaling.hpp"

#include <cmath>

#include "faultdx/error.hpp"

namespace faultdx::classifier {

using nlohmann::json;

double ScalingConfig::depth_mult() const { return std::pow(alpha, static_cast<double>(phi)); }
double ScalingConfig::width_mult() const { return std::pow(beta, static_cast<double>(phi)); }
double ScalingConfig::resolution_mult() const { return std::pow(gamma, static_cast<double>(phi)); }

void ScalingConfig::validate() const {
  if (!(alpha > 1.0) || !(beta > 1.0) || !(gamma > 1.0)) {
    throw InvalidArgument("scaling bases alpha, beta, gamma must all exceed 1");
  }
  const double base = flops_base();
  if (base < 1.8 || base > 2.2) {
    throw InvalidArgument("alpha * beta^2 * gamma^2 = " + std::to_string(base) + " lies outside [1.8, 2.2]");
  }
  if (phi > 16) throw InvalidArgument("phi must be at most 16");
}

void to_json(json& j, const ScalingConfig& s) {
  j = json{{"phi", s.phi}, {"alpha", s.alpha}, {"beta", s.beta}, {"gamma", s.gamma}};
}

void from_json(const json& j, ScalingConfig& s) {
  ScalingConfig d;
  s.phi = j.value("phi", d.phi);
  s.alpha = j.value("alpha", d.alpha);
  s.beta = j.value("beta", d.beta);
  s.gamma = j.value("gamma", d.gamma);
  s.validate();
}

std::size_t round_channels(double x) {
  const auto eighths = static_cast<std::size_t>(std::floor(x / 8.0 + 1e-9));
  return std::max<std::size_t>(1, eighths) * 8;
}

std::size_t round_even(double x) {
  const auto halves = static_cast<std::size_t>(std::llround(x / 2.0));
  return std::max<std::size_t>(1, halves) * 2;
}

std::vector<std::size_t> Architecture::output_sides() const {
  std::vector<std::size_t> sides;
  std::size_t s = input_side;
  for (const auto& c : convs) {
    s = conv_output_side(s, c.stride);
    sides.push_back(s);
  }
  return sides;
}

std::vector<std::size_t> Architecture::stage_repeats() const {
  // Stem is convs[0]; stage boundaries sit at the stride-2 blocks after stage one.
  std::vector<std::size_t> repeats{0};
  for (std::size_t i = 1; i < convs.size(); ++i) {
    if (i > 1 && convs[i].stride == 2) repeats.push_back(0);
    ++repeats.back();
  }
  return repeats;
}

Architecture make_architecture(const ScalingConfig& scaling, std::size_t n_classes, std::size_t base_side) {
  scaling.validate();
  if (n_classes < 2) throw InvalidArgument("a classifier needs at least 2 classes");
  Architecture arch;
  arch.scaling = scaling;
  arch.n_classes = n_classes;
  arch.input_side = round_even(static_cast<double>(base_side) * scaling.resolution_mult());
  const double w = scaling.width_mult();
  const double d = scaling.depth_mult();
  std::size_t channels = round_channels(static_cast<double>(kBaseStemChannels) * w);
  arch.convs.push_back({1, channels, 2});
  for (std::size_t stage = 0; stage < std::size(kBaseStages); ++stage) {
    const auto repeats = static_cast<std::size_t>(std::ceil(static_cast<double>(kBaseStages[stage].repeats) * d - 1e-9));
    const std::size_t out = round_channels(static_cast<double>(kBaseStages[stage].channels) * w);
    for (std::size_t r = 0; r < repeats; ++r) {
      arch.convs.push_back({channels, out, (stage > 0 && r == 0) ? 2U : 1U});
      channels = out;
    }
  }
  return arch;
}

std::uint64_t estimate_flops(const Architecture& arch) {
  std::uint64_t macs = 0;
  std::size_t side = arch.input_side;
  for (const auto& c : arch.convs) {
    side = conv_output_side(side, c.stride);
    macs += 9ULL * c.in_channels * c.out_channels * side * side;
  }
  macs += static_cast<std::uint64_t>(arch.feature_width()) * arch.n_classes;
  return macs;
}

}  // namespace faultdx::classifier
