#pragma once

#include <filesystem>
#include <string>

#include "faultdx/classifier/network.hpp"

namespace faultdx::classifier {

/// model.bin: magic "FDXM", u32 version, scaling (u32 phi, f64 alpha, beta,
/// gamma), u32 input_side, u32 n_classes, u32 layer count, then per layer
/// u32 kind (1 conv3x3, 2 dense), u32 stride, u32 rank and u32 dims of the
/// weight, followed by all parameters as little-endian float32 in
/// declaration order.
std::string serialize_model(const Network<float>& net);
Network<float> deserialize_model(const std::string& bytes);

void save_model(const Network<float>& net, const std::filesystem::path& path);
Network<float> load_model(const std::filesystem::path& path);

}  // namespace faultdx::classifier
