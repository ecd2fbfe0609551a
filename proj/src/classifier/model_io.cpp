#include "faultdx/classifier/model_io.hpp"

#include "faultdx/detail/binary_io.hpp"
#include "faultdx/error.hpp"

namespace faultdx::classifier {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kConv = 1;
constexpr std::uint32_t kDense = 2;

}  // namespace

std::string serialize_model(const Network<float>& net) {
  detail::ByteWriter w;
  w.bytes("FDXM");
  w.u32(kVersion);
  const auto& arch = net.arch();
  w.u32(arch.scaling.phi);
  w.f64(arch.scaling.alpha);
  w.f64(arch.scaling.beta);
  w.f64(arch.scaling.gamma);
  w.u32(static_cast<std::uint32_t>(arch.input_side));
  w.u32(static_cast<std::uint32_t>(arch.n_classes));
  w.u32(static_cast<std::uint32_t>(arch.convs.size() + 1));
  for (const auto& c : arch.convs) {
    w.u32(kConv);
    w.u32(static_cast<std::uint32_t>(c.stride));
    w.u32(4);
    for (auto d : {c.out_channels, std::size_t{3}, std::size_t{3}, c.in_channels}) w.u32(static_cast<std::uint32_t>(d));
  }
  w.u32(kDense);
  w.u32(1);
  w.u32(2);
  w.u32(static_cast<std::uint32_t>(arch.n_classes));
  w.u32(static_cast<std::uint32_t>(arch.feature_width()));
  for (const auto& p : net.parameters()) {
    for (float v : p) w.f32(v);
  }
  return w.take();
}

Network<float> deserialize_model(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4) != "FDXM") throw DataError("not a model file (bad magic)");
  if (const auto v = r.u32(); v != kVersion) throw DataError("unsupported model version " + std::to_string(v));
  Architecture arch;
  arch.scaling.phi = r.u32();
  arch.scaling.alpha = r.f64();
  arch.scaling.beta = r.f64();
  arch.scaling.gamma = r.f64();
  arch.input_side = r.u32();
  arch.n_classes = r.u32();
  const std::uint32_t layers = r.u32();
  if (layers < 2) throw DataError("model file has too few layers");
  for (std::uint32_t l = 0; l + 1 < layers; ++l) {
    if (r.u32() != kConv) throw DataError("expected a conv layer in the model table");
    ConvSpec spec;
    spec.stride = r.u32();
    if (r.u32() != 4) throw DataError("conv weight must be rank 4");
    spec.out_channels = r.u32();
    if (r.u32() != 3 || r.u32() != 3) throw DataError("only 3x3 kernels are supported");
    spec.in_channels = r.u32();
    arch.convs.push_back(spec);
  }
  if (r.u32() != kDense) throw DataError("expected the dense head last");
  r.u32();
  if (r.u32() != 2) throw DataError("dense weight must be rank 2");
  if (r.u32() != arch.n_classes || r.u32() != arch.feature_width()) throw DataError("head shape mismatch");
  if (arch.n_classes < 2 || arch.convs.empty()) throw DataError("model file describes an empty network");

  Network<float> net(arch);
  for (auto p : net.parameters()) {
    for (auto& v : p) v = r.f32();
  }
  if (r.remaining() != 0) throw DataError("trailing bytes after model parameters");
  return net;
}

void save_model(const Network<float>& net, const std::filesystem::path& path) {
  detail::write_file(path, serialize_model(net));
}

Network<float> load_model(const std::filesystem::path& path) { return deserialize_model(detail::read_file(path)); }

}  // namespace faultdx::classifier
