#include "faultdx/classifier/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "faultdx/error.hpp"
#include "faultdx/rng.hpp"

namespace faultdx::classifier {

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)), data(numel(), T(0)) {}

template <typename T>
std::size_t Tensor<T>::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
Network<T>::Network(Architecture arch) : arch_(std::move(arch)) {
  for (const auto& spec : arch_.convs) {
    const auto out = static_cast<Eigen::Index>(spec.out_channels);
    const auto in = static_cast<Eigen::Index>(9 * spec.in_channels);
    convs_.push_back({spec, RowMatrix<T>::Zero(out, in), Vector<T>::Zero(out)});
  }
  reset_head(arch_.n_classes);
}

template <typename T>
void Network<T>::reset_head(std::size_t n_classes) {
  arch_.n_classes = n_classes;
  head_.weight = RowMatrix<T>::Zero(static_cast<Eigen::Index>(n_classes), static_cast<Eigen::Index>(arch_.feature_width()));
  head_.bias = Vector<T>::Zero(static_cast<Eigen::Index>(n_classes));
}

template <typename T>
std::vector<std::span<T>> Network<T>::parameters() {
  std::vector<std::span<T>> out;
  for (auto& c : convs_) {
    out.emplace_back(c.weight.data(), static_cast<std::size_t>(c.weight.size()));
    out.emplace_back(c.bias.data(), static_cast<std::size_t>(c.bias.size()));
  }
  out.emplace_back(head_.weight.data(), static_cast<std::size_t>(head_.weight.size()));
  out.emplace_back(head_.bias.data(), static_cast<std::size_t>(head_.bias.size()));
  return out;
}

template <typename T>
std::vector<std::span<const T>> Network<T>::parameters() const {
  std::vector<std::span<const T>> out;
  for (auto& c : convs_) {
    out.emplace_back(c.weight.data(), static_cast<std::size_t>(c.weight.size()));
    out.emplace_back(c.bias.data(), static_cast<std::size_t>(c.bias.size()));
  }
  out.emplace_back(head_.weight.data(), static_cast<std::size_t>(head_.weight.size()));
  out.emplace_back(head_.bias.data(), static_cast<std::size_t>(head_.bias.size()));
  return out;
}

template <typename T>
std::vector<ParamInfo> Network<T>::parameter_info() const {
  std::vector<ParamInfo> out;
  for (const auto& c : convs_) {
    out.push_back({{c.spec.out_channels, 3, 3, c.spec.in_channels}, true});
    out.push_back({{c.spec.out_channels}, false});
  }
  out.push_back({{arch_.n_classes, arch_.feature_width()}, true});
  out.push_back({{arch_.n_classes}, false});
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

template <typename T>
void Network<T>::set_zero() {
  for (auto p : parameters()) std::fill(p.begin(), p.end(), T(0));
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(arch_);
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    out.convs()[i].weight = convs_[i].weight.template cast<U>();
    out.convs()[i].bias = convs_[i].bias.template cast<U>();
  }
  out.head().weight = head_.weight.template cast<U>();
  out.head().bias = head_.bias.template cast<U>();
  return out;
}

template <typename T>
bool Network<T>::operator==(const Network& other) const {
  if (!(arch_ == other.arch_)) return false;
  const auto a = parameters();
  const auto b = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::equal(a[i].begin(), a[i].end(), b[i].begin(), b[i].end())) return false;
  }
  return true;
}

template <typename T>
Network<T> build_model(const ScalingConfig& scaling, std::size_t n_classes, std::uint64_t seed) {
  Network<T> net(make_architecture(scaling, n_classes));
  Rng rng(seed);
  for (auto& c : net.convs()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(9 * c.spec.in_channels));
    for (Eigen::Index i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
  return net;
}

namespace {

template <typename T>
void im2col(const ColMatrix<T>& in, std::size_t cin, std::size_t side, std::size_t batch, std::size_t stride,
            std::size_t out_side, ColMatrix<T>& cols) {
  const auto rows = static_cast<Eigen::Index>(9 * cin);
  cols.setZero(rows, static_cast<Eigen::Index>(batch * out_side * out_side));
  const auto c = static_cast<Eigen::Index>(cin);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < out_side; ++oy) {
      for (std::size_t ox = 0; ox < out_side; ++ox) {
        const auto j = static_cast<Eigen::Index>((b * out_side + oy) * out_side + ox);
        T* dst = cols.col(j).data();
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(side)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(side)) continue;
            const auto src = static_cast<Eigen::Index>((b * side + static_cast<std::size_t>(iy)) * side + static_cast<std::size_t>(ix));
            std::copy_n(in.col(src).data(), c, dst + (ky * 3 + kx) * cin);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ColMatrix<T>& cols, std::size_t cin, std::size_t side, std::size_t batch, std::size_t stride,
            std::size_t out_side, ColMatrix<T>& grad_in) {
  grad_in.setZero(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(batch * side * side));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < out_side; ++oy) {
      for (std::size_t ox = 0; ox < out_side; ++ox) {
        const auto j = static_cast<Eigen::Index>((b * out_side + oy) * out_side + ox);
        const T* src = cols.col(j).data();
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(side)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(side)) continue;
            const auto dst = static_cast<Eigen::Index>((b * side + static_cast<std::size_t>(iy)) * side + static_cast<std::size_t>(ix));
            T* d = grad_in.col(dst).data();
            const T* s = src + (ky * 3 + kx) * cin;
            for (std::size_t k = 0; k < cin; ++k) d[k] += s[k];
          }
        }
      }
    }
  }
}

template <typename T>
double l2_penalty(const Network<T>& net) {
  double acc = 0.0;
  for (const auto& c : net.convs()) acc += c.weight.template cast<double>().squaredNorm();
  acc += net.head().weight.template cast<double>().squaredNorm();
  return acc;
}

/// Mean cross-entropy of the logits columns; optionally writes dL/dlogits.
template <typename T>
double cross_entropy(const ColMatrix<T>& logits, std::span<const std::uint32_t> labels, ColMatrix<T>* grad) {
  const auto classes = logits.rows();
  const auto batch = logits.cols();
  if (grad != nullptr) grad->resize(classes, batch);
  double loss = 0.0;
  std::vector<double> z(static_cast<std::size_t>(classes));
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto label = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]);
    if (label >= classes) throw InvalidArgument("label out of range for the model head");
    for (Eigen::Index c = 0; c < classes; ++c) z[static_cast<std::size_t>(c)] = logits(c, b);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
      v = std::exp(v - m);
      sum += v;
    }
    loss += std::log(sum) + m - static_cast<double>(logits(label, b));
    if (grad != nullptr) {
      for (Eigen::Index c = 0; c < classes; ++c) {
        const double p = z[static_cast<std::size_t>(c)] / sum - (c == label ? 1.0 : 0.0);
        (*grad)(c, b) = static_cast<T>(p / static_cast<double>(batch));
      }
    }
  }
  return loss / static_cast<double>(batch);
}

}  // namespace

template <typename T>
ColMatrix<T> forward_logits(const Network<T>& net, std::span<const T> images, std::size_t batch,
                            ForwardCache<T>* cache) {
  const std::size_t side = net.input_side();
  if (batch == 0 || images.size() != batch * side * side) {
    throw InvalidArgument("image batch does not match the model input side " + std::to_string(side));
  }
  ColMatrix<T> act = Eigen::Map<const ColMatrix<T>>(images.data(), 1, static_cast<Eigen::Index>(images.size()));
  ColMatrix<T> cols;
  std::size_t s = side;
  if (cache != nullptr) {
    cache->batch = batch;
    cache->inputs.clear();
    cache->activations.clear();
  }
  for (const auto& layer : net.convs()) {
    const std::size_t out_side = conv_output_side(s, layer.spec.stride);
    im2col(act, layer.spec.in_channels, s, batch, layer.spec.stride, out_side, cols);
    ColMatrix<T> z = layer.weight * cols;
    z.colwise() += layer.bias;
    act = z.cwiseMax(T(0));
    s = out_side;
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(cols));
      cache->activations.push_back(act);
    }
  }
  const auto hw = static_cast<Eigen::Index>(s * s);
  ColMatrix<T> features(act.rows(), static_cast<Eigen::Index>(batch));
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b) {
    features.col(b) = act.middleCols(b * hw, hw).rowwise().sum() / static_cast<T>(hw);
  }
  ColMatrix<T> logits = net.head().weight * features;
  logits.colwise() += net.head().bias;
  if (cache != nullptr) {
    cache->features = features;
    cache->logits = logits;
  }
  return logits;
}

template <typename T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch) {
  const std::size_t s = net.input_side();
  if (batch.shape.size() != 4 || batch.shape[1] != 1 || batch.shape[2] != s || batch.shape[3] != s) {
    throw InvalidArgument("forward expects a [B, 1, " + std::to_string(s) + ", " + std::to_string(s) + "] tensor");
  }
  const auto logits = forward_logits(net, std::span<const T>(batch.data), batch.shape[0]);
  Tensor<T> out({batch.shape[0], net.n_classes()});
  for (std::size_t b = 0; b < batch.shape[0]; ++b) {
    for (std::size_t c = 0; c < net.n_classes(); ++c) {
      out.data[b * net.n_classes() + c] = logits(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b));
    }
  }
  return out;
}

template <typename T>
LossAndGrad<T> loss_and_grad(const Network<T>& net, std::span<const T> images, std::span<const std::uint32_t> labels,
                             double weight_decay) {
  const std::size_t batch = labels.size();
  ForwardCache<T> cache;
  const auto logits = forward_logits(net, images, batch, &cache);

  LossAndGrad<T> out{0.0, Network<T>(net.arch())};
  ColMatrix<T> dlogits;
  out.loss = cross_entropy(logits, labels, &dlogits);
  out.grads.head().weight = dlogits * cache.features.transpose();
  out.grads.head().bias = dlogits.rowwise().sum();
  const ColMatrix<T> dfeatures = net.head().weight.transpose() * dlogits;

  const auto& last = cache.activations.back();
  const Eigen::Index hw = last.cols() / static_cast<Eigen::Index>(batch);
  ColMatrix<T> dact(last.rows(), last.cols());
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b) {
    dact.middleCols(b * hw, hw) = (dfeatures.col(b) / static_cast<T>(hw)).replicate(1, hw);
  }

  std::vector<std::size_t> sides{net.input_side()};
  for (auto s : net.arch().output_sides()) sides.push_back(s);
  for (std::size_t l = net.convs().size(); l-- > 0;) {
    const auto& layer = net.convs()[l];
    const ColMatrix<T> dz = (dact.array() * (cache.activations[l].array() > T(0)).template cast<T>()).matrix();
    out.grads.convs()[l].weight = dz * cache.inputs[l].transpose();
    out.grads.convs()[l].bias = dz.rowwise().sum();
    if (l > 0) {
      const ColMatrix<T> dcols = layer.weight.transpose() * dz;
      col2im(dcols, layer.spec.in_channels, sides[l], batch, layer.spec.stride, sides[l + 1], dact);
    }
  }

  if (weight_decay > 0.0) {
    out.loss += 0.5 * weight_decay * l2_penalty(net);
    const auto lambda = static_cast<T>(weight_decay);
    for (std::size_t l = 0; l < net.convs().size(); ++l) out.grads.convs()[l].weight += lambda * net.convs()[l].weight;
    out.grads.head().weight += lambda * net.head().weight;
  }
  return out;
}

template <typename T>
double loss_only(const Network<T>& net, std::span<const T> images, std::span<const std::uint32_t> labels,
                 double weight_decay) {
  const auto logits = forward_logits(net, images, labels.size());
  double loss = cross_entropy<T>(logits, labels, nullptr);
  if (weight_decay > 0.0) loss += 0.5 * weight_decay * l2_penalty(net);
  return loss;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (auto& v : p) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::uint32_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<std::uint32_t>(best);
}

template <typename T>
ClassPrediction predict(const Network<T>& net, std::span<const T> image) {
  const auto logits = forward_logits(net, image, 1);
  std::vector<double> z(static_cast<std::size_t>(logits.rows()));
  for (std::size_t c = 0; c < z.size(); ++c) z[c] = logits(static_cast<Eigen::Index>(c), 0);
  ClassPrediction out;
  out.probabilities = softmax(z);
  out.label = argmax(z);
  return out;
}

template <typename T>
std::vector<std::uint32_t> predict_labels(const Network<T>& net, std::span<const T> images, std::size_t count) {
  constexpr std::size_t kChunk = 64;
  const std::size_t px = net.input_side() * net.input_side();
  if (images.size() != count * px) throw InvalidArgument("image buffer does not match the model input side");
  std::vector<std::uint32_t> out;
  out.reserve(count);
  std::vector<double> z(net.n_classes());
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t n = std::min(kChunk, count - start);
    const auto logits = forward_logits(net, images.subspan(start * px, n * px), n);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < z.size(); ++c) z[c] = logits(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b));
      out.push_back(argmax(z));
    }
  }
  return out;
}

#define FAULTDX_INSTANTIATE(T)                                                                                          \
  template struct Tensor<T>;                                                                                            \
  template class Network<T>;                                                                                            \
  template Network<T> build_model<T>(const ScalingConfig&, std::size_t, std::uint64_t);                                 \
  template ColMatrix<T> forward_logits<T>(const Network<T>&, std::span<const T>, std::size_t, ForwardCache<T>*);        \
  template Tensor<T> forward<T>(const Network<T>&, const Tensor<T>&);                                                   \
  template LossAndGrad<T> loss_and_grad<T>(const Network<T>&, std::span<const T>, std::span<const std::uint32_t>,       \
                                           double);                                                                     \
  template double loss_only<T>(const Network<T>&, std::span<const T>, std::span<const std::uint32_t>, double);          \
  template ClassPrediction predict<T>(const Network<T>&, std::span<const T>);                                           \
  template std::vector<std::uint32_t> predict_labels<T>(const Network<T>&, std::span<const T>, std::size_t);

FAULTDX_INSTANTIATE(float)
FAULTDX_INSTANTIATE(double)
#undef FAULTDX_INSTANTIATE

template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;

}  // namespace faultdx::classifier
