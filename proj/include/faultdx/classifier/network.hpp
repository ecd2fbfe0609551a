#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "faultdx/classifier/scaling.hpp"

namespace faultdx::classifier {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Dense row-major tensor.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t numel() const;
};

template <typename T>
struct ConvLayer {
  ConvSpec spec;
  /// [out, 3, 3, in] flattened as out x (9 * in), row-major.
  RowMatrix<T> weight;
  Vector<T> bias;
};

template <typename T>
struct DenseLayer {
  RowMatrix<T> weight;  // [classes, features]
  Vector<T> bias;
};

struct ParamInfo {
  std::vector<std::size_t> shape;
  bool is_weight = false;
};

/// Conv stack with global average pooling and an affine head. Gradients share
/// this type.
template <typename T>
class Network {
 public:
  Network() = default;
  explicit Network(Architecture arch);

  const Architecture& arch() const noexcept { return arch_; }
  std::size_t n_classes() const noexcept { return arch_.n_classes; }
  std::size_t input_side() const noexcept { return arch_.input_side; }

  std::vector<ConvLayer<T>>& convs() noexcept { return convs_; }
  const std::vector<ConvLayer<T>>& convs() const noexcept { return convs_; }
  DenseLayer<T>& head() noexcept { return head_; }
  const DenseLayer<T>& head() const noexcept { return head_; }

  /// Parameter tensors in declaration order: each conv's weight then bias,
  /// then head weight and bias.
  std::vector<std::span<T>> parameters();
  std::vector<std::span<const T>> parameters() const;
  std::vector<ParamInfo> parameter_info() const;
  std::size_t parameter_count() const;

  void set_zero();

  /// Replaces the head with a zero-initialized one of `n_classes` outputs.
  void reset_head(std::size_t n_classes);

  template <typename U>
  Network<U> cast() const;

  bool operator==(const Network&) const;

 private:
  Architecture arch_;
  std::vector<ConvLayer<T>> convs_;
  DenseLayer<T> head_;
};

/// He-uniform conv weights (bound sqrt(6 / fan_in)), zero biases, zero head.
/// Throws InvalidArgument when n_classes < 2 or the scaling is invalid.
template <typename T>
Network<T> build_model(const ScalingConfig& scaling, std::size_t n_classes, std::uint64_t seed);

/// Activations kept for the backward pass.
template <typename T>
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<ColMatrix<T>> inputs;  // im2col matrices per conv layer
  std::vector<ColMatrix<T>> activations;  // post-ReLU, channels x (batch * side^2)
  ColMatrix<T> features;  // channels x batch
  ColMatrix<T> logits;  // classes x batch
};

/// Batch of B images of S * S pixels each, row-major, contiguous.
template <typename T>
ColMatrix<T> forward_logits(const Network<T>& net, std::span<const T> images, std::size_t batch,
                            ForwardCache<T>* cache = nullptr);

/// Tensor[B, 1, S, S] -> Tensor[B, C]. Throws InvalidArgument on shape mismatch.
template <typename T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  Network<T> grads;
};

/// Mean softmax cross-entropy plus weight_decay / 2 * sum ||W||^2 over conv
/// and head weights (biases excluded), with exact gradients.
template <typename T>
LossAndGrad<T> loss_and_grad(const Network<T>& net, std::span<const T> images,
                             std::span<const std::uint32_t> labels, double weight_decay);

template <typename T>
double loss_only(const Network<T>& net, std::span<const T> images,
                 std::span<const std::uint32_t> labels, double weight_decay);

struct ClassPrediction {
  std::uint32_t label = 0;
  std::vector<double> probabilities;
};

/// Softmax probabilities, argmax with lowest-index tie-break.
template <typename T>
ClassPrediction predict(const Network<T>& net, std::span<const T> image);

/// Predicted labels for `count` images, evaluated in chunks.
template <typename T>
std::vector<std::uint32_t> predict_labels(const Network<T>& net, std::span<const T> images,
                                          std::size_t count);

/// Max-shifted softmax.
std::vector<double> softmax(std::span<const double> logits);

std::uint32_t argmax(std::span<const double> values);

}  // namespace faultdx::classifier
