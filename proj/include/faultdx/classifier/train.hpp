#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "faultdx/classifier/network.hpp"
#include "faultdx/preprocess.hpp"

namespace faultdx::classifier {

/// Training regime. Defaults are the optimized hyperparameters reported for
/// the fault-diagnosis model (batch 32, momentum 0.9, L2, warm-up 500 steps,
/// learning rate 1.98e-3), except epochs which defaults to a desk-scale 30.
struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double learning_rate = 1.98e-3;
  double momentum = 0.9;
  std::string weight_decay_kind = "L2";
  double weight_decay_coeff = 1e-4;
  bool use_warmup = true;
  std::size_t warmup_steps = 500;
  std::uint64_t seed = 0;
  /// Recorded for completeness; detection-only fields with no consumer here.
  double anchor_ratio = 3.0;
  double anchor_scale = 1.0;

  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

/// Linear warm-up: lr * min(1, (step + 1) / warmup_steps), constant afterwards.
double lr_at(std::size_t step, const TrainConfig& cfg);

/// Images resampled to one side, stored contiguously.
struct ImageSet {
  std::size_t side = 0;
  std::vector<float> pixels;
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const float> image(std::size_t i) const {
    return {pixels.data() + i * side * side, side * side};
  }
};

ImageSet make_image_set(const std::vector<preprocess::GrayImage>& images, std::size_t side);

ImageSet make_image_set(const std::vector<preprocess::GrayImage>& images,
                        const std::vector<std::size_t>& indices, std::size_t side);

/// Heavy-ball update: v <- momentum * v - lr * g; theta <- theta + v.
template <typename T>
void momentum_step(Network<T>& params, const Network<T>& grads, Network<T>& velocity, double lr,
                   double momentum);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Network<float> model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::size_t steps = 0;
};

double accuracy(const Network<float>& net, const ImageSet& images);

/// Momentum SGD with seeded per-epoch shuffling. Returns the parameters of
/// the epoch with the best validation accuracy (earliest on ties). Throws
/// NumericalError naming the step when the loss becomes non-finite.
TrainResult train(Network<float> model, const ImageSet& train_set, const ImageSet& val_set,
                  const TrainConfig& cfg);

/// The four quarter-turn rotations of a square image, counter-clockwise.
std::vector<float> rotate_quarter(std::span<const float> image, std::size_t side, unsigned turns);

struct PretextResult {
  Network<float> backbone;
  std::vector<EpochRecord> history;
  double heldout_accuracy = 0.0;
};

/// Self-supervised 4-way rotation pretraining. The rotation head is dropped
/// and a zero head for `model.n_classes()` is attached to the returned
/// backbone. `heldout` images are used for the rotation validation accuracy.
PretextResult pretrain_pretext(const Network<float>& model, const ImageSet& unlabeled,
                               const ImageSet& heldout, const TrainConfig& cfg);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace faultdx::classifier
