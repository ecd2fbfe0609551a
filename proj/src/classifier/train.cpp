#include "faultdx/classifier/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "faultdx/error.hpp"
#include "faultdx/rng.hpp"

namespace faultdx::classifier {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch_size must be at least 1");
  if (epochs == 0) throw InvalidArgument("epochs must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (weight_decay_kind != "L2") throw InvalidArgument("only L2 weight decay is supported");
  if (!(weight_decay_coeff >= 0.0)) throw InvalidArgument("weight_decay_coeff must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"learning_rate", c.learning_rate},
           {"momentum", c.momentum},
           {"weight_decay", c.weight_decay_kind},
           {"weight_decay_coeff", c.weight_decay_coeff},
           {"use_warmup", c.use_warmup},
           {"warmup_steps", c.warmup_steps},
           {"seed", c.seed},
           {"anchor_ratio", c.anchor_ratio},
           {"anchor_scale", c.anchor_scale}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay_kind = j.value("weight_decay", d.weight_decay_kind);
  c.weight_decay_coeff = j.value("weight_decay_coeff", d.weight_decay_coeff);
  c.use_warmup = j.value("use_warmup", d.use_warmup);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.seed = j.value("seed", d.seed);
  c.anchor_ratio = j.value("anchor_ratio", d.anchor_ratio);
  c.anchor_scale = j.value("anchor_scale", d.anchor_scale);
  c.validate();
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (!cfg.use_warmup || cfg.warmup_steps == 0) return cfg.learning_rate;
  const double ramp = static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  return cfg.learning_rate * std::min(1.0, ramp);
}

ImageSet make_image_set(const std::vector<preprocess::GrayImage>& images, const std::vector<std::size_t>& indices,
                        std::size_t side) {
  ImageSet set;
  set.side = side;
  set.pixels.reserve(indices.size() * side * side);
  for (std::size_t i : indices) {
    const auto px = preprocess::resize_area(images.at(i), side);
    set.pixels.insert(set.pixels.end(), px.begin(), px.end());
    set.labels.push_back(images[i].label);
  }
  return set;
}

ImageSet make_image_set(const std::vector<preprocess::GrayImage>& images, std::size_t side) {
  std::vector<std::size_t> all(images.size());
  std::iota(all.begin(), all.end(), 0);
  return make_image_set(images, all, side);
}

template <typename T>
void momentum_step(Network<T>& params, const Network<T>& grads, Network<T>& velocity, double lr, double momentum) {
  auto p = params.parameters();
  const auto g = grads.parameters();
  auto v = velocity.parameters();
  const auto m = static_cast<T>(momentum);
  const auto eta = static_cast<T>(lr);
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      v[t][i] = m * v[t][i] - eta * g[t][i];
      p[t][i] += v[t][i];
    }
  }
}

template void momentum_step<float>(Network<float>&, const Network<float>&, Network<float>&, double, double);
template void momentum_step<double>(Network<double>&, const Network<double>&, Network<double>&, double, double);

double accuracy(const Network<float>& net, const ImageSet& images) {
  if (images.size() == 0) return 0.0;
  const auto pred = predict_labels(net, std::span<const float>(images.pixels), images.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == images.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

TrainResult train(Network<float> model, const ImageSet& train_set, const ImageSet& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw InvalidArgument("training and validation sets must be non-empty");
  if (train_set.side != model.input_side() || val_set.side != model.input_side()) {
    throw InvalidArgument("image side does not match the model input side " + std::to_string(model.input_side()));
  }
  const std::size_t px = train_set.side * train_set.side;
  Network<float> velocity(model.arch());
  TrainResult result;
  result.best_val_accuracy = -1.0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> batch_pixels;
  std::vector<std::uint32_t> batch_labels;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      batch_pixels.resize(n * px);
      batch_labels.resize(n);
      for (std::size_t b = 0; b < n; ++b) {
        const auto img = train_set.image(order[start + b]);
        std::copy(img.begin(), img.end(), batch_pixels.begin() + static_cast<std::ptrdiff_t>(b * px));
        batch_labels[b] = train_set.labels[order[start + b]];
      }
      lr = lr_at(step, cfg);
      auto lg = loss_and_grad(model, std::span<const float>(batch_pixels), std::span<const std::uint32_t>(batch_labels),
                              cfg.weight_decay_coeff);
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("training diverged at step " + std::to_string(step) + " (loss " + std::to_string(lg.loss) + ")");
      }
      momentum_step(model, lg.grads, velocity, lr, cfg.momentum);
      loss_sum += lg.loss;
      ++batches;
      ++step;
    }
    const double val_acc = accuracy(model, val_set);
    result.history.push_back({epoch + 1, loss_sum / static_cast<double>(batches), val_acc, lr});
    if (val_acc > result.best_val_accuracy) {
      result.best_val_accuracy = val_acc;
      result.best_epoch = epoch + 1;
      result.model = model;
    }
  }
  result.steps = step;
  return result;
}

std::vector<float> rotate_quarter(std::span<const float> image, std::size_t side, unsigned turns) {
  std::vector<float> cur(image.begin(), image.end());
  std::vector<float> next(cur.size());
  for (unsigned t = 0; t < turns % 4; ++t) {
    // Counter-clockwise: new(r, c) = old(c, side - 1 - r).
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t c = 0; c < side; ++c) next[r * side + c] = cur[c * side + (side - 1 - r)];
    }
    cur.swap(next);
  }
  return cur;
}

namespace {

ImageSet rotations(const ImageSet& src) {
  ImageSet out;
  out.side = src.side;
  out.pixels.reserve(src.pixels.size() * 4);
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (unsigned turns = 0; turns < 4; ++turns) {
      const auto r = rotate_quarter(src.image(i), src.side, turns);
      out.pixels.insert(out.pixels.end(), r.begin(), r.end());
      out.labels.push_back(turns);
    }
  }
  return out;
}

}  // namespace

PretextResult pretrain_pretext(const Network<float>& model, const ImageSet& unlabeled, const ImageSet& heldout,
                               const TrainConfig& cfg) {
  Network<float> net = model;
  net.reset_head(4);
  auto trained = train(std::move(net), rotations(unlabeled), rotations(heldout), cfg);
  PretextResult out;
  out.backbone = std::move(trained.model);
  out.backbone.reset_head(model.n_classes());
  out.history = std::move(trained.history);
  out.heldout_accuracy = trained.best_val_accuracy;
  return out;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_accuracy,lr\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", h.epoch, h.train_loss, h.val_accuracy, h.lr);
    out << buf;
  }
  return out.str();
}

}  // namespace faultdx::classifier
