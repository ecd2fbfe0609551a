#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>

#include "faultdx/classifier/model_io.hpp"
#include "faultdx/classifier/train.hpp"
#include "faultdx/error.hpp"
#include "faultdx/rng.hpp"
#include "reference_net.hpp"
#include "support.hpp"

using namespace faultdx;
using namespace faultdx::classifier;
using faultdx::testing::gradient_check;
using faultdx::testing::random_small_net;
using faultdx::testing::ReferenceNet;

namespace {

ImageSet toy_images(std::size_t n, std::uint64_t seed) {
  // Class 0 lights the top half, class 1 the bottom half.
  ImageSet set;
  set.side = 16;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint32_t>(i % 2);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        const bool lit = (y < 8) == (label == 0);
        set.pixels.push_back(static_cast<float>((lit ? 0.8 : 0.2) + rng.uniform(-0.1, 0.1)));
      }
    set.labels.push_back(label);
  }
  return set;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scaling

TEST_CASE("phi zero leaves the base network untouched") {
  const ScalingConfig s;
  CHECK(s.depth_mult() == 1.0);
  CHECK(s.width_mult() == 1.0);
  CHECK(s.resolution_mult() == 1.0);
  CHECK(s.flops_base() == doctest::Approx(1.92027).epsilon(1e-5));
  const auto arch = make_architecture(s, 21);
  CHECK(arch.input_side == 52);
  CHECK(arch.stage_repeats() == std::vector<std::size_t>{1, 2, 2});
  CHECK(arch.feature_width() == 64);
  CHECK(arch.output_sides() == std::vector<std::size_t>{26, 26, 13, 13, 7, 7});
  CHECK(Network<float>(arch).parameter_count() == 73157);
}

TEST_CASE("phi one grows depth, width and resolution") {
  ScalingConfig s;
  s.phi = 1;
  const auto arch = make_architecture(s, 21);
  CHECK(arch.stage_repeats() == std::vector<std::size_t>{2, 3, 3});
  CHECK(arch.input_side == 60);  // 52 * 1.15 = 59.8
  CHECK(arch.convs[0].out_channels == 16);  // floor(17.6 / 8) * 8
  const double ratio = static_cast<double>(estimate_flops(arch)) /
                       static_cast<double>(estimate_flops(make_architecture(ScalingConfig{}, 21)));
  MESSAGE("FLOPs ratio phi=1 / phi=0: " << ratio);
  CHECK(ratio >= 1.6);
  CHECK(ratio <= 2.4);

  std::uint64_t prev = 0;
  for (std::uint32_t phi = 0; phi <= 4; ++phi) {
    s.phi = phi;
    const auto f = estimate_flops(make_architecture(s, 21));
    CHECK(f > prev);
    prev = f;
  }
}

TEST_CASE("flop count of a single convolution") {
  Architecture a;
  a.input_side = 16;
  a.convs = {{1, 8, 1}};
  a.n_classes = 0;
  CHECK(estimate_flops(a) == 18432);
  a.n_classes = 3;
  CHECK(estimate_flops(a) == 18432 + 24);
}

TEST_CASE("channel and side rounding") {
  CHECK(round_channels(17.6) == 16);
  CHECK(round_channels(24.0) == 24);
  CHECK(round_channels(3.0) == 8);
  CHECK(round_even(59.8) == 60);
  CHECK(round_even(1.0) == 2);
}

TEST_CASE("scaling bases are validated when loaded") {
  ScalingConfig s;
  s.alpha = 1.5;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  CHECK_THROWS_AS(nlohmann::json({{"phi", 0}, {"alpha", 1.0}}).get<ScalingConfig>(), InvalidArgument);
  CHECK_THROWS_AS(nlohmann::json({{"alpha", 2.0}, {"beta", 1.2}, {"gamma", 1.2}}).get<ScalingConfig>(), InvalidArgument);
  CHECK(nlohmann::json(ScalingConfig{}).get<ScalingConfig>() == ScalingConfig{});
  CHECK_THROWS_AS(make_architecture(ScalingConfig{}, 1), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Forward and loss

TEST_CASE("zero head gives uniform logits and loss ln C") {
  const auto net = build_model<double>(ScalingConfig{}, 21, 5);
  REQUIRE(net.head().weight.isZero(0.0));
  Rng rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t batch = 1 + rng.below(6);
    std::vector<double> images(batch * 52 * 52);
    for (auto& v : images) v = rng.uniform();
    std::vector<std::uint32_t> labels(batch);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(21));
    const auto logits = forward_logits(net, std::span<const double>(images), batch);
    CHECK(logits.isZero(0.0));
    const double loss = loss_only(net, std::span<const double>(images), std::span<const std::uint32_t>(labels), 0.0);
    CHECK(std::abs(loss - std::log(21.0)) <= 1e-9);
    const auto fl = build_model<float>(ScalingConfig{}, 21, 5);
    std::vector<float> fimages(images.begin(), images.end());
    const double floss = loss_only(fl, std::span<const float>(fimages), std::span<const std::uint32_t>(labels), 0.0);
    CHECK(std::abs(floss - std::log(21.0)) <= 1e-9);
  }
}

TEST_CASE("build_model is seeded and within the He bound") {
  const auto a = build_model<float>(ScalingConfig{}, 21, 1);
  CHECK(a == build_model<float>(ScalingConfig{}, 21, 1));
  CHECK_FALSE(a == build_model<float>(ScalingConfig{}, 21, 2));
  for (const auto& c : a.convs()) {
    const double bound = std::sqrt(6.0 / (9.0 * static_cast<double>(c.spec.in_channels)));
    CHECK(c.weight.cwiseAbs().maxCoeff() <= bound);
    CHECK(c.bias.isZero(0.0));
  }
  CHECK(a.head().bias.isZero(0.0));
}

TEST_CASE("forward agrees with the direct-loop reference") {
  const auto net = random_small_net(2, 5);
  Rng rng(3);
  std::vector<double> images(3 * 256);
  for (auto& v : images) v = rng.uniform();
  const std::vector<std::uint32_t> labels{0, 3, 4};
  const ReferenceNet ref(net, images, labels);
  const double loss = loss_only(net, std::span<const double>(images), std::span<const std::uint32_t>(labels), 0.0);
  CHECK(loss == doctest::Approx(ref.loss()).epsilon(1e-12));

  Tensor<double> batch({3, 1, 16, 16});
  batch.data = images;
  const auto out = forward(net, batch);
  CHECK(out.shape == std::vector<std::size_t>{3, 5});
  CHECK_THROWS_AS(forward(net, Tensor<double>({3, 1, 15, 16})), InvalidArgument);
}

TEST_CASE("analytic gradients match central differences on every parameter tensor") {
  const auto start = std::chrono::steady_clock::now();
  const auto net = random_small_net(11, 21);
  Rng rng(12);
  std::vector<double> images(4 * 256);
  for (auto& v : images) v = rng.uniform();
  const auto check = gradient_check(net, images, {3, 17, 0, 9}, 1e-4);
  for (const auto& [name, worst] : check.worst) {
    MESSAGE(name << ": max relative error " << worst);
    CHECK(worst < 1e-4);
  }
  CHECK(check.checked == net.parameter_count());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("gradient check over " << check.checked << " parameters in " << secs << " s, " << check.narrowed
                                   << " windows narrowed past a ReLU switch");
  CHECK(secs < 60.0);
}

TEST_CASE("L2 penalty adds lambda W to weight gradients only") {
  const auto net = random_small_net(4, 3);
  Rng rng(5);
  std::vector<double> images(2 * 256);
  for (auto& v : images) v = rng.uniform();
  const std::vector<std::uint32_t> labels{0, 2};
  const double lambda = 0.01;
  const auto plain = loss_and_grad(net, std::span<const double>(images), std::span<const std::uint32_t>(labels), 0.0);
  const auto reg = loss_and_grad(net, std::span<const double>(images), std::span<const std::uint32_t>(labels), lambda);
  double sq = 0.0;
  for (std::size_t l = 0; l < net.convs().size(); ++l) {
    const auto& w = net.convs()[l].weight;
    sq += w.squaredNorm();
    CHECK((reg.grads.convs()[l].weight - plain.grads.convs()[l].weight - lambda * w).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((reg.grads.convs()[l].bias - plain.grads.convs()[l].bias).cwiseAbs().maxCoeff() == 0.0);
  }
  sq += net.head().weight.squaredNorm();
  CHECK((reg.grads.head().weight - plain.grads.head().weight - lambda * net.head().weight).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(reg.loss - plain.loss == doctest::Approx(lambda / 2 * sq).epsilon(1e-10));
}

TEST_CASE("bad labels and sizes are rejected") {
  const auto net = random_small_net(4, 3);
  std::vector<double> images(256, 0.5);
  const std::vector<std::uint32_t> bad{3};
  CHECK_THROWS_AS(loss_only(net, std::span<const double>(images), std::span<const std::uint32_t>(bad), 0.0), InvalidArgument);
  std::vector<double> short_images(200, 0.5);
  const std::vector<std::uint32_t> ok{1};
  CHECK_THROWS_AS(loss_only(net, std::span<const double>(short_images), std::span<const std::uint32_t>(ok), 0.0),
                  InvalidArgument);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST_CASE("warm-up schedule") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == doctest::Approx(3.96e-6).epsilon(1e-12));
  CHECK(lr_at(249, cfg) == doctest::Approx(0.99e-3).epsilon(1e-12));
  CHECK(lr_at(499, cfg) == cfg.learning_rate);
  CHECK(lr_at(5000, cfg) == cfg.learning_rate);
  cfg.use_warmup = false;
  CHECK(lr_at(0, cfg) == cfg.learning_rate);
  cfg.use_warmup = true;
  cfg.warmup_steps = 0;
  CHECK(lr_at(0, cfg) == cfg.learning_rate);
}

TEST_CASE("momentum update") {
  auto params = random_small_net(6, 2);
  const auto grads = random_small_net(7, 2);
  Network<double> velocity(params.arch());
  const auto before = params;
  momentum_step(params, grads, velocity, 0.1, 0.0);
  const auto p0 = before.parameters();
  const auto p1 = params.parameters();
  const auto g = grads.parameters();
  for (std::size_t t = 0; t < p0.size(); ++t)
    for (std::size_t i = 0; i < p0[t].size(); ++i) REQUIRE(p1[t][i] == doctest::Approx(p0[t][i] - 0.1 * g[t][i]).epsilon(1e-14));

  // Two heavy-ball steps with a constant gradient move by lr * g * (1 + (1 + m)).
  auto q = before;
  Network<double> v(q.arch());
  momentum_step(q, grads, v, 0.1, 0.9);
  momentum_step(q, grads, v, 0.1, 0.9);
  const auto q1 = q.parameters();
  for (std::size_t t = 0; t < p0.size(); ++t)
    for (std::size_t i = 0; i < p0[t].size(); ++i)
      REQUIRE(q1[t][i] == doctest::Approx(p0[t][i] - 0.1 * g[t][i] * 2.9).epsilon(1e-12));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.weight_decay_kind = "L1";
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(nlohmann::json(TrainConfig{}).get<TrainConfig>() == TrainConfig{});
}

TEST_CASE("a separable toy problem is learned") {
  const auto train_set = toy_images(64, 1);
  const auto val_set = toy_images(32, 2);
  // Weights do not depend on the input side, so the 52-pixel init is reused at 16.
  auto model = Network<float>(make_architecture(ScalingConfig{}, 2, 16));
  const auto seeded = build_model<float>(ScalingConfig{}, 2, 3);
  for (std::size_t l = 0; l < model.convs().size(); ++l) model.convs()[l].weight = seeded.convs()[l].weight;
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;
  cfg.warmup_steps = 10;
  cfg.seed = 4;
  const auto r = train(model, train_set, val_set, cfg);
  CHECK(r.history.size() == 5);
  CHECK(r.steps == 40);
  CHECK(r.best_val_accuracy == 1.0);
  CHECK(accuracy(r.model, val_set) == r.best_val_accuracy);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);

  const auto again = train(model, train_set, val_set, cfg);
  CHECK(again.model == r.model);
  CHECK(history_csv(again.history) == history_csv(r.history));

  CHECK_THROWS_AS(train(model, ImageSet{}, val_set, cfg), InvalidArgument);
  cfg.learning_rate = 1e30;
  CHECK_THROWS_AS(train(model, train_set, val_set, cfg), NumericalError);
}

TEST_CASE("rotation pretext task") {
  std::vector<float> img{1, 2, 3, 4};
  CHECK(rotate_quarter(img, 2, 1) == std::vector<float>{2, 4, 1, 3});
  CHECK(rotate_quarter(img, 2, 4) == img);
  CHECK(rotate_quarter(rotate_quarter(img, 2, 3), 2, 1) == img);

  // An off-center corner block makes every rotation distinguishable.
  ImageSet set;
  set.side = 16;
  Rng rng(9);
  for (int i = 0; i < 48; ++i) {
    const std::size_t bx = rng.below(4), by = rng.below(4);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        set.pixels.push_back((y >= by && y < by + 5 && x >= bx && x < bx + 5) ? 0.9f : 0.1f);
    set.labels.push_back(0);
  }
  auto model = Network<float>(make_architecture(ScalingConfig{}, 3, 16));
  const auto seeded = build_model<float>(ScalingConfig{}, 3, 1);
  for (std::size_t l = 0; l < model.convs().size(); ++l) model.convs()[l].weight = seeded.convs()[l].weight;
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.warmup_steps = 10;
  const auto r = pretrain_pretext(model, set, set, cfg);
  MESSAGE("rotation accuracy " << r.heldout_accuracy);
  CHECK(r.heldout_accuracy > 0.25);
  CHECK(r.backbone.n_classes() == 3);
  CHECK(r.backbone.head().weight.isZero(0.0));
  CHECK(r.backbone.head().weight.rows() == 3);
}

// ---------------------------------------------------------------------------
// Prediction

TEST_CASE("softmax and argmax") {
  const std::vector<double> logits{1.0, 3.0, 2.0, 3.0};
  const auto p = softmax(logits);
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p[1] > p[2]);
  CHECK(p[2] > p[0]);
  CHECK(p[1] == p[3]);
  CHECK(argmax(logits) == 1);
  const std::vector<double> huge{1000.0, 999.0};
  const auto q = softmax(huge);
  CHECK(std::isfinite(q[0]));
  CHECK(q[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("zero-head prediction ties to class 0") {
  const auto net = build_model<float>(ScalingConfig{}, 4, 1);
  std::vector<float> img(52 * 52, 0.3f);
  const auto p = predict(net, std::span<const float>(img));
  CHECK(p.label == 0);
  for (double v : p.probabilities) CHECK(v == doctest::Approx(0.25));
  const auto labels = predict_labels(net, std::span<const float>(img), 1);
  CHECK(labels == std::vector<std::uint32_t>{0});
}

TEST_CASE("model file round trip") {
  const auto net = random_small_net(3, 5).cast<float>();
  testing::TempDir dir;
  save_model(net, dir / "model.bin");
  const auto back = load_model(dir / "model.bin");
  CHECK(back == net);
  CHECK(serialize_model(back) == serialize_model(net));

  const auto bytes = serialize_model(net);
  CHECK(bytes.substr(0, 4) == "FDXM");
  CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() - 1)), DataError);
  CHECK_THROWS_AS(deserialize_model(bytes + "x"), DataError);
  CHECK_THROWS_AS(deserialize_model("XXXX" + bytes.substr(4)), DataError);
  CHECK_THROWS_AS(load_model(dir / "missing.bin"), DataError);
}
