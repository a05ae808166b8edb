#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fd.hpp"
#include "pams/errors.hpp"
#include "pams/losses.hpp"
#include "pams/model.hpp"
#include "pams/ops.hpp"
#include "pams/training.hpp"

using namespace pams;
using namespace pams::model;
using pams::testing::random_tensor;

namespace {

ModelConfig small(std::optional<int> bits = std::nullopt, int blocks = 2, int channels = 8) {
  ModelConfig c;
  c.n_blocks = blocks;
  c.n_channels = channels;
  c.n_bits = bits;
  return c;
}

Tensor image_batch(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor({n, 3, h, w}, rng, 0.0, 255.0);
}

}  // namespace

TEST_CASE("build is deterministic in (config, seed)") {
  auto a = SRModel::build(small(), 7);
  auto b = SRModel::build(small(), 7);
  auto c = SRModel::build(small(), 8);
  auto wa = a.weights(), wb = b.weights(), wc = c.weights();
  REQUIRE(wa.size() == wb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    CHECK(wa[i].name == wb[i].name);
    for (std::size_t j = 0; j < wa[i].tensor.numel(); ++j) {
      CHECK(wa[i].tensor[j] == wb[i].tensor[j]);
      any_diff = any_diff || wa[i].tensor[j] != wc[i].tensor[j];
    }
  }
  CHECK(any_diff);
}

TEST_CASE("full-precision forward makes no quantization calls") {
  auto m = SRModel::build(small(), 1);
  m.forward(image_batch(1, 8, 8, 2));
  CHECK(m.quantization_calls() == 0);
  CHECK(m.quantizer_sites().empty());

  auto q = SRModel::build(small(8), 1);
  q.forward(image_batch(1, 8, 8, 2));
  CHECK(q.quantization_calls() > 0);
}

TEST_CASE("quantizer site count is two per block") {
  auto m = SRModel::build(small(8, 4, 16), 3);
  CHECK(m.site_count() == 8);
  CHECK(m.quantizer_sites().size() == 8);
  CHECK(m.site_name(0) == "blocks.0.act1");
  CHECK(m.site_name(7) == "blocks.3.act2");
  auto params = m.trainable_parameters();
  CHECK(params.size() == m.weights().size() + 8);
  CHECK(params.back().name == "blocks.3.act2.alpha");
}

TEST_CASE("output and feature shapes") {
  auto m = SRModel::build(small(std::nullopt, 2, 16), 4);
  auto r = m.forward(image_batch(1, 8, 8, 5));
  CHECK(r.sr.shape() == Shape{1, 3, 16, 16});
  CHECK(r.features.shape() == Shape{1, 16, 8, 8});

  ModelConfig c4 = small();
  c4.scale_factor = 4;
  auto m4 = SRModel::build(c4, 4);
  CHECK(m4.upsample.size() == 2);
  CHECK(m4.forward_sr(image_batch(2, 6, 5, 5)).shape() == Shape{2, 3, 24, 20});
}

TEST_CASE("wrong channel count and invalid configs are rejected") {
  auto m = SRModel::build(small(), 4);
  CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 4, 8, 8})), DimensionError);
  ModelConfig bad = small();
  bad.scale_factor = 3;
  CHECK_THROWS_AS(SRModel::build(bad, 0), ParameterError);
  bad = small(1);
  CHECK_THROWS_AS(SRModel::build(bad, 0), ParameterError);
  bad = small();
  bad.n_blocks = 0;
  CHECK_THROWS_AS(SRModel::build(bad, 0), ParameterError);
}

TEST_CASE("zeroed residual branches reduce the network to head and tail") {
  auto x = image_batch(1, 7, 9, 6);
  auto reference = [](SRModel& m, const Tensor& in) {
    const std::array<double, 3> shift{-m.mean_rgb[0] / 255.0, -m.mean_rgb[1] / 255.0, -m.mean_rgb[2] / 255.0};
    auto h = ops::conv2d(ops::affine_channels(in, 1.0 / 255.0, shift), m.head.weight, m.head.bias, 1);
    for (const auto& u : m.upsample) h = ops::pixel_shuffle(ops::conv2d(h, u.weight, u.bias, 1), 2);
    return ops::affine_channels(ops::conv2d(h, m.tail.weight, m.tail.bias, 1), 255.0, m.mean_rgb);
  };
  {
    auto m = SRModel::build(small(), 9);
    m.mean_rgb = {110.0, 100.0, 90.0};
    for (auto& b : m.blocks()) {
      for (auto& v : b.conv2.weight.mutable_data()) v = 0.0;
      for (auto& v : b.conv2.bias.mutable_data()) v = 0.0;
    }
    auto out = m.forward_sr(x);
    auto ref = reference(m, x);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  {
    ModelConfig c = small();
    c.residual_scaling = 0.0;
    auto m = SRModel::build(c, 9);
    auto out = m.forward_sr(x);
    auto ref = reference(m, x);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("16-bit model tracks the full-precision model") {
  auto fp = SRModel::build(small(), 10);
  auto q = fp.quantized_copy(16, quant::QuantMode::activation_pams);
  auto x = image_batch(2, 8, 8, 11);
  training::calibrate_alphas(q, {x}, 1);
  auto a = fp.forward_sr(x);
  auto b = q.forward_sr(x);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) / 255.0 <= 1e-2);
}

TEST_CASE("features: identical without quantization, different at 4 bits") {
  auto teacher = SRModel::build(small(), 12);
  auto same = teacher.clone();
  auto x = image_batch(1, 8, 8, 13);
  auto ft = teacher.forward_features(x);
  auto fs = same.forward_features(x);
  for (std::size_t i = 0; i < ft.numel(); ++i) CHECK(ft[i] == fs[i]);

  auto student = teacher.quantized_copy(4, quant::QuantMode::activation_pams);
  training::calibrate_alphas(student, {x}, 1);
  auto fq = student.forward_features(x);
  CHECK(losses::skt_loss(fq, ft).item() > 0.0);
}

TEST_CASE("clone shares no tensor nodes") {
  auto m = SRModel::build(small(8), 14);
  auto c = m.clone();
  auto a = m.trainable_parameters(), b = c.trainable_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK_FALSE(a[i].tensor.same_node(b[i].tensor));
  }
  c.site_state(0)->alpha.mutable_data()[0] = 5.0;
  CHECK(m.site_state(0)->alpha_value() == 1.0);
}

TEST_CASE("observer sees every site in order, even in full precision") {
  auto m = SRModel::build(small(std::nullopt, 3, 4), 15);
  std::vector<std::size_t> seen;
  ForwardOptions opts;
  opts.observer = [&](std::size_t s, const Tensor&) { seen.push_back(s); };
  m.forward(image_batch(1, 6, 6, 16), opts);
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("parameter accounting") {
  auto m = SRModel::build(small(8, 4, 16), 17);
  const std::size_t block_w = 4 * 2 * 16 * 16 * 9;
  CHECK(m.high_level_weight_count() == block_w);
  const std::size_t total = (3 * 16 * 9 + 16) + block_w + 4 * 2 * 16 + (16 * 64 * 9 + 64) + (16 * 3 * 9 + 3);
  CHECK(m.parameter_count() == total);
}

TEST_CASE("fixed-max sites update their running max only while training") {
  auto m = SRModel::build(small(), 18).quantized_copy(8, quant::QuantMode::activation_fixed_max);
  auto x = image_batch(1, 8, 8, 19);
  m.forward(x);
  CHECK(m.site_state(0)->step_count == 0);
  ForwardOptions opts;
  opts.training = true;
  m.forward(x, opts);
  CHECK(m.site_state(0)->step_count == 1);
  CHECK(m.site_state(0)->alpha_value() != 1.0);
}
