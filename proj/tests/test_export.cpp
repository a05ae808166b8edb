#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "fd.hpp"
#include "pams/errors.hpp"
#include "pams/export.hpp"
#include "pams/ops.hpp"
#include "pams/training.hpp"

using namespace pams;
using namespace pams::exporter;
using pams::testing::random_tensor;

namespace {

model::ModelConfig small(std::optional<int> bits = std::nullopt) {
  model::ModelConfig c;
  c.n_blocks = 2;
  c.n_channels = 8;
  c.n_bits = bits;
  return c;
}

Tensor images(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor({n, 3, 8, 8}, rng, 0, 255);
}

// A calibrated quantized model whose full-precision tensors are float32 values.
model::SRModel student(int bits, std::uint64_t seed) {
  auto fp = model::SRModel::build(small(), seed);
  fp.mean_rgb = {112.25, 109.5, 98.0};
  for (auto& p : fp.weights())
    for (auto& v : p.tensor.mutable_data()) v = static_cast<float>(v);
  auto q = fp.quantized_copy(bits, quant::QuantMode::activation_pams);
  training::calibrate_alphas(q, {images(2, seed + 1)}, 1);
  return q;
}

}  // namespace

TEST_CASE("code packing round trip") {
  for (int bits : {2, 3, 4, 5, 8, 11, 16}) {
    const int lim = (1 << (bits - 1)) - 1;
    std::mt19937_64 rng(bits);
    std::uniform_int_distribution<int> u(-lim, lim);
    std::vector<std::int32_t> codes(257);
    for (auto& c : codes) c = u(rng);
    codes[0] = -lim;
    codes[1] = lim;
    auto bytes = pack_codes(codes, bits);
    CHECK(bytes.size() == (codes.size() * bits + 7) / 8);
    CHECK(unpack_codes(bytes, codes.size(), bits) == codes);
  }
  CHECK(pack_codes(std::vector<std::int32_t>(1000, 3), 4).size() == 500);
  CHECK_THROWS_AS(pack_codes({8}, 4), InternalError);
  CHECK_THROWS_AS(pack_codes({-8}, 4), InternalError);
}

TEST_CASE("pack then unpack reproduces the quantized forward bit for bit") {
  for (int bits : {4, 8}) {
    auto q = student(bits, 3 + bits);
    auto packed = pack_model(q, bits);
    auto u = unpack_model(PackedModel::deserialize(packed.serialize()));
    const auto x = images(2, 99);
    const auto a = q.forward_sr(x);
    const auto b = u.forward_sr(x);
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);

    // Block weights equal their fake-quantized values.
    for (std::size_t k = 0; k < q.blocks().size(); ++k) {
      const auto& w = q.blocks()[k].conv1.weight;
      const auto fq = quant::quantize_weights(w, bits).values;
      const auto& uw = u.blocks()[k].conv1.weight;
      for (std::size_t i = 0; i < w.numel(); ++i) CHECK(uw[i] == fq[i]);
    }
    // Re-packing the unpacked model is a fixed point.
    CHECK(pack_model(u, bits).serialize() == packed.serialize());
  }
}

TEST_CASE("all-zero block weights pack to zero codes") {
  auto q = student(4, 20);
  for (auto& v : q.blocks()[0].conv1.weight.mutable_data()) v = 0.0;
  auto packed = pack_model(q, 4);
  const auto& t = packed.tensors[2];
  CHECK(t.name == "blocks.0.conv1.weight");
  CHECK(t.quantized);
  CHECK(t.scale == std::numeric_limits<double>::min());
  for (auto c : unpack_codes(t.codes, t.numel(), 4)) CHECK(c == 0);
}

TEST_CASE("pack_model preconditions") {
  auto fp = model::SRModel::build(small(), 1);
  CHECK_THROWS_AS(pack_model(fp, 8), ParameterError);
  auto q = student(8, 2);
  CHECK_THROWS_AS(pack_model(q, 4), ParameterError);
}

TEST_CASE("packed payload equals the size accounting") {
  for (int bits : {2, 4, 8}) {
    auto q = student(bits, 30);
    auto packed = pack_model(q, bits);
    const auto r = size_report(q, bits);
    CHECK(packed.payload_bits() == r.storage_quant_bits);
    CHECK(packed.serialize().size() * 8 > packed.payload_bits());
  }
}

TEST_CASE("checkpoint round trip preserves weights, sites and alphas") {
  auto q = student(4, 40);
  q.site_state(1)->alpha.mutable_data()[0] = 0.123456789012345;
  q.site_state(2)->step_count = 17;
  auto back = deserialize_checkpoint(serialize_checkpoint(q));
  CHECK(back.config().n_bits == q.config().n_bits);
  CHECK(back.mean_rgb == q.mean_rgb);
  auto a = q.weights(), b = back.weights();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    for (std::size_t j = 0; j < a[i].tensor.numel(); ++j) CHECK(a[i].tensor[j] == b[i].tensor[j]);
  }
  for (std::size_t s = 0; s < q.site_count(); ++s) {
    CHECK(back.site_name(s) == q.site_name(s));
    CHECK(back.site_state(s)->alpha_value() == q.site_state(s)->alpha_value());
    CHECK(back.site_state(s)->step_count == q.site_state(s)->step_count);
    CHECK(back.site_state(s)->mode == q.site_state(s)->mode);
  }
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(q));

  auto fp = model::SRModel::build(small(), 41);
  auto fback = deserialize_checkpoint(serialize_checkpoint(fp));
  CHECK_FALSE(fback.config().quantized());

  auto bytes = serialize_checkpoint(q);
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), IoError);
  bytes = serialize_checkpoint(q);
  bytes.pop_back();
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), IoError);
}

TEST_CASE("load_any_model dispatches on the file magic") {
  auto dir = std::filesystem::temp_directory_path() / "pams_test_export";
  std::filesystem::create_directories(dir);
  auto q = student(8, 50);
  save_checkpoint(q, dir / "m.ckpt");
  save_packed(pack_model(q, 8), dir / "m.pack");
  auto a = load_any_model(dir / "m.ckpt");
  auto b = load_any_model(dir / "m.pack");
  const auto x = images(1, 51);
  const auto ya = a.forward_sr(x), yb = b.forward_sr(x), yq = q.forward_sr(x);
  for (std::size_t i = 0; i < ya.numel(); ++i) {
    CHECK(ya[i] == yq[i]);
    CHECK(yb[i] == yq[i]);
  }
  CHECK_THROWS_AS(load_any_model(dir / "missing"), IoError);
}

TEST_CASE("size report examples") {
  auto r32 = size_report(1000, 300, 32);
  CHECK(r32.storage_quant_units == 1300.0);
  CHECK(r32.compression_ratio == 0.0);
  for (int n : {2, 4, 8, 16}) {
    auto r = size_report(5000, 0, n);
    CHECK(r.compression_ratio == 1.0 - n / 32.0);
  }
  double prev = 1.0;
  for (int n = 2; n <= 32; ++n) {
    const double rc = size_report(1176000, 337000, n).compression_ratio;
    CHECK(rc < prev);
    CHECK(rc >= 0.0);
    prev = rc;
  }
  std::ostringstream os;
  write_size_report(os, size_report(1176000, 337000, 8));
  CHECK(os.str().find("compression_ratio\t0.58") != std::string::npos);
}

TEST_CASE("activation statistics") {
  auto fp = model::SRModel::build(small(), 60);
  std::vector<data::ImagePair> imgs;
  SUBCASE("constant net on constant inputs has zero variance") {
    for (auto& p : fp.weights())
      for (auto& v : p.tensor.mutable_data()) v = 0.01;
    for (int i = 0; i < 4; ++i) imgs.push_back({Tensor::full({3, 8, 8}, 100.0), {}, "c" + std::to_string(i)});
    auto st = activation_stats(fp, imgs);
    for (std::size_t s = 0; s < st.site_names.size(); ++s) CHECK(st.site_variance(s) == 0.0);
  }
  SUBCASE("a linear site doubles its maximum when the input doubles") {
    // Bias-free with zero mean: every site is positively homogeneous.
    for (auto& p : fp.weights())
      if (p.name.find(".bias") != std::string::npos)
        for (auto& v : p.tensor.mutable_data()) v = 0.0;
    std::mt19937_64 rng(61);
    auto x = random_tensor({3, 8, 8}, rng, 0, 100);
    imgs.push_back({x, {}, "x1"});
    imgs.push_back({ops::scale(x, 2.0), {}, "x2"});
    auto st = activation_stats(fp, imgs);
    for (std::size_t s = 0; s < st.site_names.size(); ++s) {
      CHECK(st.max_abs[s][1] == doctest::Approx(2.0 * st.max_abs[s][0]).epsilon(1e-12));
    }
  }
  SUBCASE("varied inputs give varied maxima and well-formed tables") {
    std::mt19937_64 rng(62);
    for (int i = 0; i < 6; ++i) imgs.push_back({random_tensor({3, 8, 8}, rng, 0, 50.0 * (i + 1)), {}, "r" + std::to_string(i)});
    auto st = activation_stats(fp, imgs);
    CHECK(st.site_names.size() == 4);
    for (std::size_t s = 0; s < 4; ++s) CHECK(st.site_variance(s) > 0.0);
    std::ostringstream table, hist;
    write_stats_table(table, st);
    write_stats_histogram(hist, st, 5);
    std::size_t rows = 0;
    std::istringstream in(table.str());
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 1 + 4 * 6);
    std::istringstream hin(hist.str());
    rows = 0;
    for (std::string line; std::getline(hin, line);) ++rows;
    CHECK(rows == 1 + 4 * 5);
  }
}
