#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fd.hpp"
#include "pams/errors.hpp"
#include "pams/ops.hpp"
#include "pams/training.hpp"

using namespace pams;
using namespace pams::training;
using pams::testing::random_tensor;

namespace {

model::ModelConfig small(std::optional<int> bits = std::nullopt) {
  model::ModelConfig c;
  c.n_blocks = 2;
  c.n_channels = 8;
  c.n_bits = bits;
  return c;
}

const data::Dataset& toy() {
  static const data::Dataset ds = [] {
    const auto dir = std::filesystem::temp_directory_path() / "pams_test_training_corpus";
    std::filesystem::remove_all(dir);
    data::write_toy_corpus(dir, 10, 32, 2, 5);
    return data::load_dataset(dir, 2);
  }();
  return ds;
}

TrainConfig quick() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.lr_halving_period = 2;
  c.patch_size = 8;
  c.steps_per_epoch = 3;
  c.calibration_batches = 2;
  c.evaluate_each_epoch = false;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("learning rate halves every period") {
  TrainConfig c;
  for (int e = 0; e < 30; ++e) CHECK(learning_rate(c, e) == 1e-4 * std::pow(0.5, e / 10));
  CHECK(learning_rate(c, 9) == 1e-4);
  CHECK(learning_rate(c, 10) == 5e-5);
  CHECK(learning_rate(c, 29) == 2.5e-5);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr_halving_period = 40;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = TrainConfig{};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("optimizer steps") {
  TrainConfig cfg;
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor w({3}, {1.0, -2.0, 0.5}, true);
    w.grad_mut();
    Optimizer opt({{"w", w}}, cfg);
    opt.step(0.1);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == -2.0);
    CHECK(w[2] == 0.5);
  }
  SUBCASE("first Adam step moves by lr against the gradient sign") {
    Tensor w({2}, {0.0, 0.0}, true);
    w.grad_mut()[0] = 3.0;
    w.grad_mut()[1] = -0.01;
    Optimizer opt({{"w", w}}, cfg);
    opt.step(1e-3);
    CHECK(w[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(1e-3).epsilon(1e-5));
  }
  SUBCASE("alpha is projected to the positive floor") {
    auto st = quant::QuantizerState::make(quant::QuantMode::activation_pams, 4, 1e-4);
    st.alpha.grad_mut()[0] = 1.0;
    TrainConfig sgd = cfg;
    sgd.optimizer = OptimizerKind::sgd;
    Optimizer opt({{"alpha", st.alpha}}, sgd);
    opt.register_alpha(&st);
    opt.step(1.0);
    CHECK(st.alpha_value() == quant::kMinAlpha);
  }
  SUBCASE("missing gradient is a state error") {
    Tensor w({1}, {1.0}, true);
    Optimizer opt({{"w", w}}, cfg);
    CHECK_THROWS_AS(opt.step(0.1), StateError);
  }
}

TEST_CASE("calibrate_alphas follows the EMA rule") {
  auto fp = model::SRModel::build(small(), 1);
  std::mt19937_64 rng(2);
  const auto b1 = random_tensor({3, 3, 8, 8}, rng, 0, 255);
  const auto b2 = random_tensor({2, 3, 8, 8}, rng, 0, 255);

  // Oracle: per-sample maxima observed on the full-precision model.
  auto observed_means = [&](const Tensor& b) {
    std::vector<double> means(fp.site_count());
    model::ForwardOptions opts;
    opts.observer = [&](std::size_t s, const Tensor& act) {
      const auto n = act.dim(0), per = act.numel() / n;
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double m = 0.0;
        for (std::size_t j = 0; j < per; ++j) m = std::max(m, std::abs(act[i * per + j]));
        total += m;
      }
      means[s] = total / static_cast<double>(n);
    };
    fp.forward(b, opts);
    return means;
  };
  const auto m1 = observed_means(b1);
  const auto m2 = observed_means(b2);

  auto one = fp.quantized_copy(4, quant::QuantMode::activation_pams);
  calibrate_alphas(one, {b1}, 1);
  for (std::size_t s = 0; s < one.site_count(); ++s) CHECK(one.site_state(s)->alpha_value() == m1[s]);

  auto two = fp.quantized_copy(4, quant::QuantMode::activation_pams);
  calibrate_alphas(two, {b1, b2}, 2);
  for (std::size_t s = 0; s < two.site_count(); ++s) {
    CHECK(std::abs(two.site_state(s)->alpha_value() - (0.9997 * m1[s] + 0.0003 * m2[s])) <= 1e-12);
  }

  CHECK_THROWS_AS(calibrate_alphas(one, {}, 1), ParameterError);
  CHECK_THROWS_AS(calibrate_alphas(fp, {b1}, 1), ParameterError);
}

TEST_CASE("constant activations calibrate to the constant") {
  auto m = model::SRModel::build(small(), 4).quantized_copy(8, quant::QuantMode::activation_pams);
  for (auto& b : m.blocks()) {
    for (auto* c : {&b.conv1, &b.conv2}) {
      for (auto& v : c->weight.mutable_data()) v = 0.0;
      for (auto& v : c->bias.mutable_data()) v = 0.75;
    }
  }
  std::mt19937_64 rng(5);
  std::vector<Tensor> stream;
  for (int i = 0; i < 4; ++i) stream.push_back(random_tensor({2, 3, 6, 6}, rng, 0, 255));
  for (int k = 1; k <= 4; ++k) {
    auto c = m.clone();
    calibrate_alphas(c, stream, k);
    for (auto* st : c.quantizer_sites()) CHECK(st->alpha_value() == doctest::Approx(0.75).epsilon(1e-14));
  }
}

TEST_CASE("alpha gradient comes only from its own quantizer") {
  auto s1 = quant::QuantizerState::make(quant::QuantMode::activation_pams, 4, 1.0);
  auto s2 = quant::QuantizerState::make(quant::QuantMode::activation_pams, 4, 1.0);
  auto grads = [&](double x1_last) {
    s1.alpha.zero_grad();
    s2.alpha.zero_grad();
    Tensor x1({3}, {0.2, 2.0, x1_last}, true);
    Tensor x2({3}, {-3.0, 0.1, 1.5}, true);
    Tape tape;
    TapeScope scope(tape);
    auto y = ops::add(quant::fake_quant_activation(x1, s1), ops::scale(quant::fake_quant_activation(x2, s2), 2.0));
    tape.backward(ops::sum(y));
    return std::pair{s1.alpha_grad(), s2.alpha_grad()};
  };
  const auto base = grads(0.5);
  const auto moved = grads(-4.0);
  CHECK(base.first == 1.0);
  CHECK(moved.first == 0.0);
  CHECK(base.second == moved.second);
  CHECK(base.second == 0.0);
}

TEST_CASE("interior-only activations leave every alpha untouched") {
  auto m = model::SRModel::build(small(), 6).quantized_copy(8, quant::QuantMode::activation_pams);
  for (auto* st : m.quantizer_sites()) st->alpha.mutable_data()[0] = 1e6;
  m.set_requires_grad(true);
  std::mt19937_64 rng(7);
  const auto x = random_tensor({1, 3, 8, 8}, rng, 0, 255);
  const auto hr = random_tensor({1, 3, 16, 16}, rng, 0, 255);
  const auto params = m.trainable_parameters();
  TrainConfig cfg;
  Optimizer opt(params, cfg);
  for (auto* st : m.quantizer_sites()) opt.register_alpha(st);
  Tape tape;
  {
    TapeScope scope(tape);
    m.zero_grad();
    tape.backward(losses::pixel_l1(m.forward_sr(x), hr));
  }
  for (auto* st : m.quantizer_sites()) CHECK(st->alpha_grad() == 0.0);
  opt.step(1e-3);
  for (auto* st : m.quantizer_sites()) CHECK(st->alpha_value() == 1e6);
}

TEST_CASE("zero epochs returns the calibrated quantized copy of the teacher") {
  auto teacher = model::SRModel::build(small(), 8);
  teacher.mean_rgb = data::mean_rgb(toy().train);
  auto cfg = quick();
  cfg.epochs = 0;
  auto r = train(&teacher, small(4), cfg, toy());
  CHECK(r.report.epochs.empty());
  CHECK(r.report.alpha_trajectory.empty());
  auto a = teacher.weights(), b = r.student.weights();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].tensor.numel(); ++j) CHECK(a[i].tensor[j] == b[i].tensor[j]);
  CHECK(r.student.quantizer_sites().size() == 4);
  for (auto* st : r.student.quantizer_sites()) CHECK(st->step_count == cfg.calibration_batches);
}

TEST_CASE("pixel loss falls on an easy problem") {
  auto teacher = model::SRModel::build(small(), 9);
  teacher.mean_rgb = data::mean_rgb(toy().train);
  auto cfg = quick();
  cfg.epochs = 4;
  cfg.lr_halving_period = 4;
  cfg.steps_per_epoch = 5;
  cfg.loss_weights.lambda_s = 0.0;
  auto r = train(&teacher, small(16), cfg, toy());
  REQUIRE(r.report.epochs.size() == 4);
  CHECK(r.report.epochs.back().mean_pix <= r.report.epochs.front().mean_pix);
  for (const auto& e : r.report.epochs) {
    CHECK(std::isfinite(e.mean_skt));
    CHECK(e.mean_skt >= 0.0);
  }
}

TEST_CASE("training is deterministic and records per-site alpha trajectories") {
  auto teacher = model::SRModel::build(small(), 10);
  teacher.mean_rgb = data::mean_rgb(toy().train);
  auto cfg = quick();
  auto a = train(&teacher, small(4), cfg, toy());
  auto b = train(&teacher, small(4), cfg, toy());
  auto pa = a.student.trainable_parameters(), pb = b.student.trainable_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].tensor.numel(); ++j) CHECK(pa[i].tensor[j] == pb[i].tensor[j]);
  CHECK(a.report.step_pix == b.report.step_pix);

  const auto steps = static_cast<std::size_t>(cfg.epochs * cfg.steps_per_epoch);
  CHECK(a.report.alpha_trajectory.size() == steps);
  CHECK(a.report.site_names.size() == 4);
  for (const auto& row : a.report.alpha_trajectory) {
    CHECK(row.size() == 4);
    for (double v : row) CHECK(v > 0.0);
  }
  for (const auto& e : a.report.epochs) {
    CHECK(std::isfinite(e.mean_pix));
    CHECK(std::isfinite(e.mean_skt));
  }
}

TEST_CASE("teacher-free training builds a full-precision model") {
  auto cfg = quick();
  cfg.epochs = 1;
  cfg.lr_halving_period = 1;
  cfg.evaluate_each_epoch = true;
  auto r = train(nullptr, small(), cfg, toy());
  CHECK(r.student.quantizer_sites().empty());
  CHECK(r.report.site_names.empty());
  CHECK(r.report.epochs.size() == 1);
  CHECK(r.report.epochs[0].val_psnr > 0.0);
}

TEST_CASE("non-finite activations abort with the offending layer") {
  auto teacher = model::SRModel::build(small(), 11);
  for (auto& v : teacher.head.weight.mutable_data()) v = 1e308;
  auto cfg = quick();
  try {
    train(&teacher, small(8), cfg, toy());
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("head") != std::string::npos);
  }
}

TEST_CASE("evaluation") {
  const auto& ds = toy();
  auto bic = evaluate_bicubic(ds.test, 2, 2);
  CHECK(bic.per_image.size() == ds.test.size());
  CHECK(std::isfinite(bic.psnr_db));
  auto m = model::SRModel::build(small(), 12);
  auto ev = evaluate(m, ds.test, 2);
  CHECK(ev.ssim <= 1.0);
  CHECK(ev.ssim >= -1.0);
}
