#include "pams/model.hpp"

#include <cmath>
#include <random>

#include "pams/errors.hpp"
#include "pams/ops.hpp"

namespace pams::model {

void ModelConfig::validate() const {
  if (scale_factor != 2 && scale_factor != 4) throw ParameterError("scale_factor must be 2 or 4");
  if (n_blocks < 1) throw ParameterError("n_blocks must be >= 1");
  if (n_channels < 1) throw ParameterError("n_channels must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ParameterError("kernel_size must be odd and positive");
  if (n_bits && (*n_bits < 2 || *n_bits > 16)) throw ParameterError("n_bits must lie in [2, 16]");
  if (!std::isfinite(residual_scaling)) throw ParameterError("residual_scaling must be finite");
  if (activation_mode == quant::QuantMode::weight) throw ParameterError("activation_mode cannot be 'weight'");
}

int upsample_stages(int scale_factor) { return scale_factor == 4 ? 2 : 1; }

namespace {

Conv2d make_conv(const std::string& name, std::size_t cin, std::size_t cout, int k, std::mt19937_64& rng) {
  const auto ku = static_cast<std::size_t>(k);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * ku * ku));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(cout * cin * ku * ku), b(cout);
  for (auto& v : w) v = dist(rng);
  for (auto& v : b) v = dist(rng);
  return {name, Tensor({cout, cin, ku, ku}, std::move(w)), Tensor({cout}, std::move(b)), k / 2};
}

Conv2d clone_conv(const Conv2d& c) {
  Conv2d out{c.name, c.weight.clone(), c.bias.clone(), c.padding};
  out.weight.set_requires_grad(c.weight.requires_grad());
  out.bias.set_requires_grad(c.bias.requires_grad());
  return out;
}

quant::QuantizerState clone_state(const quant::QuantizerState& s) {
  quant::QuantizerState out = s;
  out.alpha = s.alpha.clone();
  out.alpha.set_requires_grad(s.alpha.requires_grad());
  return out;
}

Tensor conv_forward(const Conv2d& c, const Tensor& x) { return ops::conv2d(x, c.weight, c.bias, c.padding); }

void check_finite(const Tensor& t, const std::string& layer) {
  if (!t.all_finite()) throw NumericError("non-finite activation produced by layer '" + layer + "'");
}

}  // namespace

SRModel::SRModel(ModelConfig config, Conv2d head_conv, std::vector<ResBlock> blocks, std::vector<Conv2d> up,
                 Conv2d tail_conv)
    : head(std::move(head_conv)), upsample(std::move(up)), tail(std::move(tail_conv)), config_(std::move(config)),
      blocks_(std::move(blocks)) {
  config_.validate();
  if (blocks_.size() != static_cast<std::size_t>(config_.n_blocks)) throw ParameterError("block count mismatch");
  if (upsample.size() != static_cast<std::size_t>(upsample_stages(config_.scale_factor))) {
    throw ParameterError("upsampler stage count mismatch");
  }
}

SRModel SRModel::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto c = static_cast<std::size_t>(config.n_channels);
  const int k = config.kernel_size;
  SRModel m;
  m.config_ = config;
  m.head = make_conv("head", 3, c, k, rng);
  for (int b = 0; b < config.n_blocks; ++b) {
    const std::string prefix = "blocks." + std::to_string(b);
    ResBlock block{make_conv(prefix + ".conv1", c, c, k, rng), make_conv(prefix + ".conv2", c, c, k, rng), {}, {}, {}, {}};
    if (config.n_bits) {
      block.wq1 = WeightQuantizer{*config.n_bits, 0.0};
      block.wq2 = WeightQuantizer{*config.n_bits, 0.0};
      block.act1 = quant::QuantizerState::make(config.activation_mode, *config.n_bits);
      block.act2 = quant::QuantizerState::make(config.activation_mode, *config.n_bits);
    }
    m.blocks_.push_back(std::move(block));
  }
  for (int s = 0; s < upsample_stages(config.scale_factor); ++s) {
    m.upsample.push_back(make_conv("tail.up" + std::to_string(s), c, 4 * c, k, rng));
  }
  m.tail = make_conv("tail.out", c, 3, k, rng);
  m.set_requires_grad(true);
  return m;
}

SRModel SRModel::clone() const {
  SRModel m;
  m.config_ = config_;
  m.mean_rgb = mean_rgb;
  m.head = clone_conv(head);
  for (const auto& b : blocks_) {
    ResBlock nb{clone_conv(b.conv1), clone_conv(b.conv2), b.wq1, b.wq2, {}, {}};
    if (b.act1) nb.act1 = clone_state(*b.act1);
    if (b.act2) nb.act2 = clone_state(*b.act2);
    m.blocks_.push_back(std::move(nb));
  }
  for (const auto& u : upsample) m.upsample.push_back(clone_conv(u));
  m.tail = clone_conv(tail);
  return m;
}

SRModel SRModel::quantized_copy(int n_bits, quant::QuantMode mode) const {
  SRModel m = clone();
  m.config_.n_bits = n_bits;
  m.config_.activation_mode = mode;
  m.config_.validate();
  for (auto& b : m.blocks_) {
    b.wq1 = WeightQuantizer{n_bits, 0.0};
    b.wq2 = WeightQuantizer{n_bits, 0.0};
    b.act1 = quant::QuantizerState::make(mode, n_bits);
    b.act2 = quant::QuantizerState::make(mode, n_bits);
  }
  return m;
}

std::vector<NamedTensor> SRModel::weights() const {
  std::vector<NamedTensor> out;
  auto push = [&](const Conv2d& c) {
    out.push_back({c.name + ".weight", c.weight});
    out.push_back({c.name + ".bias", c.bias});
  };
  push(head);
  for (const auto& b : blocks_) {
    push(b.conv1);
    push(b.conv2);
  }
  for (const auto& u : upsample) push(u);
  push(tail);
  return out;
}

std::vector<NamedTensor> SRModel::trainable_parameters() const {
  auto out = weights();
  for (std::size_t s = 0; s < site_count(); ++s) {
    const auto* st = site_state(s);
    if (st && st->alpha_trainable()) out.push_back({site_name(s) + ".alpha", st->alpha});
  }
  return out;
}

std::string SRModel::site_name(std::size_t site) const {
  return "blocks." + std::to_string(site / 2) + (site % 2 == 0 ? ".act1" : ".act2");
}

quant::QuantizerState* SRModel::site_state(std::size_t site) {
  if (site >= site_count()) throw ParameterError("site index out of range");
  auto& b = blocks_[site / 2];
  auto& s = site % 2 == 0 ? b.act1 : b.act2;
  return s ? &*s : nullptr;
}

const quant::QuantizerState* SRModel::site_state(std::size_t site) const {
  return const_cast<SRModel*>(this)->site_state(site);
}

std::vector<quant::QuantizerState*> SRModel::quantizer_sites() {
  std::vector<quant::QuantizerState*> out;
  for (std::size_t s = 0; s < site_count(); ++s) {
    if (auto* st = site_state(s)) out.push_back(st);
  }
  return out;
}

std::size_t SRModel::high_level_weight_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.conv1.weight.numel() + b.conv2.weight.numel();
  return n;
}

std::size_t SRModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : weights()) n += p.tensor.numel();
  return n;
}

void SRModel::set_requires_grad(bool value) {
  for (auto& p : weights()) p.tensor.set_requires_grad(value);
  for (auto* st : quantizer_sites()) st->alpha.set_requires_grad(value && st->alpha_trainable());
}

void SRModel::zero_grad() {
  for (auto& p : trainable_parameters()) p.tensor.zero_grad();
}

Tensor SRModel::apply_site(std::size_t site, const Tensor& x, const ForwardOptions& options) {
  if (options.observer) options.observer(site, x);
  auto* st = site_state(site);
  if (!st || !options.quantize) return x;
  if (options.training && st->mode == quant::QuantMode::activation_fixed_max) {
    quant::ema_update_alpha(*st, quant::per_sample_abs_max(x));
  }
  ++quant_calls_;
  return quant::fake_quant_activation(x, *st, options.fake_quant);
}

ForwardResult SRModel::forward(const Tensor& lr_image, const ForwardOptions& options) {
  if (lr_image.rank() != 4 || lr_image.dim(1) != 3) {
    throw DimensionError("forward: expected [N,3,H,W] input, got " + shape_str(lr_image.shape()));
  }
  const auto k = static_cast<std::size_t>(config_.kernel_size);
  if (lr_image.dim(2) < k || lr_image.dim(3) < k) throw DimensionError("forward: input smaller than kernel");

  const std::array<double, 3> shift{-mean_rgb[0] / 255.0, -mean_rgb[1] / 255.0, -mean_rgb[2] / 255.0};
  Tensor x = ops::affine_channels(lr_image, 1.0 / 255.0, shift);
  Tensor h = conv_forward(head, x);
  check_finite(h, head.name);

  Tensor stream = h;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& blk = blocks_[b];
    const bool qw = options.quantize && blk.wq1.has_value();
    Tensor w1 = blk.conv1.weight, w2 = blk.conv2.weight;
    if (qw) {
      w1 = quant::fake_quant_weights(blk.conv1.weight, blk.wq1->n_bits, blk.wq1->frozen_scale, options.fake_quant);
      w2 = quant::fake_quant_weights(blk.conv2.weight, blk.wq2->n_bits, blk.wq2->frozen_scale, options.fake_quant);
      quant_calls_ += 2;
    }
    Tensor y = ops::relu(ops::conv2d(stream, w1, blk.conv1.bias, blk.conv1.padding));
    check_finite(y, blk.conv1.name);
    y = apply_site(2 * b, y, options);
    y = ops::conv2d(y, w2, blk.conv2.bias, blk.conv2.padding);
    check_finite(y, blk.conv2.name);
    y = apply_site(2 * b + 1, y, options);
    stream = ops::add(stream, ops::scale(y, config_.residual_scaling));
  }
  Tensor features = stream;

  Tensor up = features;
  for (const auto& u : upsample) {
    up = ops::pixel_shuffle(conv_forward(u, up), 2);
    check_finite(up, u.name);
  }
  Tensor out = conv_forward(tail, up);
  check_finite(out, tail.name);
  Tensor sr = ops::affine_channels(out, 255.0, mean_rgb);
  return {sr, features};
}

}  // namespace pams::model
