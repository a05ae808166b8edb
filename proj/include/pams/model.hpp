#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pams/quant.hpp"
#include "pams/tensor.hpp"

namespace pams::model {

struct ModelConfig {
  int n_blocks = 4;
  int n_channels = 16;
  int scale_factor = 2;
  std::optional<int> n_bits;  // nullopt = full precision
  double residual_scaling = 1.0;
  quant::QuantMode activation_mode = quant::QuantMode::activation_pams;
  int kernel_size = 3;

  void validate() const;
  bool quantized() const { return n_bits.has_value(); }
};

struct Conv2d {
  std::string name;
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout]
  int padding = 1;
};

struct WeightQuantizer {
  int n_bits = 8;
  // Set when the block was reconstructed from packed codes; replaces max|w|.
  double frozen_scale = 0.0;
};

/// conv1 -> ReLU -> [act1] -> conv2 -> [act2] -> * residual_scaling -> + input.
/// Block convs carry weight quantizers and the two activation sites when the
/// model is quantized.
struct ResBlock {
  Conv2d conv1;
  Conv2d conv2;
  std::optional<WeightQuantizer> wq1, wq2;
  std::optional<quant::QuantizerState> act1, act2;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Receives the pre-quantization activation at an observation site. Sites are
/// numbered 2*block (after ReLU) and 2*block+1 (after the second conv) and
/// exist structurally even in full-precision models.
using ActivationObserver = std::function<void(std::size_t site, const Tensor& activation)>;

struct ForwardOptions {
  bool quantize = true;   // false bypasses every quantizer
  bool training = false;  // fixed-max sites track their running max
  quant::FakeQuantOptions fake_quant{};
  ActivationObserver observer;
};

struct ForwardResult {
  Tensor sr;        // [N,3,H*s,W*s] on the 0..255 scale
  Tensor features;  // high-level extractor output [N,C,H,W]
};

/// EDSR-style network: full-precision head conv, residual blocks (the only
/// quantized region), upsampler of conv + pixel_shuffle(2) stages and an
/// output conv. Inputs are mean-subtracted and scaled to unit range on entry;
/// the inverse is applied on exit.
class SRModel {
 public:
  static SRModel build(const ModelConfig& config, std::uint64_t seed);

  ForwardResult forward(const Tensor& lr_image, const ForwardOptions& options = {});
  Tensor forward_sr(const Tensor& lr_image, const ForwardOptions& options = {}) {
    return forward(lr_image, options).sr;
  }
  Tensor forward_features(const Tensor& lr_image, const ForwardOptions& options = {}) {
    return forward(lr_image, options).features;
  }

  /// Deep copy: no tensor node is shared with the original.
  SRModel clone() const;

  /// Student construction: copies every weight, inserts n-bit weight
  /// quantizers on block convs and activation sites of the given mode.
  /// alpha starts at 1 until calibrated.
  SRModel quantized_copy(int n_bits, quant::QuantMode mode) const;

  /// Conv weights and biases in a stable order (head, blocks, tail).
  std::vector<NamedTensor> weights() const;
  /// Weights plus trainable alphas.
  std::vector<NamedTensor> trainable_parameters() const;

  std::size_t site_count() const { return 2 * blocks_.size(); }
  std::string site_name(std::size_t site) const;
  // Null when the site is not quantized.
  quant::QuantizerState* site_state(std::size_t site);
  const quant::QuantizerState* site_state(std::size_t site) const;
  std::vector<quant::QuantizerState*> quantizer_sites();

  /// High-level extractor (quantized region) conv weights, and everything else.
  std::size_t high_level_weight_count() const;
  std::size_t parameter_count() const;

  void set_requires_grad(bool value);
  void zero_grad();

  std::size_t quantization_calls() const { return quant_calls_; }
  void reset_quantization_calls() { quant_calls_ = 0; }

  const ModelConfig& config() const { return config_; }
  std::array<double, 3> mean_rgb{0.0, 0.0, 0.0};

  Conv2d head;
  std::vector<ResBlock>& blocks() { return blocks_; }
  const std::vector<ResBlock>& blocks() const { return blocks_; }
  std::vector<Conv2d> upsample;  // one conv per x2 stage, Cout = 4C
  Conv2d tail;

  // Assembles a model from parts; used by checkpoint/packed loaders.
  SRModel(ModelConfig config, Conv2d head, std::vector<ResBlock> blocks, std::vector<Conv2d> upsample, Conv2d tail);

 private:
  SRModel() = default;
  Tensor apply_site(std::size_t site, const Tensor& x, const ForwardOptions& options);

  ModelConfig config_;
  std::vector<ResBlock> blocks_;
  std::size_t quant_calls_ = 0;
};

/// Number of x2 pixel-shuffle stages for a scale factor (1 for x2, 2 for x4).
int upsample_stages(int scale_factor);

}  // namespace pams::model
