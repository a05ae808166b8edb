#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pams/tensor.hpp"

namespace pams::quant {

enum class QuantMode { weight, activation_pams, activation_fixed_max, activation_pact };

std::string to_string(QuantMode mode);
QuantMode parse_quant_mode(const std::string& name);

inline constexpr double kDefaultEmaBeta = 0.9997;
inline constexpr double kMinAlpha = 1e-6;

/// Per-site quantizer configuration. For activation modes `alpha` is a
/// one-element tensor: trainable for PAMS and PACT, a plain EMA-tracked
/// running max for the fixed-max baseline. In weight mode it holds the last
/// forward's max|w| and is never trained.
struct QuantizerState {
  int n_bits = 8;
  QuantMode mode = QuantMode::activation_pams;
  Tensor alpha = Tensor::scalar(1.0);
  double ema_beta = kDefaultEmaBeta;
  std::int64_t step_count = 0;

  static QuantizerState make(QuantMode mode, int n_bits, double alpha0 = 1.0);

  double alpha_value() const { return alpha.item(); }
  double alpha_grad() const { return alpha.grad()[0]; }
  bool alpha_trainable() const {
    return mode == QuantMode::activation_pams || mode == QuantMode::activation_pact;
  }
  // Re-imposes alpha >= kMinAlpha.
  void project_alpha();
  void validate() const;
};

/// Quantized values plus the saturation masks needed by the custom backward.
/// For PACT the low mask marks x <= 0 (the cut-off region).
struct QuantResult {
  Tensor values;
  std::vector<std::uint8_t> low_mask;
  std::vector<std::uint8_t> high_mask;
  double bound = 0.0;
};

struct QuantGrad {
  Tensor grad_x;
  double grad_alpha = 0.0;
};

/// Step size a / (2^(n-1) - 1).
double quant_scale(int n_bits, double a);

/// Round half away from zero.
inline double round_half_away(double v) { return std::round(v); }

/// clamp to [-a, a], divide by the step, round, multiply back.
QuantResult quantize_symmetric(const Tensor& x, int n_bits, double a);

/// Per-tensor scale a = max|w|. All-zero tensors use the smallest positive
/// normal double as a.
QuantResult quantize_weights(const Tensor& w, int n_bits);
double weight_scale(const Tensor& w);

QuantResult quantize_activation_pams(const Tensor& x, const QuantizerState& state);

/// STE inside (-alpha, alpha), zero through the clamp, and the alpha gradient
/// -1 / 0 / +1 per region summed against the upstream gradient.
QuantGrad pams_backward(const Tensor& upstream, const QuantResult& saved, const QuantizerState& state);

/// Averages the per-sample maxima; the first update (step_count == 0)
/// overwrites alpha, later ones blend with beta.
void ema_update_alpha(QuantizerState& state, std::span<const double> batch_maxes);

QuantResult quantize_activation_fixed_max(const Tensor& x, int n_bits, double running_max);
/// STE inside, zero outside, no alpha gradient.
QuantGrad fixed_max_backward(const Tensor& upstream, const QuantResult& saved);

/// Clip to [0, alpha] on a grid of 2^n - 1 uniform steps.
QuantResult quantize_activation_pact(const Tensor& x, const QuantizerState& state);
/// STE on 0 < x < alpha, alpha gradient only from x >= alpha.
QuantGrad pact_backward(const Tensor& upstream, const QuantResult& saved);

/// Per-sample max |x| over all non-batch axes.
std::vector<double> per_sample_abs_max(const Tensor& x);

// -- Tape-aware fake quantization -------------------------------------------

/// With `round_values == false` the ops evaluate the straight-through
/// surrogate (clamp only), whose exact gradient is what the custom backward
/// rules compute. Used for finite-difference verification.
struct FakeQuantOptions {
  bool round_values = true;
};

/// Weight fake-quantization with an STE backward. When `frozen_scale` > 0 it
/// is used instead of max|w|.
Tensor fake_quant_weights(const Tensor& w, int n_bits, double frozen_scale = 0.0, FakeQuantOptions opts = {});

/// Activation fake-quantization for any activation mode, registering the
/// mode's custom backward (including the alpha gradient) on the active tape.
Tensor fake_quant_activation(const Tensor& x, const QuantizerState& state, FakeQuantOptions opts = {});

}  // namespace pams::quant
