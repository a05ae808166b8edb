#include "pams/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "pams/errors.hpp"

namespace pams::quant {

std::string to_string(QuantMode mode) {
  switch (mode) {
    case QuantMode::weight: return "weight";
    case QuantMode::activation_pams: return "pams";
    case QuantMode::activation_fixed_max: return "fixed_max";
    case QuantMode::activation_pact: return "pact";
  }
  return "unknown";
}

QuantMode parse_quant_mode(const std::string& name) {
  if (name == "pams") return QuantMode::activation_pams;
  if (name == "fixed_max") return QuantMode::activation_fixed_max;
  if (name == "pact") return QuantMode::activation_pact;
  if (name == "weight") return QuantMode::weight;
  throw ParameterError("unknown quantizer '" + name + "' (expected pams, fixed_max or pact)");
}

QuantizerState QuantizerState::make(QuantMode mode, int n_bits, double alpha0) {
  QuantizerState s;
  s.mode = mode;
  s.n_bits = n_bits;
  s.alpha = Tensor::scalar(alpha0, false);
  s.alpha.set_requires_grad(s.alpha_trainable());
  s.validate();
  return s;
}

void QuantizerState::project_alpha() {
  auto a = alpha.mutable_data();
  a[0] = std::max(a[0], kMinAlpha);
}

void QuantizerState::validate() const {
  if (n_bits < 2 || n_bits > 16) throw ParameterError("n_bits must lie in [2, 16], got " + std::to_string(n_bits));
  if (!(alpha.item() > 0.0) || !std::isfinite(alpha.item())) throw ParameterError("alpha must be positive and finite");
  if (!(ema_beta >= 0.0 && ema_beta < 1.0)) throw ParameterError("ema_beta must lie in [0, 1)");
}

namespace {

double max_level(int n_bits) { return static_cast<double>((std::int64_t{1} << (n_bits - 1)) - 1); }

void check_bits(int n_bits) {
  if (n_bits < 2) throw ParameterError("quantization needs at least 2 bits, got " + std::to_string(n_bits));
  if (n_bits > 16) throw ParameterError("quantization supports at most 16 bits, got " + std::to_string(n_bits));
}

void check_bound(double a) {
  if (!(a > 0.0) || !std::isfinite(a)) throw ParameterError("quantization bound must be positive and finite");
}

void require_same_numel(const Tensor& upstream, const QuantResult& saved) {
  if (upstream.numel() != saved.low_mask.size() || upstream.numel() != saved.high_mask.size()) {
    throw DimensionError("quantizer backward: upstream gradient does not match saved masks");
  }
}

// Symmetric forward shared by the PAMS, fixed-max and weight paths.
QuantResult symmetric_forward(const Tensor& x, int n_bits, double a, bool round_values) {
  check_bits(n_bits);
  check_bound(a);
  const double levels = max_level(n_bits);
  const auto v = x.data();
  std::vector<double> out(v.size());
  QuantResult r;
  r.low_mask.resize(v.size());
  r.high_mask.resize(v.size());
  r.bound = a;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw NumericError("quantize: non-finite input");
    r.low_mask[i] = v[i] <= -a;
    r.high_mask[i] = v[i] >= a;
    const double c = std::clamp(v[i], -a, a);
    out[i] = round_values ? std::clamp(round_half_away(c * levels / a) * a / levels, -a, a) : c;
  }
  r.values = Tensor(x.shape(), std::move(out));
  return r;
}

QuantResult pact_forward(const Tensor& x, int n_bits, double alpha, bool round_values) {
  check_bits(n_bits);
  check_bound(alpha);
  const double levels = static_cast<double>((std::int64_t{1} << n_bits) - 1);
  const auto v = x.data();
  std::vector<double> out(v.size());
  QuantResult r;
  r.low_mask.resize(v.size());
  r.high_mask.resize(v.size());
  r.bound = alpha;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw NumericError("quantize: non-finite input");
    r.low_mask[i] = v[i] <= 0.0;
    r.high_mask[i] = v[i] >= alpha;
    const double c = std::clamp(v[i], 0.0, alpha);
    out[i] = round_values ? std::min(round_half_away(c * levels / alpha) * alpha / levels, alpha) : c;
  }
  r.values = Tensor(x.shape(), std::move(out));
  return r;
}

// grad_x = upstream on the interior, 0 on either saturated side.
Tensor interior_pass_through(const Tensor& upstream, const QuantResult& saved) {
  const auto g = upstream.data();
  std::vector<double> gx(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    gx[i] = (saved.low_mask[i] || saved.high_mask[i]) ? 0.0 : g[i];
  }
  return Tensor(upstream.shape(), std::move(gx));
}

std::vector<std::uint8_t> region_codes(const QuantResult& r) {
  std::vector<std::uint8_t> codes(r.low_mask.size());
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = r.low_mask[i] ? 0 : (r.high_mask[i] ? 2 : 1);
  return codes;
}

}  // namespace

double quant_scale(int n_bits, double a) {
  check_bits(n_bits);
  check_bound(a);
  return a / max_level(n_bits);
}

QuantResult quantize_symmetric(const Tensor& x, int n_bits, double a) { return symmetric_forward(x, n_bits, a, true); }

double weight_scale(const Tensor& w) {
  if (w.numel() == 0) throw ParameterError("quantize_weights: empty tensor");
  double a = 0.0;
  for (double v : w.data()) {
    if (!std::isfinite(v)) throw NumericError("quantize_weights: non-finite weight");
    a = std::max(a, std::abs(v));
  }
  return a > 0.0 ? a : std::numeric_limits<double>::min();
}

QuantResult quantize_weights(const Tensor& w, int n_bits) { return quantize_symmetric(w, n_bits, weight_scale(w)); }

QuantResult quantize_activation_pams(const Tensor& x, const QuantizerState& state) {
  if (state.mode != QuantMode::activation_pams) throw ParameterError("quantize_activation_pams: state is not in PAMS mode");
  return quantize_symmetric(x, state.n_bits, state.alpha_value());
}

QuantGrad pams_backward(const Tensor& upstream, const QuantResult& saved, const QuantizerState&) {
  require_same_numel(upstream, saved);
  const auto g = upstream.data();
  double ga = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (saved.high_mask[i]) ga += g[i];
    else if (saved.low_mask[i]) ga -= g[i];
  }
  return {interior_pass_through(upstream, saved), ga};
}

void ema_update_alpha(QuantizerState& state, std::span<const double> batch_maxes) {
  if (batch_maxes.empty()) throw ParameterError("ema_update_alpha: empty batch");
  double mean = 0.0;
  for (double m : batch_maxes) {
    if (!std::isfinite(m)) throw NumericError("ema_update_alpha: non-finite activation maximum");
    mean += m;
  }
  mean /= static_cast<double>(batch_maxes.size());
  const double beta = state.step_count == 0 ? 0.0 : state.ema_beta;
  auto a = state.alpha.mutable_data();
  a[0] = beta * a[0] + (1.0 - beta) * mean;
  state.step_count += 1;
  state.project_alpha();
}

QuantResult quantize_activation_fixed_max(const Tensor& x, int n_bits, double running_max) {
  return quantize_symmetric(x, n_bits, running_max);
}

QuantGrad fixed_max_backward(const Tensor& upstream, const QuantResult& saved) {
  require_same_numel(upstream, saved);
  return {interior_pass_through(upstream, saved), 0.0};
}

QuantResult quantize_activation_pact(const Tensor& x, const QuantizerState& state) {
  if (state.mode != QuantMode::activation_pact) throw ParameterError("quantize_activation_pact: state is not in PACT mode");
  return pact_forward(x, state.n_bits, state.alpha_value(), true);
}

QuantGrad pact_backward(const Tensor& upstream, const QuantResult& saved) {
  require_same_numel(upstream, saved);
  const auto g = upstream.data();
  double ga = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (saved.high_mask[i]) ga += g[i];
  }
  return {interior_pass_through(upstream, saved), ga};
}

std::vector<double> per_sample_abs_max(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) == 0) throw DimensionError("per_sample_abs_max: empty batch");
  const auto n = x.dim(0);
  const auto per = x.numel() / n;
  const auto v = x.data();
  std::vector<double> out(n, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < per; ++i) out[b] = std::max(out[b], std::abs(v[b * per + i]));
  return out;
}

Tensor fake_quant_weights(const Tensor& w, int n_bits, double frozen_scale, FakeQuantOptions opts) {
  const double a = frozen_scale > 0.0 ? frozen_scale : weight_scale(w);
  QuantResult r = symmetric_forward(w, n_bits, a, opts.round_values);
  if (!needs_recording({&w})) return r.values;
  active_tape()->record(r.values, {w}, [w](std::span<const double> go) mutable { w.accumulate_grad(go); });
  return r.values;
}

Tensor fake_quant_activation(const Tensor& x, const QuantizerState& state, FakeQuantOptions opts) {
  QuantResult r;
  switch (state.mode) {
    case QuantMode::activation_pams:
    case QuantMode::activation_fixed_max:
      r = symmetric_forward(x, state.n_bits, state.alpha_value(), opts.round_values);
      break;
    case QuantMode::activation_pact:
      r = pact_forward(x, state.n_bits, state.alpha_value(), opts.round_values);
      break;
    case QuantMode::weight:
      throw ParameterError("fake_quant_activation: weight-mode state");
  }
  Tensor out = r.values;
  Tensor alpha = state.alpha;
  const bool alpha_grad = state.alpha_trainable() && alpha.requires_grad();
  if (!needs_recording({&x, alpha_grad ? &alpha : nullptr})) return out;

  auto saved = std::make_shared<QuantResult>(std::move(r));
  const QuantMode mode = state.mode;
  std::vector<std::uint8_t> region = region_codes(*saved);
  active_tape()->record(
      out, {x, alpha},
      [x, alpha, saved, mode, state](std::span<const double> go) mutable {
        Tensor upstream(x.shape(), std::vector<double>(go.begin(), go.end()));
        QuantGrad qg;
        if (mode == QuantMode::activation_pams) qg = pams_backward(upstream, *saved, state);
        else if (mode == QuantMode::activation_pact) qg = pact_backward(upstream, *saved);
        else qg = fixed_max_backward(upstream, *saved);
        if (x.requires_grad()) x.accumulate_grad(qg.grad_x.data());
        if (mode != QuantMode::activation_fixed_max && alpha.requires_grad()) alpha.grad_mut()[0] += qg.grad_alpha;
      },
      std::move(region));
  return out;
}

}  // namespace pams::quant
