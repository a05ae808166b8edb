#include "pams/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "pams/errors.hpp"
#include "pams/ops.hpp"

namespace pams::losses {

Tensor pixel_l1(const Tensor& sr, const Tensor& hr) {
  if (sr.shape() != hr.shape()) {
    throw DimensionError("pixel_l1: shape mismatch " + shape_str(sr.shape()) + " vs " + shape_str(hr.shape()));
  }
  if (sr.rank() < 1 || sr.dim(0) == 0) throw DimensionError("pixel_l1: empty batch");
  const double n = static_cast<double>(sr.dim(0));
  const auto a = sr.data(), b = hr.data();
  double acc = 0.0;
  std::vector<std::uint8_t> sign(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += std::abs(d);
    sign[i] = d > 0.0 ? 2 : (d < 0.0 ? 0 : 1);
  }
  Tensor result = Tensor::scalar(acc / n);
  if (!needs_recording({&sr})) return result;
  auto signs = std::make_shared<std::vector<std::uint8_t>>(sign);
  active_tape()->record(
      result, {sr},
      [sr, signs, n](std::span<const double> go) mutable {
        auto g = sr.grad_mut();
        const double scale = go[0] / n;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * (static_cast<double>((*signs)[i]) - 1.0);
      },
      std::move(sign));
  return result;
}

Tensor spatial_attention_map(const Tensor& features) {
  if (features.rank() != 4) throw DimensionError("spatial_attention_map: expects [N,C,H,W]");
  const auto n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  if (c == 0) throw DimensionError("spatial_attention_map: no channels");
  const auto f = features.data();
  const auto plane = h * w;
  std::vector<double> out(n * plane, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = f.data() + (b * c + ch) * plane;
      double* dst = out.data() + b * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i] * src[i];
    }
  return Tensor({n, h, w}, std::move(out));
}

Tensor skt_loss(const Tensor& student, const Tensor& teacher) {
  if (student.shape() != teacher.shape()) {
    throw DimensionError("skt_loss: shape mismatch " + shape_str(student.shape()) + " vs " +
                         shape_str(teacher.shape()));
  }
  const Tensor ms = spatial_attention_map(student);
  const Tensor mt = spatial_attention_map(teacher);
  const auto n = student.dim(0), c = student.dim(1);
  const auto plane = student.dim(2) * student.dim(3);
  const auto s = ms.data(), t = mt.data();

  // Per sample: normalised maps u = s/|s|, v = t/|t| and the difference norm.
  auto diff = std::make_shared<std::vector<double>>(n * plane);
  auto sample_norm = std::make_shared<std::vector<double>>(n);
  auto sample_dist = std::make_shared<std::vector<double>>(n);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    double ns = 0.0, nt = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      ns += s[b * plane + i] * s[b * plane + i];
      nt += t[b * plane + i] * t[b * plane + i];
    }
    ns = std::max(std::sqrt(ns), kNormEpsilon);
    nt = std::max(std::sqrt(nt), kNormEpsilon);
    double dist = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = s[b * plane + i] / ns - t[b * plane + i] / nt;
      (*diff)[b * plane + i] = d;
      dist += d * d;
    }
    dist = std::sqrt(dist);
    (*sample_norm)[b] = ns;
    (*sample_dist)[b] = dist;
    total += dist;
  }
  Tensor result = Tensor::scalar(total / static_cast<double>(n));
  if (!needs_recording({&student})) return result;

  active_tape()->record(result, {student}, [student, ms, diff, sample_norm, sample_dist, n, c, plane](std::span<const double> go) mutable {
    const auto s = ms.data();
    const auto f = student.data();
    auto gf = student.grad_mut();
    for (std::size_t b = 0; b < n; ++b) {
      const double dist = (*sample_dist)[b];
      if (dist == 0.0) continue;  // subgradient 0 at coincident maps
      const double ns = (*sample_norm)[b];
      const double* d = diff->data() + b * plane;
      const double* sb = s.data() + b * plane;
      // dL/du = d/dist; u = s/|s| => dL/ds = (dL/du - u (u . dL/du)) / |s|
      // (the projection term vanishes when |s| is clamped by the epsilon).
      const bool clamped = ns <= kNormEpsilon;
      double u_dot = 0.0;
      if (!clamped) {
        for (std::size_t i = 0; i < plane; ++i) u_dot += (sb[i] / ns) * (d[i] / dist);
      }
      const double scale = go[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < plane; ++i) {
        const double du = d[i] / dist;
        const double ds = (du - (clamped ? 0.0 : (sb[i] / ns) * u_dot)) / ns;
        // s = sum_c f_c^2 => ds/df_c = 2 f_c
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t idx = (b * c + ch) * plane + i;
          gf[idx] += scale * ds * 2.0 * f[idx];
        }
      }
    }
  });
  return result;
}

Tensor total_loss(const Tensor& l_pix, const Tensor& l_skt, const LossWeights& w) {
  if (w.lambda_p < 0.0 || w.lambda_s < 0.0) throw ParameterError("loss weights must be non-negative");
  return ops::add(ops::scale(l_pix, w.lambda_p), ops::scale(l_skt, w.lambda_s));
}

double total_loss(double l_pix, double l_skt, const LossWeights& w) {
  if (w.lambda_p < 0.0 || w.lambda_s < 0.0) throw ParameterError("loss weights must be non-negative");
  return w.lambda_p * l_pix + w.lambda_s * l_skt;
}

}  // namespace pams::losses
