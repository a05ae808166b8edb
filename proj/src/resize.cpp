#include <algorithm>
#include <cmath>

#include "pams/data.hpp"
#include "pams/errors.hpp"

namespace pams::data {

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return (a + 2.0) * ax * ax * ax - (a + 3.0) * ax * ax + 1.0;
  if (ax < 2.0) return a * ax * ax * ax - 5.0 * a * ax * ax + 8.0 * a * ax - 4.0 * a;
  return 0.0;
}

namespace {

struct Contribution {
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

// Normalised 1-D taps for every output sample along one axis.
std::vector<Contribution> contributions(std::size_t in_len, std::size_t out_len, double scale) {
  const bool shrink = scale < 1.0;
  const double width = shrink ? 4.0 / scale : 4.0;
  std::vector<Contribution> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / scale - 0.5;
    const long left = static_cast<long>(std::floor(u - width / 2.0));
    const long taps = static_cast<long>(std::ceil(width)) + 2;
    double total = 0.0;
    for (long t = 0; t < taps; ++t) {
      const long j = left + t;
      const double w = shrink ? scale * cubic_kernel(scale * (u - j)) : cubic_kernel(u - j);
      if (w == 0.0) continue;
      const long clamped = std::clamp(j, 0L, static_cast<long>(in_len) - 1);
      out[i].index.push_back(static_cast<std::size_t>(clamped));
      out[i].weight.push_back(w);
      total += w;
    }
    for (auto& w : out[i].weight) w /= total;
  }
  return out;
}

}  // namespace

Tensor bicubic_resize(const Tensor& image, Factor factor) {
  if (image.rank() != 3) throw DimensionError("bicubic_resize: expects [C,H,W]");
  const bool supported = (factor.den == 1 && (factor.num == 1 || factor.num == 2 || factor.num == 4)) ||
                         (factor.num == 1 && (factor.den == 2 || factor.den == 4));
  if (!supported) {
    throw ParameterError("bicubic_resize: unsupported factor " + std::to_string(factor.num) + "/" +
                         std::to_string(factor.den));
  }
  if (factor.num == factor.den) return image.detach();
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h % factor.den != 0 || w % factor.den != 0) {
    throw DimensionError("bicubic_resize: image dims not divisible by the downscale factor");
  }
  const std::size_t oh = h * factor.num / factor.den, ow = w * factor.num / factor.den;
  const double s = factor.value();
  const auto rows = contributions(h, oh, s);
  const auto cols = contributions(w, ow, s);
  const auto v = image.data();

  // Horizontal pass then vertical.
  std::vector<double> tmp(c * h * ow, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        const auto& k = cols[x];
        for (std::size_t t = 0; t < k.index.size(); ++t) acc += k.weight[t] * v[(ch * h + y) * w + k.index[t]];
        tmp[(ch * h + y) * ow + x] = acc;
      }
  std::vector<double> out(c * oh * ow, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y) {
      const auto& k = rows[y];
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < k.index.size(); ++t) acc += k.weight[t] * tmp[(ch * h + k.index[t]) * ow + x];
        out[(ch * oh + y) * ow + x] = acc;
      }
    }
  return Tensor({c, oh, ow}, std::move(out));
}

}  // namespace pams::data
