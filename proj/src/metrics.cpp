#include <algorithm>
#include <cmath>
#include <limits>

#include "pams/data.hpp"
#include "pams/errors.hpp"

namespace pams::data {

std::vector<double> to_luma(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("to_luma: expects [3,H,W]");
  const auto plane = image.dim(1) * image.dim(2);
  const auto v = image.data();
  std::vector<double> y(plane);
  for (std::size_t i = 0; i < plane; ++i) y[i] = 0.299 * v[i] + 0.587 * v[plane + i] + 0.114 * v[2 * plane + i];
  return y;
}

namespace {

void require_pair(const Tensor& sr, const Tensor& hr, const char* what) {
  if (sr.shape() != hr.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(sr.shape()) + " vs " +
                         shape_str(hr.shape()));
  }
}

// Luma plane with `shave` pixels removed from every border.
std::vector<double> shaved_luma(const Tensor& image, int shave, std::size_t& h, std::size_t& w) {
  if (shave < 0) throw ParameterError("shave must be non-negative");
  const auto full = to_luma(image);
  const auto fh = image.dim(1), fw = image.dim(2);
  const auto s = static_cast<std::size_t>(shave);
  if (2 * s >= fh || 2 * s >= fw) throw ParameterError("shave removes the whole image");
  h = fh - 2 * s;
  w = fw - 2 * s;
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = full[(y + s) * fw + x + s];
  return out;
}

}  // namespace

double psnr_y(const Tensor& sr, const Tensor& hr, int shave) {
  require_pair(sr, hr, "psnr_y");
  std::size_t h = 0, w = 0;
  const auto a = shaved_luma(sr, shave, h, w);
  const auto b = shaved_luma(hr, shave, h, w);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim_y(const Tensor& sr, const Tensor& hr, int shave) {
  require_pair(sr, hr, "ssim_y");
  std::size_t h = 0, w = 0;
  const auto a = shaved_luma(sr, shave, h, w);
  const auto b = shaved_luma(hr, shave, h, w);
  constexpr std::size_t kWin = 11;
  if (h < kWin || w < kWin) throw ParameterError("ssim_y: image smaller than the 11x11 window");

  std::array<double, kWin> g{};
  double gsum = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    gsum += g[i];
  }
  for (auto& v : g) v /= gsum;

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + kWin <= h; ++y)
    for (std::size_t x = 0; x + kWin <= w; ++x) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (std::size_t u = 0; u < kWin; ++u)
        for (std::size_t v = 0; v < kWin; ++v) {
          const double k = g[u] * g[v];
          const double pa = a[(y + u) * w + x + v], pb = b[(y + u) * w + x + v];
          ma += k * pa;
          mb += k * pb;
          saa += k * pa * pa;
          sbb += k * pb * pb;
          sab += k * pa * pb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

EvalResult summarize(std::vector<ImageScore> scores) {
  EvalResult r;
  if (!scores.empty()) {
    for (const auto& s : scores) {
      r.psnr_db += s.psnr_db;
      r.ssim += s.ssim;
    }
    r.psnr_db /= static_cast<double>(scores.size());
    r.ssim /= static_cast<double>(scores.size());
  }
  r.per_image = std::move(scores);
  return r;
}

}  // namespace pams::data
