#include "pams/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <utility>
#include <memory>

#include "pams/errors.hpp"

namespace pams::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
  int pad;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

// Output columns x with 0 <= x + v - pad < w.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t v) {
  const long lo = std::max<long>(0, g.pad - static_cast<long>(v));
  const long hi = std::min<long>(static_cast<long>(g.wo), static_cast<long>(g.w) + g.pad - static_cast<long>(v));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

// cols[(ci*kh + u)*kw + v, y*wo + x] = in[ci, y+u-pad, x+v-pad] (0 outside).
void im2col(const double* in, const ConvGeometry& g, double* cols) {
  const auto P = g.p();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = in + ci * g.h * g.w;
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        double* row = cols + ((ci * g.kh + u) * g.kw + v) * P;
        for (std::size_t y = 0; y < g.ho; ++y) {
          const long sy = static_cast<long>(y + u) - g.pad;
          double* out = row + y * g.wo;
          if (sy < 0 || sy >= static_cast<long>(g.h)) {
            std::fill(out, out + g.wo, 0.0);
            continue;
          }
          const double* src = plane + sy * g.w;
          const auto [x0, x1] = valid_columns(g, v);
          std::fill(out, out + x0, 0.0);
          for (std::size_t x = x0; x < x1; ++x) out[x] = src[x + v - g.pad];
          std::fill(out + x1, out + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* in_grad) {
  const auto P = g.p();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* plane = in_grad + ci * g.h * g.w;
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        const double* row = cols + ((ci * g.kh + u) * g.kw + v) * P;
        for (std::size_t y = 0; y < g.ho; ++y) {
          const long sy = static_cast<long>(y + u) - g.pad;
          if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
          double* dst = plane + sy * g.w;
          const double* src = row + y * g.wo;
          const auto [x0, x1] = valid_columns(g, v);
          for (std::size_t x = x0; x < x1; ++x) dst[x + v - g.pad] += src[x];
        }
      }
    }
  }
}

}  // namespace

void require_finite(const Tensor& x, const char* what) {
  if (!x.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding) {
  if (input.rank() != 4 || weight.rank() != 4) throw DimensionError("conv2d: expects 4-D input and weight");
  if (padding < 0) throw ParameterError("conv2d: negative padding");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.pad = padding;
  if (weight.dim(1) != g.cin) {
    throw DimensionError("conv2d: input has " + std::to_string(g.cin) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw DimensionError("conv2d: kernel dims must be odd");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias must have shape [Cout]");
  }
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
    throw DimensionError("conv2d: input smaller than kernel");
  }
  require_finite(input, "conv2d input");
  require_finite(weight, "conv2d weight");
  if (bias.defined()) require_finite(bias, "conv2d bias");

  g.ho = g.h + 2 * padding - g.kh + 1;
  g.wo = g.w + 2 * padding - g.kw + 1;
  const auto K = g.k();
  const auto P = g.p();
  const bool record = needs_recording({&input, &weight, &bias});

  auto cols = std::make_shared<std::vector<double>>(g.n * K * P);
  std::vector<double> out(g.n * g.cout * P);
  ConstMapMatrix wm(weight.data().data(), g.cout, K);
  const auto in = input.data();
  for (std::size_t s = 0; s < g.n; ++s) {
    double* c = cols->data() + s * K * P;
    im2col(in.data() + s * g.cin * g.h * g.w, g, c);
    MapMatrix om(out.data() + s * g.cout * P, g.cout, P);
    om.noalias() = wm * ConstMapMatrix(c, K, P);
    if (bias.defined()) {
      const auto b = bias.data();
      for (std::size_t co = 0; co < g.cout; ++co) om.row(co).array() += b[co];
    }
  }
  Tensor result({g.n, g.cout, g.ho, g.wo}, std::move(out));
  if (!record) return result;

  active_tape()->record(result, {input, weight, bias}, [input, weight, bias, g, cols](std::span<const double> go) mutable {
    const auto K = g.k();
    const auto P = g.p();
    if (weight.requires_grad()) {
      MapMatrix dw(weight.grad_mut().data(), g.cout, K);
      for (std::size_t s = 0; s < g.n; ++s) {
        ConstMapMatrix gm(go.data() + s * g.cout * P, g.cout, P);
        dw.noalias() += gm * ConstMapMatrix(cols->data() + s * K * P, K, P).transpose();
      }
    }
    if (bias.defined() && bias.requires_grad()) {
      auto db = bias.grad_mut();
      for (std::size_t s = 0; s < g.n; ++s) {
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* row = go.data() + (s * g.cout + co) * P;
          double acc = 0.0;
          for (std::size_t i = 0; i < P; ++i) acc += row[i];
          db[co] += acc;
        }
      }
    }
    if (input.requires_grad()) {
      ConstMapMatrix wm(weight.data().data(), g.cout, K);
      RowMatrix dcols(K, P);
      auto di = input.grad_mut();
      for (std::size_t s = 0; s < g.n; ++s) {
        ConstMapMatrix gm(go.data() + s * g.cout * P, g.cout, P);
        dcols.noalias() = wm.transpose() * gm;
        col2im_add(dcols.data(), g, di.data() + s * g.cin * g.h * g.w);
      }
    }
  });
  return result;
}

Tensor relu(const Tensor& input) {
  const auto x = input.data();
  std::vector<double> out(x.size());
  std::vector<std::uint8_t> positive(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    positive[i] = x[i] > 0.0;
    out[i] = positive[i] ? x[i] : 0.0;
  }
  Tensor result(input.shape(), std::move(out));
  if (!needs_recording({&input})) return result;
  auto mask = std::make_shared<std::vector<std::uint8_t>>(positive);
  active_tape()->record(
      result, {input},
      [input, mask](std::span<const double> go) mutable {
        auto gi = input.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) {
          if ((*mask)[i]) gi[i] += go[i];
        }
      },
      std::move(positive));
  return result;
}

namespace {

// Maps (n, c_in, h, w) of the packed tensor to the shuffled output index.
template <typename F>
void for_each_shuffle_index(std::size_t n, std::size_t c_out, std::size_t h, std::size_t w, std::size_t r, F&& f) {
  const std::size_t c_in = c_out * r * r;
  const std::size_t oh = h * r, ow = w * r;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < c_out; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
          const std::size_t ci = c * r * r + i * r + j;
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
              const std::size_t src = ((b * c_in + ci) * h + y) * w + x;
              const std::size_t dst = ((b * c_out + c) * oh + (y * r + i)) * ow + (x * r + j);
              f(src, dst);
            }
        }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& input, int r) {
  if (input.rank() != 4) throw DimensionError("pixel_shuffle: expects 4-D input");
  if (r < 1) throw ParameterError("pixel_shuffle: factor must be >= 1");
  const std::size_t ru = static_cast<std::size_t>(r);
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (c % (ru * ru) != 0) {
    throw DimensionError("pixel_shuffle: " + std::to_string(c) + " channels not divisible by r^2 = " +
                         std::to_string(ru * ru));
  }
  const auto c_out = c / (ru * ru);
  const auto x = input.data();
  std::vector<double> out(x.size());
  for_each_shuffle_index(n, c_out, h, w, ru, [&](std::size_t s, std::size_t d) { out[d] = x[s]; });
  Tensor result({n, c_out, h * ru, w * ru}, std::move(out));
  if (!needs_recording({&input})) return result;
  active_tape()->record(result, {input}, [input, n, c_out, h, w, ru](std::span<const double> go) mutable {
    auto gi = input.grad_mut();
    for_each_shuffle_index(n, c_out, h, w, ru, [&](std::size_t s, std::size_t d) { gi[s] += go[d]; });
  });
  return result;
}

Tensor pixel_unshuffle(const Tensor& input, int r) {
  if (input.rank() != 4) throw DimensionError("pixel_unshuffle: expects 4-D input");
  if (r < 1) throw ParameterError("pixel_unshuffle: factor must be >= 1");
  const std::size_t ru = static_cast<std::size_t>(r);
  const auto n = input.dim(0), c = input.dim(1), oh = input.dim(2), ow = input.dim(3);
  if (oh % ru != 0 || ow % ru != 0) throw DimensionError("pixel_unshuffle: spatial dims not divisible by r");
  const auto h = oh / ru, w = ow / ru;
  const auto x = input.data();
  std::vector<double> out(x.size());
  for_each_shuffle_index(n, c, h, w, ru, [&](std::size_t s, std::size_t d) { out[s] = x[d]; });
  Tensor result({n, c * ru * ru, h, w}, std::move(out));
  if (!needs_recording({&input})) return result;
  active_tape()->record(result, {input}, [input, n, c, h, w, ru](std::span<const double> go) mutable {
    auto gi = input.grad_mut();
    for_each_shuffle_index(n, c, h, w, ru, [&](std::size_t s, std::size_t d) { gi[d] += go[s]; });
  });
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  Tensor result(a.shape(), std::move(out));
  if (!needs_recording({&a, &b})) return result;
  active_tape()->record(result, {a, b}, [a, b](std::span<const double> go) mutable {
    if (a.requires_grad()) a.accumulate_grad(go);
    if (b.requires_grad()) b.accumulate_grad(go);
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  Tensor result(a.shape(), std::move(out));
  if (!needs_recording({&a, &b})) return result;
  active_tape()->record(result, {a, b}, [a, b](std::span<const double> go) mutable {
    const auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
    }
  });
  return result;
}

Tensor scale(const Tensor& x, double factor) {
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * factor;
  Tensor result(x.shape(), std::move(out));
  if (!needs_recording({&x})) return result;
  active_tape()->record(result, {x}, [x, factor](std::span<const double> go) mutable {
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
  });
  return result;
}

Tensor affine_channels(const Tensor& x, double factor, std::span<const double> shift) {
  if (x.rank() < 2 || x.dim(1) != shift.size()) {
    throw DimensionError("affine_channels: channel count does not match shift vector");
  }
  const auto n = x.dim(0), c = x.dim(1);
  const auto plane = x.numel() / (n * c);
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = v[base + i] * factor + shift[ch];
    }
  Tensor result(x.shape(), std::move(out));
  if (!needs_recording({&x})) return result;
  active_tape()->record(result, {x}, [x, factor](std::span<const double> go) mutable {
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
  });
  return result;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor result = Tensor::scalar(acc);
  if (!needs_recording({&x})) return result;
  active_tape()->record(result, {x}, [x](std::span<const double> go) mutable {
    auto gx = x.grad_mut();
    for (auto& g : gx) g += go[0];
  });
  return result;
}

}  // namespace pams::ops
