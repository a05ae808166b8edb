#pragma once

#include <span>

#include "pams/tensor.hpp"

namespace pams::ops {

/// Zero-padded cross-correlation, stride 1.
/// input [N,Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout] (may be undefined).
/// Output [N,Cout,H+2p-kH+1,W+2p-kW+1].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding);

/// max(0, x); subgradient 0 at x == 0.
Tensor relu(const Tensor& input);

/// [N,C*r*r,H,W] -> [N,C,H*r,W*r]; output(c, h*r+i, w*r+j) = input(c*r*r + i*r + j, h, w).
Tensor pixel_shuffle(const Tensor& input, int r);
/// Inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& input, int r);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// y[n,c,...] = x[n,c,...] * factor + shift[c]; shift is a constant.
Tensor affine_channels(const Tensor& x, double factor, std::span<const double> shift);

/// Sum of all elements as a 1-element tensor.
Tensor sum(const Tensor& x);

// Throws NumericError naming `what` when x holds NaN/Inf.
void require_finite(const Tensor& x, const char* what);

}  // namespace pams::ops
