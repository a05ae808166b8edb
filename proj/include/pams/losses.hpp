#pragma once

#include "pams/tensor.hpp"

namespace pams::losses {

struct LossWeights {
  double lambda_p = 1.0;
  double lambda_s = 1e3;
};

inline constexpr double kNormEpsilon = 1e-12;

/// Mean over the batch of the per-image L1 norm ||hr - sr||_1 (a sum over
/// pixels, not a per-pixel mean). Gradient flows into `sr` only.
Tensor pixel_l1(const Tensor& sr, const Tensor& hr);

/// F[N,C,H,W] -> sum_c F[n,c,h,w]^2 as [N,H,W]. Not recorded on the tape.
Tensor spatial_attention_map(const Tensor& features);

/// Per sample: L2 distance between the L2-normalised spatial maps of student
/// and teacher (norms guarded by kNormEpsilon), averaged over the batch. The
/// teacher never receives gradient.
Tensor skt_loss(const Tensor& student, const Tensor& teacher);

/// lambda_p * l_pix + lambda_s * l_skt, differentiable in both terms.
Tensor total_loss(const Tensor& l_pix, const Tensor& l_skt, const LossWeights& w);
double total_loss(double l_pix, double l_skt, const LossWeights& w);

}  // namespace pams::losses
