#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pams/tensor.hpp"

namespace pams::data {

// -- Image I/O ---------------------------------------------------------------

/// Decodes an 8-bit PNG into [3,H,W] with values in [0, 255]. Grayscale is
/// replicated to three channels, alpha is dropped, 16-bit is reduced to 8.
Tensor load_image(const std::filesystem::path& path);
/// Encodes [3,H,W] as 8-bit RGB PNG, rounding and clamping to [0, 255].
void save_image(const Tensor& image, const std::filesystem::path& path);
/// Grayscale [1,H,W] encoder, mostly for tests of the promotion rule.
void save_gray_image(const Tensor& image, const std::filesystem::path& path);

// -- Geometry and augmentation ----------------------------------------------

Tensor flip_horizontal(const Tensor& image);
/// Rotates by k * 90 degrees counter-clockwise.
Tensor rotate90(const Tensor& image, int k);
/// Crops [C,H,W] to rows [y, y+h) and columns [x, x+w).
Tensor crop(const Tensor& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w);
/// Stacks equally shaped [C,H,W] images into [N,C,H,W].
Tensor stack(const std::vector<Tensor>& images);
/// Extracts image i of [N,C,H,W] as [C,H,W].
Tensor unstack(const Tensor& batch, std::size_t i);
Tensor clamp_pixels(const Tensor& image);

struct ImagePair {
  Tensor lr;  // [3,H,W]
  Tensor hr;  // [3,H*s,W*s]
  std::string id;
};

/// One of the 8 flip/rotation combinations.
struct Augmentation {
  bool flip = false;
  int rotation = 0;  // quarter turns

  static Augmentation sample(std::mt19937_64& rng);
  Tensor apply(const Tensor& image) const;
};

/// Subtracts mean_rgb from both images and, when augment is set, applies one
/// rng-chosen flip/rotation to LR and HR identically.
ImagePair preprocess(const ImagePair& pair, const std::array<double, 3>& mean_rgb, bool augment, std::mt19937_64& rng);

// -- Resampling --------------------------------------------------------------

struct Factor {
  int num = 1;
  int den = 1;
  double value() const { return static_cast<double>(num) / den; }
};

/// Bicubic kernel with a = -0.5 and clamped edges. Downscaling widens the
/// kernel by the inverse factor (antialiasing). Supported factors: 1/4, 1/2,
/// 1, 2, 4.
Tensor bicubic_resize(const Tensor& image, Factor factor);
double cubic_kernel(double x);

// -- Metrics -----------------------------------------------------------------

/// BT.601 luma: 0.299 R + 0.587 G + 0.114 B, on [3,H,W] -> [H,W].
std::vector<double> to_luma(const Tensor& image);

/// PSNR over Y with `shave` border pixels excluded. Identical inputs return
/// +infinity.
double psnr_y(const Tensor& sr, const Tensor& hr, int shave);

/// Single-scale SSIM on Y: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 255, averaged over valid windows.
double ssim_y(const Tensor& sr, const Tensor& hr, int shave = 0);

struct ImageScore {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct EvalResult {
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::vector<ImageScore> per_image;
};

/// Averages per-image scores. Infinite PSNRs are averaged as infinite.
EvalResult summarize(std::vector<ImageScore> scores);

// -- Dataset -----------------------------------------------------------------

struct Dataset {
  int scale = 2;
  std::vector<ImagePair> train, val, test;

  const std::vector<ImagePair>& split(const std::string& name) const;
  /// Held-out split for evaluation: val when present, else test.
  const std::vector<ImagePair>& held_out() const;
};

/// Reads `<dir>/manifest.txt` (lines `<split> <relative-path>`, `#` comments),
/// loads the HR PNGs, crops them to a multiple of `scale` and synthesises LR
/// with bicubic downscaling.
Dataset load_dataset(const std::filesystem::path& dir, int scale);

/// Mean RGB of the HR training images.
std::array<double, 3> mean_rgb(const std::vector<ImagePair>& pairs);

/// Writes a procedurally generated corpus (shapes, edges, gradients, stripes
/// and noise) plus manifest.txt. The last `n_test` images form the test split.
void write_toy_corpus(const std::filesystem::path& dir, int count, int size, int n_test, std::uint64_t seed);

struct Batch {
  Tensor lr;  // [B,3,p,p]
  Tensor hr;  // [B,3,p*s,p*s]
};

/// Draws random aligned LR/HR patches in an order fixed by the seed. Images
/// are visited in a reshuffled order each pass.
class PatchSampler {
 public:
  PatchSampler(const std::vector<ImagePair>& pairs, int lr_patch, int scale, bool augment, std::uint64_t seed);
  Batch next(int batch_size);

 private:
  const std::vector<ImagePair>* pairs_;
  int lr_patch_;
  int scale_;
  bool augment_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace pams::data
