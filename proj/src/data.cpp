#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pams/data.hpp"
#include "pams/errors.hpp"

namespace pams::data {

namespace {

void require_image(const Tensor& image, const char* what) {
  if (image.rank() != 3) throw DimensionError(std::string(what) + ": expects [C,H,W]");
}

}  // namespace

Tensor flip_horizontal(const Tensor& image) {
  require_image(image, "flip_horizontal");
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto v = image.data();
  std::vector<double> out(v.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = v[(ch * h + y) * w + (w - 1 - x)];
  return Tensor(image.shape(), std::move(out));
}

Tensor rotate90(const Tensor& image, int k) {
  require_image(image, "rotate90");
  k = ((k % 4) + 4) % 4;
  Tensor cur = image.detach();
  for (int t = 0; t < k; ++t) {
    const auto c = cur.dim(0), h = cur.dim(1), w = cur.dim(2);
    const auto v = cur.data();
    std::vector<double> out(v.size());
    // Counter-clockwise: out(y', x') with y' in [0,w), x' in [0,h); out(w-1-x, y) = in(y, x).
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out[(ch * w + (w - 1 - x)) * h + y] = v[(ch * h + y) * w + x];
    cur = Tensor({c, w, h}, std::move(out));
  }
  return cur;
}

Tensor crop(const Tensor& image, std::size_t y0, std::size_t x0, std::size_t ch_h, std::size_t ch_w) {
  require_image(image, "crop");
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (y0 + ch_h > h || x0 + ch_w > w) throw DimensionError("crop: window exceeds image");
  const auto v = image.data();
  std::vector<double> out(c * ch_h * ch_w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ch_h; ++y)
      for (std::size_t x = 0; x < ch_w; ++x) out[(ch * ch_h + y) * ch_w + x] = v[(ch * h + y0 + y) * w + x0 + x];
  return Tensor({c, ch_h, ch_w}, std::move(out));
}

Tensor stack(const std::vector<Tensor>& images) {
  if (images.empty()) throw DimensionError("stack: no images");
  const Shape& s = images.front().shape();
  std::vector<double> out;
  out.reserve(images.size() * images.front().numel());
  for (const auto& im : images) {
    if (im.shape() != s) throw DimensionError("stack: images differ in shape");
    out.insert(out.end(), im.data().begin(), im.data().end());
  }
  Shape shape{images.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  return Tensor(std::move(shape), std::move(out));
}

Tensor unstack(const Tensor& batch, std::size_t i) {
  if (batch.rank() != 4 || i >= batch.dim(0)) throw DimensionError("unstack: index out of range");
  const auto per = batch.numel() / batch.dim(0);
  const auto v = batch.data();
  return Tensor({batch.dim(1), batch.dim(2), batch.dim(3)},
                std::vector<double>(v.begin() + static_cast<long>(i * per), v.begin() + static_cast<long>((i + 1) * per)));
}

Tensor clamp_pixels(const Tensor& image) {
  std::vector<double> out(image.data().begin(), image.data().end());
  for (auto& v : out) v = std::clamp(v, 0.0, 255.0);
  return Tensor(image.shape(), std::move(out));
}

Augmentation Augmentation::sample(std::mt19937_64& rng) {
  const auto code = rng() % 8;
  return {static_cast<bool>(code & 1u), static_cast<int>(code >> 1)};
}

Tensor Augmentation::apply(const Tensor& image) const {
  Tensor out = flip ? flip_horizontal(image) : image.detach();
  return rotation ? rotate90(out, rotation) : out;
}

ImagePair preprocess(const ImagePair& pair, const std::array<double, 3>& mean, bool augment, std::mt19937_64& rng) {
  auto subtract = [&](const Tensor& im) {
    require_image(im, "preprocess");
    if (im.dim(0) != 3) throw DimensionError("preprocess: expects RGB images");
    const auto plane = im.dim(1) * im.dim(2);
    std::vector<double> out(im.data().begin(), im.data().end());
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] -= mean[c];
    return Tensor(im.shape(), std::move(out));
  };
  ImagePair out{subtract(pair.lr), subtract(pair.hr), pair.id};
  if (augment) {
    const auto aug = Augmentation::sample(rng);
    out.lr = aug.apply(out.lr);
    out.hr = aug.apply(out.hr);
  }
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<ImagePair>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ParameterError("unknown split '" + name + "'");
}

const std::vector<ImagePair>& Dataset::held_out() const { return val.empty() ? test : val; }

Dataset load_dataset(const std::filesystem::path& dir, int scale) {
  if (scale != 2 && scale != 4) throw ParameterError("scale must be 2 or 4");
  const auto manifest = dir / "manifest.txt";
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest '" + manifest.string() + "'");
  Dataset ds;
  ds.scale = scale;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string split, rel;
    if (!(ls >> split)) continue;
    if (!(ls >> rel)) throw IoError(manifest.string() + ":" + std::to_string(lineno) + ": missing path");
    Tensor hr = load_image(dir / rel);
    const auto s = static_cast<std::size_t>(scale);
    const auto h = hr.dim(1) / s * s, w = hr.dim(2) / s * s;
    if (h < 4 * s || w < 4 * s) throw IoError("image '" + rel + "' is too small for scale " + std::to_string(scale));
    hr = crop(hr, 0, 0, h, w);
    Tensor lr = clamp_pixels(bicubic_resize(hr, {1, scale}));
    for (auto& v : lr.mutable_data()) v = std::round(v);
    ImagePair pair{std::move(lr), std::move(hr), rel};
    if (split == "train") ds.train.push_back(std::move(pair));
    else if (split == "val") ds.val.push_back(std::move(pair));
    else if (split == "test") ds.test.push_back(std::move(pair));
    else throw IoError(manifest.string() + ":" + std::to_string(lineno) + ": unknown split '" + split + "'");
  }
  return ds;
}

std::array<double, 3> mean_rgb(const std::vector<ImagePair>& pairs) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  double count = 0.0;
  for (const auto& p : pairs) {
    const auto plane = p.hr.dim(1) * p.hr.dim(2);
    const auto v = p.hr.data();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) sum[c] += v[c * plane + i];
    count += static_cast<double>(plane);
  }
  if (count == 0.0) return sum;
  for (auto& s : sum) s /= count;
  return sum;
}

void write_toy_corpus(const std::filesystem::path& dir, int count, int size, int n_test, std::uint64_t seed) {
  if (count < 1 || size < 16 || n_test < 0 || n_test > count) throw ParameterError("write_toy_corpus: bad arguments");
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 2.0);
  const auto n = static_cast<std::size_t>(size);
  const double fs = static_cast<double>(size);

  std::ofstream manifest(dir / "manifest.txt");
  manifest << "# split path\n";
  for (int i = 0; i < count; ++i) {
    std::vector<double> img(3 * n * n);
    std::array<double, 3> c0{}, c1{};
    for (int c = 0; c < 3; ++c) {
      c0[c] = 40.0 + 170.0 * unit(rng);
      c1[c] = 40.0 + 170.0 * unit(rng);
    }
    const double gdir = 2.0 * M_PI * unit(rng);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double t = 0.5 + 0.5 * (std::cos(gdir) * (x / fs - 0.5) + std::sin(gdir) * (y / fs - 0.5));
        for (int c = 0; c < 3; ++c) img[(c * n + y) * n + x] = c0[c] + (c1[c] - c0[c]) * t;
      }

    const int shapes = 24 + static_cast<int>(rng() % 16);
    for (int s = 0; s < shapes; ++s) {
      std::array<double, 3> col{};
      for (auto& v : col) v = 255.0 * unit(rng);
      const int kind = static_cast<int>(rng() % 4);
      const double cx = fs * unit(rng), cy = fs * unit(rng);
      const double r = fs * (0.03 + 0.12 * unit(rng));
      const double ang = M_PI * unit(rng);
      const double freq = 0.15 + 0.35 * unit(rng);  // cycles per pixel for stripes, below LR Nyquist at x2
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double u = std::cos(ang) * dx + std::sin(ang) * dy;
          const double v = -std::sin(ang) * dx + std::cos(ang) * dy;
          double cover = 0.0;
          switch (kind) {
            case 0: cover = (dx * dx + dy * dy <= r * r) ? 1.0 : 0.0; break;
            case 1: cover = (std::abs(u) <= r && std::abs(v) <= 0.5 * r) ? 1.0 : 0.0; break;
            case 2: cover = (std::abs(v) <= 1.5 && std::abs(u) <= 2.0 * r) ? 1.0 : 0.0; break;  // line
            case 3:
              cover = (std::abs(u) <= r && std::abs(v) <= r) ? 0.5 + 0.5 * std::sin(2.0 * M_PI * freq * u * 0.5) : 0.0;
              break;
          }
          if (cover == 0.0) continue;
          for (int c = 0; c < 3; ++c) {
            double& p = img[(c * n + y) * n + x];
            p = (1.0 - cover) * p + cover * col[c];
          }
        }
    }
    for (auto& p : img) p = std::clamp(p + noise(rng), 0.0, 255.0);

    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.png", i);
    save_image(Tensor({3, n, n}, std::move(img)), dir / name);
    manifest << (i >= count - n_test ? "test " : "train ") << name << '\n';
  }
  if (!manifest) throw IoError("cannot write manifest in '" + dir.string() + "'");
}

// ---------------------------------------------------------------------------

PatchSampler::PatchSampler(const std::vector<ImagePair>& pairs, int lr_patch, int scale, bool augment, std::uint64_t seed)
    : pairs_(&pairs), lr_patch_(lr_patch), scale_(scale), augment_(augment), rng_(seed) {
  if (pairs.empty()) throw ParameterError("PatchSampler: empty image set");
  if (lr_patch < 1) throw ParameterError("PatchSampler: patch size must be positive");
  for (const auto& p : pairs) {
    if (p.lr.dim(1) < static_cast<std::size_t>(lr_patch) || p.lr.dim(2) < static_cast<std::size_t>(lr_patch)) {
      throw ParameterError("PatchSampler: image '" + p.id + "' smaller than the patch size");
    }
  }
  order_.resize(pairs.size());
  std::iota(order_.begin(), order_.end(), 0);
  cursor_ = order_.size();
}

Batch PatchSampler::next(int batch_size) {
  if (batch_size < 1) throw ParameterError("PatchSampler: batch size must be positive");
  std::vector<Tensor> lrs, hrs;
  const auto p = static_cast<std::size_t>(lr_patch_);
  const auto s = static_cast<std::size_t>(scale_);
  for (int b = 0; b < batch_size; ++b) {
    if (cursor_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    const auto& pair = (*pairs_)[order_[cursor_++]];
    const auto y = rng_() % (pair.lr.dim(1) - p + 1);
    const auto x = rng_() % (pair.lr.dim(2) - p + 1);
    Tensor lr = crop(pair.lr, y, x, p, p);
    Tensor hr = crop(pair.hr, y * s, x * s, p * s, p * s);
    if (augment_) {
      const auto aug = Augmentation::sample(rng_);
      lr = aug.apply(lr);
      hr = aug.apply(hr);
    }
    lrs.push_back(std::move(lr));
    hrs.push_back(std::move(hr));
  }
  return {stack(lrs), stack(hrs)};
}

}  // namespace pams::data
