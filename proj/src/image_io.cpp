#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pams/data.hpp"
#include "pams/errors.hpp"

namespace pams::data {

Tensor load_image(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode '" + path.string() + "': " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode '" + path.string() + "': " + image.message);
  }
  const std::size_t h = image.height, w = image.width;
  std::vector<double> data(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) data[(c * h + y) * w + x] = buffer[(y * w + x) * 3 + c];
  return Tensor({3, h, w}, std::move(data));
}

namespace {

png_byte to_byte(double v) { return static_cast<png_byte>(std::clamp(std::round(v), 0.0, 255.0)); }

void write_png(const std::filesystem::path& path, std::uint32_t format, std::size_t channels, std::size_t h,
               std::size_t w, const std::vector<png_byte>& buffer) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), static_cast<png_int_32>(w * channels),
                               nullptr)) {
    throw IoError("cannot write '" + path.string() + "': " + image.message);
  }
}

}  // namespace

void save_image(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("save_image: expects [3,H,W]");
  const auto h = image.dim(1), w = image.dim(2);
  const auto v = image.data();
  std::vector<png_byte> buffer(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) buffer[(y * w + x) * 3 + c] = to_byte(v[(c * h + y) * w + x]);
  write_png(path, PNG_FORMAT_RGB, 3, h, w, buffer);
}

void save_gray_image(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(0) != 1) throw DimensionError("save_gray_image: expects [1,H,W]");
  const auto h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> buffer(h * w);
  std::transform(image.data().begin(), image.data().end(), buffer.begin(), to_byte);
  write_png(path, PNG_FORMAT_GRAY, 1, h, w, buffer);
}

}  // namespace pams::data
