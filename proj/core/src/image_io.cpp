#include "lisa/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "lisa/errors.hpp"

namespace lisa {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_png expects [1|3, H, W], got " + image.shape_str());
  }
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("write_png: bit depth 8 or 16");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: allocation failed");
  }
  const int bytes = bit_depth / 8;
  std::vector<png_byte> rows(static_cast<std::size_t>(h) * w * c * bytes);
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        const double v = std::clamp(image.at(k, y, x), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * scale));
        const std::size_t off = ((static_cast<std::size_t>(y) * w + x) * c + k) * bytes;
        if (bytes == 2) {
          rows[off] = static_cast<png_byte>(q >> 8);
          rows[off + 1] = static_cast<png_byte>(q & 0xff);
        } else {
          rows[off] = static_cast<png_byte>(q);
        }
      }
    }
  }
  std::vector<png_bytep> ptrs(h);
  for (int y = 0; y < h; ++y) ptrs[y] = rows.data() + static_cast<std::size_t>(y) * w * c * bytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, bit_depth, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ParseError(path.string() + " is not a PNG file", 0);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng: allocation failed");
  }
  std::vector<png_byte> rows;
  std::vector<png_bytep> ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("libpng: corrupt image " + path.string(), 0);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const int bytes = out_depth == 16 ? 2 : 1;
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  rows.resize(row_bytes * h);
  ptrs.resize(h);
  for (int y = 0; y < h; ++y) ptrs[y] = rows.data() + static_cast<std::size_t>(y) * row_bytes;
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const double scale = bytes == 2 ? 65535.0 : 255.0;
  Tensor out({channels, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < channels; ++k) {
        const png_byte* p = ptrs[y] + (static_cast<std::size_t>(x) * channels + k) * bytes;
        const unsigned q = bytes == 2 ? (static_cast<unsigned>(p[0]) << 8) | p[1] : p[0];
        out.at(k, y, x) = q / scale;
      }
    }
  }
  return out;
}

}  // namespace lisa
