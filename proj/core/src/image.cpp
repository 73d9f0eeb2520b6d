#include "vrg/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "vrg/errors.hpp"

namespace vrg::img {

namespace {

struct FileCloser {
  std::FILE* fp = nullptr;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};

void check_chw(const Tensor& t, const char* who) {
  VRG_CHECK(t.ndim() == 3, who, ": expected [C,H,W], got ", shape_str(t.shape()));
  const int64_t c = t.dim(0);
  VRG_CHECK(c == 1 || c == 3, who, ": channels must be 1 or 3, got ", c);
}

}  // namespace

Tensor read_png(const std::string& path) {
  FileCloser file{std::fopen(path.c_str(), "rb")};
  if (!file.fp) fail<DataError>("cannot open image: ", path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail<DataError>("libpng allocation failed");
  }
  // libpng reports errors by longjmp'ing back here.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail<DataError>("undecodable png: ", path);
  }

  png_init_io(png, file.fp);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int64_t w = png_get_image_width(png, info);
  const int64_t h = png_get_image_height(png, info);
  const int64_t c = png_get_channels(png, info);
  if (c != 1 && c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail<DataError>("unsupported channel count ", c, " in ", path);
  }

  std::vector<unsigned char> bytes(static_cast<size_t>(h * w * c));
  {
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int64_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * w * c;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out({c, h, w});
  double* d = out.data();
  const unsigned char* src = bytes.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch)
        d[(ch * h + y) * w + x] = src[(y * w + x) * c + ch] / 255.0;
  return out;
}

void write_png(const std::string& path, const Tensor& image) {
  check_chw(image, "write_png");
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);

  std::vector<unsigned char> bytes(static_cast<size_t>(h * w * c));
  const double* d = image.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        double v = d[(ch * h + y) * w + x];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        bytes[(y * w + x) * c + ch] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }

  FileCloser file{std::fopen(path.c_str(), "wb")};
  if (!file.fp) fail<DataError>("cannot write image: ", path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail<DataError>("libpng allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail<DataError>("png encode failed: ", path);
  }

  png_init_io(png, file.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  {
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int64_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * w * c;
    png_write_image(png, rows.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor to_gray(const Tensor& image) {
  check_chw(image, "to_gray");
  if (image.dim(0) == 1) return image.clone();
  const int64_t h = image.dim(1), w = image.dim(2);
  Tensor out({1, h, w});
  const double* d = image.data();
  const int64_t plane = h * w;
  for (int64_t i = 0; i < plane; ++i)
    out.data()[i] =
        0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i];
  return out;
}

Tensor quantize8(const Tensor& image) {
  Tensor out(image.shape());
  for (int64_t i = 0; i < image.size(); ++i) {
    double v = image.data()[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    out.data()[i] = std::lround(v * 255.0) / 255.0;
  }
  return out;
}

}  // namespace vrg::img
