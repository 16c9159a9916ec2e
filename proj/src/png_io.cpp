#include "ucmnet/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <csetjmp>
#include <vector>

namespace ucmnet {

namespace {

struct FileCloser {
  std::FILE* fp = nullptr;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};

}  // namespace

TensorT<double> read_png(const std::string& path) {
  FileCloser file;
  file.fp = std::fopen(path.c_str(), "rb");
  if (!file.fp) throw IoError("cannot open for reading: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng read struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng info struct allocation failed");
  }

  std::vector<png_byte> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed to decode: " + path);
  }

  png_init_io(png, file.fp);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int out_depth = png_get_bit_depth(png, info);
  const size_t stride = png_get_rowbytes(png, info);

  raw.resize(stride * static_cast<size_t>(h));
  rows.resize(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = raw.data() + stride * static_cast<size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  TensorT<double> img({h, w, 3});
  if (out_depth == 8) {
    for (int y = 0; y < h; ++y) {
      const png_byte* r = raw.data() + stride * static_cast<size_t>(y);
      for (int x = 0; x < w * 3; ++x)
        img.data[(static_cast<size_t>(y) * w * 3) + static_cast<size_t>(x)] = r[x] / 255.0;
    }
  } else if (out_depth == 16) {
    // PNG stores 16-bit samples big-endian
    for (int y = 0; y < h; ++y) {
      const png_byte* r = raw.data() + stride * static_cast<size_t>(y);
      for (int x = 0; x < w * 3; ++x) {
        const unsigned v = (static_cast<unsigned>(r[2 * x]) << 8) | r[2 * x + 1];
        img.data[(static_cast<size_t>(y) * w * 3) + static_cast<size_t>(x)] = v / 65535.0;
      }
    }
  } else {
    throw IoError("unsupported decoded bit depth in " + path);
  }
  return img;
}

void write_png(const std::string& path, const TensorT<double>& image, int bit_depth) {
  UCM_CHECK_SHAPE(image.rank() == 3 && (image.shape[2] == 1 || image.shape[2] == 3),
                  "write_png expects [H,W,1] or [H,W,3], got " << shape_str(image.shape));
  if (bit_depth != 8 && bit_depth != 16) throw IoError("write_png bit depth must be 8 or 16");
  const int h = image.shape[0], w = image.shape[1], c = image.shape[2];

  const double peak = bit_depth == 8 ? 255.0 : 65535.0;
  const size_t stride = static_cast<size_t>(w) * c * (bit_depth / 8);
  std::vector<png_byte> raw(stride * static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) {
    png_byte* r = raw.data() + stride * static_cast<size_t>(y);
    for (int x = 0; x < w * c; ++x) {
      double v = image.data[static_cast<size_t>(y) * w * c + static_cast<size_t>(x)];
      v = std::min(1.0, std::max(0.0, v));
      const auto q = static_cast<unsigned>(std::lround(v * peak));
      if (bit_depth == 8) {
        r[x] = static_cast<png_byte>(q);
      } else {
        r[2 * x] = static_cast<png_byte>(q >> 8);
        r[2 * x + 1] = static_cast<png_byte>(q & 0xff);
      }
    }
  }
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = raw.data() + stride * static_cast<size_t>(y);

  FileCloser file;
  file.fp = std::fopen(path.c_str(), "wb");
  if (!file.fp) throw IoError("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng write struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng info struct allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed to encode: " + path);
  }

  png_init_io(png, file.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace ucmnet
