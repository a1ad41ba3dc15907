#include "shapewords/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

namespace shapewords {
namespace {

struct Raster {
  int width = 0, height = 0, channels = 0, bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

void write_callback(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_callback(png_structp) {}

std::vector<unsigned char> encode(const Raster& r) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  std::vector<unsigned char> out;
  const int bytes_per_sample = r.bit_depth / 8;
  std::vector<unsigned char> row(static_cast<std::size_t>(r.width) * r.channels * bytes_per_sample);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, write_callback, flush_callback);
  const int color = r.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, r.width, r.height, r.bit_depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t per_row = static_cast<std::size_t>(r.width) * r.channels;
  for (int y = 0; y < r.height; ++y) {
    for (std::size_t k = 0; k < per_row; ++k) {
      const std::uint16_t v = r.samples[y * per_row + k];
      if (bytes_per_sample == 1) {
        row[k] = static_cast<unsigned char>(v);
      } else {
        row[2 * k] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
        row[2 * k + 1] = static_cast<unsigned char>(v & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Raster decode_file(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw Error("cannot open image " + path);
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(fp, &std::fclose);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8)) throw FormatError(path + ": not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }
  Raster r;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": corrupt PNG");
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_swap(png);  // host order (little-endian)
  png_read_update_info(png, info);
  r.width = static_cast<int>(png_get_image_width(png, info));
  r.height = static_cast<int>(png_get_image_height(png, info));
  r.channels = png_get_channels(png, info);
  r.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  row.resize(rowbytes);
  const std::size_t per_row = static_cast<std::size_t>(r.width) * r.channels;
  r.samples.resize(per_row * r.height);
  for (int y = 0; y < r.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t k = 0; k < per_row; ++k) {
      if (r.bit_depth == 16) {
        r.samples[y * per_row + k] = static_cast<std::uint16_t>(row[2 * k] | (row[2 * k + 1] << 8));
      } else {
        r.samples[y * per_row + k] = row[k];
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return r;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint16_t quantize(float v, int max) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint16_t>(std::lround(c * static_cast<float>(max)));
}

}  // namespace

std::vector<unsigned char> encode_png_rgb(const Image& image) {
  Raster r{image.width(), image.height(), 3, 8, {}};
  r.samples.reserve(static_cast<std::size_t>(r.width) * r.height * 3);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < 3; ++c) r.samples.push_back(quantize(image.channel(c)(y, x), 255));
  return encode(r);
}

std::vector<unsigned char> encode_png_mask(const Mask& mask) {
  Raster r{static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), 1, 8, {}};
  r.samples.reserve(mask.size());
  for (Eigen::Index y = 0; y < mask.rows(); ++y)
    for (Eigen::Index x = 0; x < mask.cols(); ++x) r.samples.push_back(mask(y, x) ? 255 : 0);
  return encode(r);
}

std::vector<unsigned char> encode_png_depth16(const Plane& depth) {
  Raster r{static_cast<int>(depth.cols()), static_cast<int>(depth.rows()), 1, 16, {}};
  r.samples.reserve(depth.size());
  for (Eigen::Index y = 0; y < depth.rows(); ++y)
    for (Eigen::Index x = 0; x < depth.cols(); ++x) r.samples.push_back(quantize(depth(y, x), 65535));
  return encode(r);
}

void write_png_rgb(const std::string& path, const Image& image) { write_bytes(path, encode_png_rgb(image)); }
void write_png_mask(const std::string& path, const Mask& mask) { write_bytes(path, encode_png_mask(mask)); }
void write_png_depth16(const std::string& path, const Plane& depth) { write_bytes(path, encode_png_depth16(depth)); }

Image read_png_rgb(const std::string& path) {
  const Raster r = decode_file(path);
  const float max = r.bit_depth == 16 ? 65535.0f : 255.0f;
  Image img(r.height, r.width);
  const bool gray = r.channels < 3;
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * r.width + x) * r.channels;
      for (int c = 0; c < 3; ++c) img.channel(c)(y, x) = r.samples[base + (gray ? 0 : c)] / max;
    }
  return img;
}

Mask read_png_mask(const std::string& path) {
  const Raster r = decode_file(path);
  Mask m(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      m(y, x) = r.samples[(static_cast<std::size_t>(y) * r.width + x) * r.channels] != 0 ? 1 : 0;
  return m;
}

Plane read_png_gray(const std::string& path) {
  const Raster r = decode_file(path);
  const float max = r.bit_depth == 16 ? 65535.0f : 255.0f;
  Plane p(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) p(y, x) = r.samples[(static_cast<std::size_t>(y) * r.width + x) * r.channels] / max;
  return p;
}

}  // namespace shapewords
