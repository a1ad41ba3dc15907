#pragma once

#include "shapewords/core.hpp"

#include <string>
#include <vector>

namespace shapewords {

// PNG codecs. RGB images quantize to 8 bits, masks write {0, 255}, depth
// planes write 16-bit gray.
std::vector<unsigned char> encode_png_rgb(const Image& image);
std::vector<unsigned char> encode_png_mask(const Mask& mask);
std::vector<unsigned char> encode_png_depth16(const Plane& depth);

void write_png_rgb(const std::string& path, const Image& image);
void write_png_mask(const std::string& path, const Mask& mask);
void write_png_depth16(const std::string& path, const Plane& depth);

/// Any 8/16-bit gray, gray-alpha, RGB or RGBA PNG, normalized to [0, 1].
Image read_png_rgb(const std::string& path);
/// Nonzero pixels of the first channel become foreground.
Mask read_png_mask(const std::string& path);
Plane read_png_gray(const std::string& path);

}  // namespace shapewords
