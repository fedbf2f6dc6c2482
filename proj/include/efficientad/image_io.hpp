#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "efficientad/tensor.hpp"

namespace ead {

// Decodes PNG (or, best effort, JPEG) into RGB floats in [0, 1], 3 x H x W.
// Grayscale sources are replicated to three channels.
Tensor read_image_rgb(const std::string& path);

// (height, width) from the file header.
std::pair<std::int64_t, std::int64_t> read_image_size(const std::string& path);

// RGB in [0, 1] resized (bilinear) to size x size.
Tensor load_image_rgb(const std::string& path, std::int64_t size = 256);

// Standardized 3 x size x size network input.
Tensor load_image(const std::string& path, std::int64_t size = 256);

// Binary mask 1 x H x W with values {0, 1} (any nonzero pixel is foreground).
Tensor load_mask(const std::string& path);

bool is_image_file(const std::string& path);

// 8-bit writers; values are clamped to [0, 1] and rounded.
void write_png_rgb(const std::string& path, const Tensor& rgb);
void write_png_gray(const std::string& path, const Tensor& gray);

// Affine used to quantize a float map into 16 bits: code = (v - offset) * scale.
struct MapEncoding {
  double offset = 0.0;
  double scale = 1.0;
};

// 16-bit grayscale PNG with min -> 0 and max -> 65535, plus a sidecar
// `<path>.txt` recording the affine.
MapEncoding write_png_map16(const std::string& path, const Tensor& map);

}  // namespace ead
