#pragma once

#include <string>

#include "vrg/tensor.hpp"

namespace vrg::img {

// Decodes a PNG file to a [C,H,W] tensor with values in [0,1].  Grayscale
// files give C=1, anything carrying color gives C=3.  Palette images are
// expanded, 16-bit depth is reduced to 8, alpha is stripped.
Tensor read_png(const std::string& path);

// Encodes a [C,H,W] tensor (C = 1 or 3) as an 8-bit PNG.  Values are clamped
// to [0,1] and quantized with round(v * 255).
void write_png(const std::string& path, const Tensor& image);

// BT.601 luma: [3,H,W] -> [1,H,W].  A [1,H,W] input is returned as a copy.
Tensor to_gray(const Tensor& image);

// round(clamp(v,0,1) * 255) / 255 applied elementwise: the exact value a
// tensor comes back as after a PNG round trip.
Tensor quantize8(const Tensor& image);

}  // namespace vrg::img
