#pragma once

#include <string>

#include "pgcn/tensor.hpp"

namespace pgcn {

// Decodes a PNG to [3,H,W] floats in [0,1]. Gray and paletted images expand
// to three channels; 16-bit depth narrows to 8; alpha is dropped.
Tensor read_png(const std::string& path);

// Writes [3,H,W] (rgb) or [H,W] (gray) as an 8-bit PNG, clamping to [0,1].
void write_png(const std::string& path, const Tensor& img);

// Gray writer with explicit range mapping: lo -> 0, hi -> 255.
void write_png_gray(const std::string& path, const Tensor& img, float lo, float hi);

}  // namespace pgcn
