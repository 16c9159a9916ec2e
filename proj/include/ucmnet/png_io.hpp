#pragma once

// PNG image I/O. Reads return [H,W,3] in [0,1]; grayscale and paletted files
// are expanded, alpha is stripped. Writes accept [H,W,1] (grayscale) or
// [H,W,3] (RGB), clamp to [0,1], and store 8- or 16-bit samples with no
// ancillary chunks, so identical pixels produce identical bytes.

#include <string>

#include "ucmnet/tensor.hpp"

namespace ucmnet {

TensorT<double> read_png(const std::string& path);
void write_png(const std::string& path, const TensorT<double>& image, int bit_depth = 8);

}  // namespace ucmnet
