#pragma once

#include <string>

#include "pplus/tensor.hpp"

namespace pplus {

// (3, h, w) in [-1, 1] <-> 8-bit RGB PNG; the byte stream is deterministic
// for identical pixels (fixed encoder settings, no ancillary chunks).
void write_png(const std::string& path, const Tensor& img);
std::string encode_png(const Tensor& img);
Tensor read_png(const std::string& path);

}  // namespace pplus
