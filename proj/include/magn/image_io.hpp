#pragma once

#include <string>
#include <vector>

#include "magn/tensor.hpp"

namespace magn {

/// Decoded PNG: pixels in [0,1], HxWxC with C of 1 or 3, plus the source bit
/// depth so writers can preserve it.
struct ImageFile {
    Tensor pixels;
    int bit_depth = 8;
};

ImageFile read_png(const std::string& path);

/// Writes 8- or 16-bit grayscale/RGB PNG. The file appears atomically
/// (temp + rename). Values are clamped to [0,1] at write time only.
void write_png(const std::string& path, const Tensor& img, int bit_depth = 8);

/// HxWx3 -> HxWx1 luminance; HxWx1 passes through.
Tensor to_single_channel(const Tensor& img);

/// HxWx1 -> HxWx3 replicated; HxWx3 passes through.
Tensor to_three_channels(const Tensor& img);

std::vector<std::string> list_png_files(const std::string& dir);

} // namespace magn
