#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lisa/tensor.hpp"

namespace lisa {

/// Writes a [C, H, W] tensor (C = 1 or 3, values clamped to [0, 1]) as a PNG
/// with 8 or 16 bits per sample.
void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth = 16);

/// Reads an 8- or 16-bit grey/RGB PNG into [C, H, W] with values in [0, 1].
Tensor read_png(const std::filesystem::path& path);

}  // namespace lisa
