#pragma once

#include <filesystem>

#include "afh/image.hpp"

namespace afh {

/// Reads an 8-bit (or 16-bit, reduced) PNG as gray or RGB values v / 255.
/// Alpha is dropped and palettes are expanded.
Image read_png(const std::filesystem::path& path);

/// Writes 1- or 3-channel images as 8-bit PNG using round(v * 255).
void write_png(const Image& img, const std::filesystem::path& path);

}  // namespace afh
