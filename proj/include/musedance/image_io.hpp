#pragma once

#include "musedance/codec.hpp"

#include <filesystem>
#include <vector>

namespace musedance {

/// 3-channel images map [-1, 1] to 8-bit RGB; 1-channel images map [0, 1] to 8-bit grey.
void write_png(const std::filesystem::path& path, const Image& img);

/// RGB (or RGBA, alpha dropped) becomes a 3-channel [-1, 1] image, grey a 1-channel [0, 1] image.
Image read_png(const std::filesystem::path& path);

/// Animated GIF89a with a 6x7x6 colour cube palette, looping forever.
void write_gif(const std::filesystem::path& path, const std::vector<Image>& frames, double fps);

std::uint8_t to_byte_signed(float v);
float from_byte_signed(std::uint8_t b);

}  // namespace musedance
