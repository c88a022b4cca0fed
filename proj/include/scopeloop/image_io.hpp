#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scopeloop/frame.hpp"

namespace scopeloop {

/// Decodes PNG/BMP/JPG bytes into an RGB frame. Throws DecodeFailure.
[[nodiscard]] Frame decode_image(std::span<const std::uint8_t> bytes);

/// Reads and decodes an image file into an RGB frame. Throws DecodeFailure.
[[nodiscard]] Frame read_image(const std::filesystem::path& path);

/// Lossless PNG encoding. BGRA frames keep their alpha channel.
[[nodiscard]] std::vector<std::uint8_t> encode_png(const Frame& frame);

/// Writes `frame` as PNG. Throws IoFailure.
void write_png(const std::filesystem::path& path, const Frame& frame);

}  // namespace scopeloop
