#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace scopeloop {

/// Interleaved 8-bit pixel layouts handled by the pipeline.
enum class PixelFormat : std::uint8_t {
  BGRA = 0,  ///< 4 bytes per pixel, what screen grabbers deliver
  RGB = 1,   ///< 3 bytes per pixel
  BGR = 2,   ///< 3 bytes per pixel
};

[[nodiscard]] constexpr std::size_t bytes_per_pixel(PixelFormat format) noexcept {
  return format == PixelFormat::BGRA ? 4 : 3;
}

[[nodiscard]] const char* to_string(PixelFormat format) noexcept;

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// One captured image. Owns its pixel buffer; rows are tightly packed.
struct Frame {
  int width = 0;
  int height = 0;
  PixelFormat format = PixelFormat::RGB;
  std::vector<std::uint8_t> pixels;
  std::int64_t timestamp_ns = 0;  ///< monotonic clock
  std::string source_id;

  Frame() = default;
  Frame(int w, int h, PixelFormat fmt);

  [[nodiscard]] std::size_t row_bytes() const noexcept {
    return static_cast<std::size_t>(width) * bytes_per_pixel(format);
  }
  [[nodiscard]] std::size_t expected_bytes() const noexcept {
    return row_bytes() * static_cast<std::size_t>(height);
  }
  [[nodiscard]] bool empty() const noexcept { return width <= 0 || height <= 0; }

  [[nodiscard]] std::uint8_t* at(int x, int y) noexcept {
    return pixels.data() + static_cast<std::size_t>(y) * row_bytes() +
           static_cast<std::size_t>(x) * bytes_per_pixel(format);
  }
  [[nodiscard]] const std::uint8_t* at(int x, int y) const noexcept {
    return pixels.data() + static_cast<std::size_t>(y) * row_bytes() +
           static_cast<std::size_t>(x) * bytes_per_pixel(format);
  }
};

/// Channel-reordered copy of `frame` in `target` layout. Alpha is dropped when
/// leaving BGRA and set to 255 when entering it. Channel values never change.
[[nodiscard]] Frame convert_format(const Frame& frame, PixelFormat target);

/// Copy of the w x h window at (x, y). The window must lie inside the frame.
[[nodiscard]] Frame crop(const Frame& frame, int x, int y, int w, int h);

/// Bilinear resize to exactly new_width x new_height (pixel-center aligned).
[[nodiscard]] Frame resize_bilinear(const Frame& frame, int new_width, int new_height);

/// 64-bit FNV-1a over the pixel buffer plus dimensions and format.
[[nodiscard]] std::uint64_t content_hash(const Frame& frame) noexcept;

}  // namespace scopeloop
