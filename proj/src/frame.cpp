#include "scopeloop/frame.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "scopeloop/error.hpp"

namespace scopeloop {

const char* to_string(PixelFormat format) noexcept {
  switch (format) {
    case PixelFormat::BGRA: return "BGRA";
    case PixelFormat::RGB: return "RGB";
    case PixelFormat::BGR: return "BGR";
  }
  return "?";
}

Frame::Frame(int w, int h, PixelFormat fmt) : width(w), height(h), format(fmt) {
  pixels.resize(expected_bytes());
}

namespace {

// Index of red, green and blue inside one pixel of the given layout.
struct ChannelOrder {
  int r, g, b;
};

constexpr ChannelOrder order_of(PixelFormat f) {
  switch (f) {
    case PixelFormat::RGB: return {0, 1, 2};
    case PixelFormat::BGR:
    case PixelFormat::BGRA: return {2, 1, 0};
  }
  return {0, 1, 2};
}

}  // namespace

Frame convert_format(const Frame& frame, PixelFormat target) {
  if (frame.format == target) return frame;

  Frame out;
  out.width = frame.width;
  out.height = frame.height;
  out.format = target;
  out.timestamp_ns = frame.timestamp_ns;
  out.source_id = frame.source_id;
  out.pixels.resize(out.expected_bytes());

  const auto src_order = order_of(frame.format);
  const auto dst_order = order_of(target);
  const std::size_t src_bpp = bytes_per_pixel(frame.format);
  const std::size_t dst_bpp = bytes_per_pixel(target);
  const std::size_t n = static_cast<std::size_t>(frame.width) * static_cast<std::size_t>(frame.height);

  const std::uint8_t* s = frame.pixels.data();
  std::uint8_t* d = out.pixels.data();
  for (std::size_t i = 0; i < n; ++i, s += src_bpp, d += dst_bpp) {
    d[dst_order.r] = s[src_order.r];
    d[dst_order.g] = s[src_order.g];
    d[dst_order.b] = s[src_order.b];
    if (dst_bpp == 4) d[3] = 255;
  }
  return out;
}

Frame crop(const Frame& frame, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > frame.width || y + h > frame.height) {
    throw Error(ErrorCode::InvalidRequest, "crop window outside frame");
  }
  Frame out(w, h, frame.format);
  out.timestamp_ns = frame.timestamp_ns;
  out.source_id = frame.source_id;
  const std::size_t bytes = out.row_bytes();
  for (int row = 0; row < h; ++row) {
    std::copy_n(frame.at(x, y + row), bytes, out.at(0, row));
  }
  return out;
}

Frame resize_bilinear(const Frame& frame, int new_width, int new_height) {
  if (frame.empty() || new_width <= 0 || new_height <= 0) {
    throw Error(ErrorCode::EmptyFrame, "cannot resize an empty frame");
  }
  Frame out(new_width, new_height, frame.format);
  out.timestamp_ns = frame.timestamp_ns;
  out.source_id = frame.source_id;

  const int channels = static_cast<int>(bytes_per_pixel(frame.format));
  const double sx = static_cast<double>(frame.width) / new_width;
  const double sy = static_cast<double>(frame.height) / new_height;

  // Precompute horizontal taps once per column.
  std::vector<int> x0(new_width), x1(new_width);
  std::vector<double> fx(new_width);
  for (int x = 0; x < new_width; ++x) {
    double src = (x + 0.5) * sx - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(frame.width - 1));
    x0[x] = static_cast<int>(std::floor(src));
    x1[x] = std::min(x0[x] + 1, frame.width - 1);
    fx[x] = src - x0[x];
  }

  for (int y = 0; y < new_height; ++y) {
    double src_y = (y + 0.5) * sy - 0.5;
    src_y = std::clamp(src_y, 0.0, static_cast<double>(frame.height - 1));
    const int y0 = static_cast<int>(std::floor(src_y));
    const int y1 = std::min(y0 + 1, frame.height - 1);
    const double fy = src_y - y0;
    std::uint8_t* dst = out.at(0, y);
    for (int x = 0; x < new_width; ++x) {
      const std::uint8_t* p00 = frame.at(x0[x], y0);
      const std::uint8_t* p01 = frame.at(x1[x], y0);
      const std::uint8_t* p10 = frame.at(x0[x], y1);
      const std::uint8_t* p11 = frame.at(x1[x], y1);
      for (int c = 0; c < channels; ++c) {
        const double top = p00[c] + (p01[c] - p00[c]) * fx[x];
        const double bottom = p10[c] + (p11[c] - p10[c]) * fx[x];
        const double v = top + (bottom - top) * fy;
        dst[c] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
      dst += channels;
    }
  }
  return out;
}

std::uint64_t content_hash(const Frame& frame) noexcept {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  const std::array<int, 3> header{frame.width, frame.height, static_cast<int>(frame.format)};
  for (int v : header) {
    for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  for (std::uint8_t b : frame.pixels) mix(b);
  return h;
}

}  // namespace scopeloop
