#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "scopeloop/frame.hpp"

namespace scopeloop {

/// Screen rectangle in pixels, right/bottom exclusive.
struct CaptureRegion {
  int left = 0;
  int top = 0;
  int right = 0;
  int bottom = 0;

  [[nodiscard]] int width() const noexcept { return right - left; }
  [[nodiscard]] int height() const noexcept { return bottom - top; }
  friend bool operator==(const CaptureRegion&, const CaptureRegion&) = default;
};

/// Builds the capture region spanned by two clicks, in either order.
/// Throws DegenerateRegion when the clicks share a row or column.
[[nodiscard]] CaptureRegion select_region(Point click_a, Point click_b);

struct ScreenSpec {
  CaptureRegion region;
};
struct ReplaySpec {
  std::filesystem::path directory;
  std::chrono::milliseconds frame_interval{0};
};
struct SyntheticSpec {
  std::uint64_t seed = 0;
  int width = 0;
  int height = 0;
  std::chrono::milliseconds frame_interval{0};
};
using SourceSpec = std::variant<ScreenSpec, ReplaySpec, SyntheticSpec>;

/// Parses `screen`, `replay:<dir>` or `synthetic:<seed>x<W>x<H>`. A screen
/// source takes `region` as its capture rectangle.
[[nodiscard]] SourceSpec parse_source_spec(const std::string& text, const CaptureRegion& region = {});
[[nodiscard]] std::string describe(const SourceSpec& spec);

/// A stream of frames owned by one consumer at a time (movable, not shared).
class FrameSource {
 public:
  virtual ~FrameSource() = default;

  /// Waits up to `timeout` for the next frame. Returns nullopt on timeout.
  /// Throws SourceClosed once the source is closed or its device is gone.
  virtual std::optional<Frame> next_frame(std::chrono::milliseconds timeout) = 0;

  /// Blocking form of next_frame.
  Frame next_frame();

  virtual void close() = 0;
  [[nodiscard]] virtual std::string id() const = 0;
};

/// Deterministic textured frames; content is a pure function of (seed, w, h).
class SyntheticSource final : public FrameSource {
 public:
  explicit SyntheticSource(SyntheticSpec spec);
  using FrameSource::next_frame;
  std::optional<Frame> next_frame(std::chrono::milliseconds timeout) override;
  void close() override { closed_ = true; }
  [[nodiscard]] std::string id() const override;

  /// The texture every frame of this source carries.
  [[nodiscard]] static Frame render_texture(std::uint64_t seed, int width, int height);

 private:
  SyntheticSpec spec_;
  Frame texture_;
  bool closed_ = false;
  std::int64_t last_ts_ = 0;
  std::chrono::steady_clock::time_point next_due_{};
};

/// Cycles through the PNG/BMP/JPG files of a directory in lexicographic
/// filename order. Unreadable files are logged to stderr and skipped.
class ReplaySource final : public FrameSource {
 public:
  explicit ReplaySource(ReplaySpec spec);
  using FrameSource::next_frame;
  std::optional<Frame> next_frame(std::chrono::milliseconds timeout) override;
  void close() override { closed_ = true; }
  [[nodiscard]] std::string id() const override;

  [[nodiscard]] const std::vector<std::filesystem::path>& files() const noexcept { return files_; }
  [[nodiscard]] std::size_t skipped() const noexcept { return skipped_; }

 private:
  ReplaySpec spec_;
  std::vector<std::filesystem::path> files_;
  std::vector<std::optional<Frame>> cache_;
  std::vector<bool> bad_;
  std::size_t cursor_ = 0;
  std::size_t skipped_ = 0;
  bool closed_ = false;
  std::int64_t last_ts_ = 0;
  std::chrono::steady_clock::time_point next_due_{};
};

/// Platform capture adapter. Returns a BGRA frame of the region, or nullopt
/// when the display is unavailable (locked, disconnected).
class ScreenGrabber {
 public:
  virtual ~ScreenGrabber() = default;
  virtual std::optional<Frame> grab(const CaptureRegion& region) = 0;
};

/// X11 grabber when built with X11 support; otherwise nullptr.
[[nodiscard]] std::unique_ptr<ScreenGrabber> make_platform_grabber();

class ScreenSource final : public FrameSource {
 public:
  ScreenSource(CaptureRegion region, std::unique_ptr<ScreenGrabber> grabber);
  using FrameSource::next_frame;
  std::optional<Frame> next_frame(std::chrono::milliseconds timeout) override;
  void close() override;
  [[nodiscard]] std::string id() const override { return "screen"; }

 private:
  CaptureRegion region_;
  std::unique_ptr<ScreenGrabber> grabber_;
  std::int64_t last_ts_ = 0;
};

[[nodiscard]] std::unique_ptr<FrameSource> open_source(const SourceSpec& spec);

/// Monotonic nanoseconds strictly greater than `last`.
[[nodiscard]] std::int64_t next_timestamp(std::int64_t last) noexcept;

}  // namespace scopeloop
