#include "scopeloop/frame_source.hpp"

#include <algorithm>
#include <cctype>
#include <iostream>
#include <thread>

#include "scopeloop/error.hpp"
#include "scopeloop/image_io.hpp"

#ifdef SCOPELOOP_HAVE_X11
#include <X11/Xlib.h>
#include <X11/Xutil.h>
#endif

namespace scopeloop {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

CaptureRegion select_region(Point click_a, Point click_b) {
  CaptureRegion region{std::min(click_a.x, click_b.x), std::min(click_a.y, click_b.y),
                       std::max(click_a.x, click_b.x), std::max(click_a.y, click_b.y)};
  if (region.width() == 0 || region.height() == 0) {
    throw Error(ErrorCode::DegenerateRegion, "clicks span a zero-width or zero-height region");
  }
  return region;
}

std::int64_t next_timestamp(std::int64_t last) noexcept {
  const std::int64_t now =
      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch()).count();
  return std::max(now, last + 1);
}

Frame FrameSource::next_frame() {
  for (;;) {
    if (auto frame = next_frame(std::chrono::milliseconds(1000))) return std::move(*frame);
  }
}

namespace {

// Sleeps until `due` unless that exceeds `timeout`; false means timed out.
bool wait_until_due(Clock::time_point due, std::chrono::milliseconds timeout) {
  const auto now = Clock::now();
  if (due <= now) return true;
  if (due - now > timeout) {
    std::this_thread::sleep_for(timeout);
    return false;
  }
  std::this_thread::sleep_until(due);
  return true;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

}  // namespace

// ---------------------------------------------------------------- synthetic

SyntheticSource::SyntheticSource(SyntheticSpec spec)
    : spec_(spec), texture_(render_texture(spec.seed, spec.width, spec.height)) {}

Frame SyntheticSource::render_texture(std::uint64_t seed, int width, int height) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::EmptyFrame, "synthetic source needs positive dimensions");
  // Eosin-like palette: every channel stays inside a band that excludes the
  // pure fiducial colors the marker mocks look for.
  Frame frame(width, height, PixelFormat::RGB);
  const std::uint64_t base = splitmix64(seed);
  for (int y = 0; y < height; ++y) {
    std::uint8_t* row = frame.at(0, y);
    for (int x = 0; x < width; ++x) {
      const std::uint64_t cell = splitmix64(base ^ (static_cast<std::uint64_t>(y >> 4) << 32) ^
                                            static_cast<std::uint64_t>(x >> 4));
      const std::uint64_t fine = splitmix64(base + (static_cast<std::uint64_t>(y) << 32) + static_cast<std::uint64_t>(x));
      row[3 * x + 0] = static_cast<std::uint8_t>(150 + (cell & 0x3f) + (fine & 0x1f));
      row[3 * x + 1] = static_cast<std::uint8_t>(80 + ((cell >> 8) & 0x3f) + ((fine >> 8) & 0x1f));
      row[3 * x + 2] = static_cast<std::uint8_t>(150 + ((cell >> 16) & 0x2f) + ((fine >> 16) & 0x1f));
    }
  }
  return frame;
}

std::optional<Frame> SyntheticSource::next_frame(std::chrono::milliseconds timeout) {
  if (closed_) throw Error(ErrorCode::SourceClosed, id() + " is closed");
  if (!wait_until_due(next_due_, timeout)) return std::nullopt;
  next_due_ = Clock::now() + spec_.frame_interval;
  Frame frame = texture_;
  frame.timestamp_ns = last_ts_ = next_timestamp(last_ts_);
  frame.source_id = id();
  return frame;
}

std::string SyntheticSource::id() const {
  return "synthetic:" + std::to_string(spec_.seed) + "x" + std::to_string(spec_.width) + "x" +
         std::to_string(spec_.height);
}

// ------------------------------------------------------------------- replay

namespace {

bool is_replay_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".bmp" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

ReplaySource::ReplaySource(ReplaySpec spec) : spec_(std::move(spec)) {
  std::error_code ec;
  if (!fs::is_directory(spec_.directory, ec)) {
    throw Error(ErrorCode::DecodeFailure, "replay directory not found: " + spec_.directory.string());
  }
  for (const auto& entry : fs::directory_iterator(spec_.directory)) {
    if (entry.is_regular_file() && is_replay_image(entry.path())) files_.push_back(entry.path());
  }
  std::sort(files_.begin(), files_.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (files_.empty()) {
    throw Error(ErrorCode::DecodeFailure, "replay directory has no PNG/BMP/JPG files: " + spec_.directory.string());
  }
  cache_.resize(files_.size());
  bad_.assign(files_.size(), false);
}

std::optional<Frame> ReplaySource::next_frame(std::chrono::milliseconds timeout) {
  if (closed_) throw Error(ErrorCode::SourceClosed, id() + " is closed");
  if (!wait_until_due(next_due_, timeout)) return std::nullopt;

  for (std::size_t attempts = 0; attempts < files_.size(); ++attempts) {
    const std::size_t index = cursor_;
    cursor_ = (cursor_ + 1) % files_.size();
    if (bad_[index]) continue;
    if (!cache_[index]) {
      try {
        cache_[index] = read_image(files_[index]);
      } catch (const Error& e) {
        std::cerr << "scopeloop: warning: skipping replay image " << files_[index].string() << ": " << e.what()
                  << '\n';
        bad_[index] = true;
        ++skipped_;
        continue;
      }
    }
    next_due_ = Clock::now() + spec_.frame_interval;
    Frame frame = *cache_[index];
    frame.timestamp_ns = last_ts_ = next_timestamp(last_ts_);
    frame.source_id = id();
    return frame;
  }
  throw Error(ErrorCode::DecodeFailure, "no decodable image in " + spec_.directory.string());
}

std::string ReplaySource::id() const { return "replay:" + spec_.directory.string(); }

// ------------------------------------------------------------------- screen

#ifdef SCOPELOOP_HAVE_X11
namespace {

class X11Grabber final : public ScreenGrabber {
 public:
  X11Grabber() : display_(XOpenDisplay(nullptr)) {}
  ~X11Grabber() override {
    if (display_ != nullptr) XCloseDisplay(display_);
  }
  X11Grabber(const X11Grabber&) = delete;
  X11Grabber& operator=(const X11Grabber&) = delete;

  std::optional<Frame> grab(const CaptureRegion& region) override {
    if (display_ == nullptr) return std::nullopt;
    const Window root = DefaultRootWindow(display_);
    XImage* image = XGetImage(display_, root, region.left, region.top, static_cast<unsigned>(region.width()),
                              static_cast<unsigned>(region.height()), AllPlanes, ZPixmap);
    if (image == nullptr) return std::nullopt;
    Frame frame(region.width(), region.height(), PixelFormat::BGRA);
    for (int y = 0; y < frame.height; ++y) {
      std::uint8_t* dst = frame.at(0, y);
      for (int x = 0; x < frame.width; ++x) {
        // 24/32-bit TrueColor visuals: 0x00RRGGBB.
        const unsigned long px = XGetPixel(image, x, y);
        dst[4 * x + 0] = static_cast<std::uint8_t>(px & 0xff);
        dst[4 * x + 1] = static_cast<std::uint8_t>((px >> 8) & 0xff);
        dst[4 * x + 2] = static_cast<std::uint8_t>((px >> 16) & 0xff);
        dst[4 * x + 3] = 255;
      }
    }
    XDestroyImage(image);
    return frame;
  }

 private:
  Display* display_;
};

}  // namespace

std::unique_ptr<ScreenGrabber> make_platform_grabber() { return std::make_unique<X11Grabber>(); }
#else
std::unique_ptr<ScreenGrabber> make_platform_grabber() { return nullptr; }
#endif

ScreenSource::ScreenSource(CaptureRegion region, std::unique_ptr<ScreenGrabber> grabber)
    : region_(region), grabber_(std::move(grabber)) {}

std::optional<Frame> ScreenSource::next_frame(std::chrono::milliseconds /*timeout*/) {
  if (!grabber_) throw Error(ErrorCode::SourceClosed, "no screen capture adapter available");
  auto frame = grabber_->grab(region_);
  if (!frame) throw Error(ErrorCode::SourceClosed, "display unavailable");
  frame->timestamp_ns = last_ts_ = next_timestamp(last_ts_);
  frame->source_id = id();
  return frame;
}

void ScreenSource::close() { grabber_.reset(); }

// ---------------------------------------------------------------- factories

SourceSpec parse_source_spec(const std::string& text, const CaptureRegion& region) {
  if (text == "screen") return ScreenSpec{region};
  if (text.rfind("replay:", 0) == 0 && text.size() > 7) return ReplaySpec{text.substr(7), {}};
  if (text.rfind("synthetic:", 0) == 0) {
    const std::string rest = text.substr(10);
    const auto a = rest.find('x');
    const auto b = rest.find('x', a == std::string::npos ? a : a + 1);
    long long seed = 0, w = 0, h = 0;
    if (a != std::string::npos && b != std::string::npos && parse_int(rest.substr(0, a), seed) &&
        parse_int(rest.substr(a + 1, b - a - 1), w) && parse_int(rest.substr(b + 1), h) && seed >= 0 && w > 0 &&
        h > 0 && w <= 16384 && h <= 16384) {
      return SyntheticSpec{static_cast<std::uint64_t>(seed), static_cast<int>(w), static_cast<int>(h), {}};
    }
  }
  throw Error(ErrorCode::InvalidRequest, "bad source '" + text + "' (expected screen|replay:<dir>|synthetic:<seed>x<W>x<H>)");
}

std::string describe(const SourceSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ScreenSpec>) {
          return "screen";
        } else if constexpr (std::is_same_v<T, ReplaySpec>) {
          return "replay:" + s.directory.string();
        } else {
          return "synthetic:" + std::to_string(s.seed) + "x" + std::to_string(s.width) + "x" + std::to_string(s.height);
        }
      },
      spec);
}

std::unique_ptr<FrameSource> open_source(const SourceSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::unique_ptr<FrameSource> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ScreenSpec>) {
          return std::make_unique<ScreenSource>(s.region, make_platform_grabber());
        } else if constexpr (std::is_same_v<T, ReplaySpec>) {
          return std::make_unique<ReplaySource>(s);
        } else {
          return std::make_unique<SyntheticSource>(s);
        }
      },
      spec);
}

}  // namespace scopeloop
