#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <random>
#include <string>

#include "scopeloop/frame.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string templ = (fs::temp_directory_path() / "scopeloop-test-XXXXXX").string();
    if (::mkdtemp(templ.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    fs::permissions(path_, fs::perms::owner_all, fs::perm_options::add, ec);
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const fs::path& path() const noexcept { return path_; }
  [[nodiscard]] fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// Sets an environment variable for the lifetime of the object.
class ScopedEnv {
 public:
  ScopedEnv(std::string name, const std::string& value) : name_(std::move(name)) {
    if (const char* old = std::getenv(name_.c_str())) old_ = old;
    ::setenv(name_.c_str(), value.c_str(), 1);
  }
  ~ScopedEnv() {
    if (old_) {
      ::setenv(name_.c_str(), old_->c_str(), 1);
    } else {
      ::unsetenv(name_.c_str());
    }
  }

 private:
  std::string name_;
  std::optional<std::string> old_;
};

inline scopeloop::Frame solid_rgb(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  scopeloop::Frame f(w, h, scopeloop::PixelFormat::RGB);
  for (std::size_t i = 0; i < f.pixels.size(); i += 3) {
    f.pixels[i] = r;
    f.pixels[i + 1] = g;
    f.pixels[i + 2] = b;
  }
  return f;
}

/// Paints an RGB rectangle; clipped to the frame.
inline void fill_rect(scopeloop::Frame& f, int x, int y, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  for (int yy = std::max(0, y); yy < std::min(f.height, y + h); ++yy) {
    for (int xx = std::max(0, x); xx < std::min(f.width, x + w); ++xx) {
      auto* p = f.at(xx, yy);
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  }
}

/// A frame of uniform gray noise that never matches any mock marker color.
inline scopeloop::Frame gray_noise(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> v(90, 170);
  scopeloop::Frame f(w, h, scopeloop::PixelFormat::RGB);
  for (std::size_t i = 0; i < f.pixels.size(); i += 3) {
    const auto g = static_cast<std::uint8_t>(v(rng));
    f.pixels[i] = f.pixels[i + 1] = f.pixels[i + 2] = g;
  }
  return f;
}

}  // namespace testing_support
