#include "scopeloop/crash_log.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>

namespace scopeloop {

namespace fs = std::filesystem;

fs::path default_log_dir() {
  if (const char* env = std::getenv("SCOPELOOP_LOG_DIR"); env != nullptr && *env != '\0') return env;
  if (const char* xdg = std::getenv("XDG_STATE_HOME"); xdg != nullptr && *xdg != '\0') {
    return fs::path(xdg) / "scopeloop" / "logs";
  }
  if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') {
    return fs::path(home) / ".local" / "state" / "scopeloop" / "logs";
  }
  return fs::temp_directory_path() / "scopeloop" / "logs";
}

std::string describe_exception(const std::exception_ptr& error) {
  std::string out;
  std::exception_ptr current = error;
  while (current) {
    try {
      std::rethrow_exception(current);
    } catch (const std::exception& e) {
      if (!out.empty()) out += " <- ";
      out += e.what();
      try {
        std::rethrow_if_nested(e);
        current = nullptr;
      } catch (...) {
        current = std::current_exception();
      }
    } catch (...) {
      if (!out.empty()) out += " <- ";
      out += "unknown exception";
      current = nullptr;
    }
  }
  return out;
}

CrashLogger::CrashLogger(fs::path dir) : dir_(std::move(dir)) {}

namespace {

std::string utc_stamp(std::chrono::system_clock::time_point now, const char* fmt) {
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

bool append(const fs::path& dir, const fs::path& file, const std::string& text) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) return false;
  out << text;
  out.flush();
  return static_cast<bool>(out);
}

}  // namespace

fs::path CrashLogger::log(const CrashContext& context) {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::string name = "crash-" + utc_stamp(now, "%Y-%m-%d") + ".log";

  std::string text = "=== " + utc_stamp(now, "%Y-%m-%dT%H:%M:%S") + "." + std::to_string(1000 + ms).substr(1) + "Z\n";
  text += "error: " + context.error_chain + "\n";
  text += "last_event: " + (context.last_event.empty() ? std::string("none") : context.last_event) + "\n";
  text += "config: " + context.config.dump() + "\n\n";

  std::lock_guard lock(mutex_);
  const fs::path primary = dir_ / name;
  if (append(dir_, primary, text)) return primary;

  const fs::path fallback_dir = fs::temp_directory_path() / "scopeloop" / "logs";
  const fs::path fallback = fallback_dir / name;
  std::cerr << "scopeloop: cannot write crash log in " << dir_.string() << ", using " << fallback.string() << '\n';
  if (!append(fallback_dir, fallback, text)) {
    std::cerr << "scopeloop: crash log unavailable; entry follows\n" << text;
  }
  return fallback;
}

}  // namespace scopeloop
