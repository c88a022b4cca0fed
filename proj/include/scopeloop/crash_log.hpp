#pragma once

#include <exception>
#include <filesystem>
#include <mutex>
#include <string>

#include <json.hpp>

namespace scopeloop {

/// `$SCOPELOOP_LOG_DIR`, else `$XDG_STATE_HOME/scopeloop/logs`, else
/// `~/.local/state/scopeloop/logs`.
[[nodiscard]] std::filesystem::path default_log_dir();

/// "what" of the exception and every exception nested inside it, outermost
/// first, joined by " <- ".
[[nodiscard]] std::string describe_exception(const std::exception_ptr& error);

struct CrashContext {
  std::string error_chain;
  nlohmann::json config = nlohmann::json::object();
  std::string last_event;
};

/// Append-only crash log, one file per UTC day (`crash-YYYY-MM-DD.log`).
/// Falls back to the system temp directory, with a notice on stderr, when the
/// configured directory is not writable.
class CrashLogger {
 public:
  explicit CrashLogger(std::filesystem::path dir = default_log_dir());

  /// Appends one timestamped entry and returns the file it went to.
  std::filesystem::path log(const CrashContext& context);

  [[nodiscard]] const std::filesystem::path& directory() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  std::mutex mutex_;
};

}  // namespace scopeloop
