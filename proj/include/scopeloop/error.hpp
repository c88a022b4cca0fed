#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scopeloop {

/// Stable error codes. The names double as the `code` field of JSON error
/// bodies returned by the control API, so never rename an existing entry.
enum class ErrorCode {
  DegenerateRegion,
  SourceClosed,
  DecodeFailure,
  EmptyFrame,
  FrameSmallerThanTile,
  InvalidOverlap,
  WrongTileShape,
  BackendFailure,
  ChecksumMismatch,
  DownloadFailure,
  UnsupportedGraph,
  UnknownModel,
  ManifestError,
  NoCurrentResult,
  OverrideOnNonCountTask,
  NegativeOverride,
  NonPositiveArea,
  RoiDimsChangedSinceCalibration,
  Uncalibrated,
  EmptySession,
  IoFailure,
  AlreadyRunning,
  NotRunning,
  ChatActive,
  InvalidRequest,
  SpawnFailure,
  HandshakeTimeout,
  ChannelBroken,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace scopeloop
