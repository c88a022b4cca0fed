#include "scopeloop/error.hpp"

namespace scopeloop {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateRegion: return "DegenerateRegion";
    case ErrorCode::SourceClosed: return "SourceClosed";
    case ErrorCode::DecodeFailure: return "DecodeFailure";
    case ErrorCode::EmptyFrame: return "EmptyFrame";
    case ErrorCode::FrameSmallerThanTile: return "FrameSmallerThanTile";
    case ErrorCode::InvalidOverlap: return "InvalidOverlap";
    case ErrorCode::WrongTileShape: return "WrongTileShape";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::DownloadFailure: return "DownloadFailure";
    case ErrorCode::UnsupportedGraph: return "UnsupportedGraph";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::ManifestError: return "ManifestError";
    case ErrorCode::NoCurrentResult: return "NoCurrentResult";
    case ErrorCode::OverrideOnNonCountTask: return "OverrideOnNonCountTask";
    case ErrorCode::NegativeOverride: return "NegativeOverride";
    case ErrorCode::NonPositiveArea: return "NonPositiveArea";
    case ErrorCode::RoiDimsChangedSinceCalibration: return "RoiDimsChangedSinceCalibration";
    case ErrorCode::Uncalibrated: return "Uncalibrated";
    case ErrorCode::EmptySession: return "EmptySession";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::AlreadyRunning: return "AlreadyRunning";
    case ErrorCode::NotRunning: return "NotRunning";
    case ErrorCode::ChatActive: return "ChatActive";
    case ErrorCode::InvalidRequest: return "InvalidRequest";
    case ErrorCode::SpawnFailure: return "SpawnFailure";
    case ErrorCode::HandshakeTimeout: return "HandshakeTimeout";
    case ErrorCode::ChannelBroken: return "ChannelBroken";
  }
  return "Unknown";
}

}  // namespace scopeloop
