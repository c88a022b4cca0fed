#pragma once

#include <vector>

#include "scopeloop/frame.hpp"

namespace scopeloop {

/// Square inference tile in frame coordinates (top-left origin).
struct TileRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  friend bool operator==(const TileRect&, const TileRect&) = default;
};

enum class TilingStrategy {
  ClassificationEdgeShift,  ///< non-overlapping grid, last row/column flush with the far edges
  SegmentationStrict,       ///< non-overlapping grid, residual strips dropped
  DetectionOverlap,         ///< overlapping sliding window, last row/column flush with the far edges
};

/// Exact upscale ratio numerator/denominator (1/1 when nothing was scaled).
struct Scale {
  int numerator = 1;
  int denominator = 1;
  [[nodiscard]] double value() const noexcept { return static_cast<double>(numerator) / denominator; }
  friend bool operator==(const Scale&, const Scale&) = default;
};

struct TilePlan {
  TilingStrategy strategy = TilingStrategy::ClassificationEdgeShift;
  std::vector<TileRect> tiles;  ///< row-major
  Scale scale_applied;
};

struct FrameDims {
  int width = 0;
  int height = 0;
  friend bool operator==(const FrameDims&, const FrameDims&) = default;
};

struct UpscaledFrame {
  Frame frame;
  Scale scale;
};

/// Uniformly upscales so that min(width, height) >= min_dim, preserving the
/// aspect ratio. Frames that are already large enough pass through untouched.
[[nodiscard]] UpscaledFrame upscale_if_undersized(const Frame& frame, int min_dim);

/// Tile origins along one axis for an edge-shifted grid of the given stride.
/// The final origin is clamped to `extent - tile` and duplicates are removed.
[[nodiscard]] std::vector<int> edge_shifted_origins(int extent, int tile, int stride);

[[nodiscard]] TilePlan plan_classification(FrameDims dims, int tile_size);
[[nodiscard]] TilePlan plan_segmentation(FrameDims dims, int tile_size);
[[nodiscard]] TilePlan plan_detection(FrameDims dims, int tile_size, int overlap);

inline constexpr int kDefaultDetectionOverlap = 64;

}  // namespace scopeloop
