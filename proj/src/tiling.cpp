#include "scopeloop/tiling.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "scopeloop/error.hpp"

namespace scopeloop {

UpscaledFrame upscale_if_undersized(const Frame& frame, int min_dim) {
  if (frame.empty()) throw Error(ErrorCode::EmptyFrame, "cannot tile an empty frame");
  if (min_dim < 1) throw Error(ErrorCode::InvalidRequest, "min_dim must be >= 1");

  const int shorter = std::min(frame.width, frame.height);
  if (shorter >= min_dim) return {frame, Scale{}};

  const int g = std::gcd(min_dim, shorter);
  const Scale scale{min_dim / g, shorter / g};
  // Ceil so that rounding never leaves the longer side a pixel short of the exact ratio.
  auto scaled = [&](int extent) {
    const long long num = static_cast<long long>(extent) * scale.numerator;
    return static_cast<int>((num + scale.denominator - 1) / scale.denominator);
  };
  const int w = frame.width == shorter ? min_dim : scaled(frame.width);
  const int h = frame.height == shorter ? min_dim : scaled(frame.height);
  return {resize_bilinear(frame, w, h), scale};
}

std::vector<int> edge_shifted_origins(int extent, int tile, int stride) {
  std::vector<int> origins;
  for (int o = 0; o + tile <= extent; o += stride) origins.push_back(o);
  if (origins.empty() || origins.back() + tile < extent) origins.push_back(extent - tile);
  origins.erase(std::unique(origins.begin(), origins.end()), origins.end());
  return origins;
}

namespace {

void require_fits(FrameDims dims, int tile_size) {
  if (tile_size < 1) throw Error(ErrorCode::InvalidRequest, "tile size must be >= 1");
  if (dims.width < tile_size || dims.height < tile_size) {
    throw Error(ErrorCode::FrameSmallerThanTile, std::to_string(dims.width) + "x" + std::to_string(dims.height) +
                                                     " frame is smaller than tile " + std::to_string(tile_size));
  }
}

TilePlan grid(TilingStrategy strategy, const std::vector<int>& xs, const std::vector<int>& ys, int tile_size) {
  TilePlan plan;
  plan.strategy = strategy;
  plan.tiles.reserve(xs.size() * ys.size());
  for (int y : ys) {
    for (int x : xs) plan.tiles.push_back({x, y, tile_size, tile_size});
  }
  return plan;
}

}  // namespace

TilePlan plan_classification(FrameDims dims, int tile_size) {
  require_fits(dims, tile_size);
  return grid(TilingStrategy::ClassificationEdgeShift, edge_shifted_origins(dims.width, tile_size, tile_size),
              edge_shifted_origins(dims.height, tile_size, tile_size), tile_size);
}

TilePlan plan_segmentation(FrameDims dims, int tile_size) {
  require_fits(dims, tile_size);
  std::vector<int> xs, ys;
  for (int x = 0; x + tile_size <= dims.width; x += tile_size) xs.push_back(x);
  for (int y = 0; y + tile_size <= dims.height; y += tile_size) ys.push_back(y);
  return grid(TilingStrategy::SegmentationStrict, xs, ys, tile_size);
}

TilePlan plan_detection(FrameDims dims, int tile_size, int overlap) {
  if (overlap < 0 || overlap >= tile_size) {
    throw Error(ErrorCode::InvalidOverlap,
                "overlap " + std::to_string(overlap) + " must be in [0, " + std::to_string(tile_size) + ")");
  }
  require_fits(dims, tile_size);
  const int stride = tile_size - overlap;
  return grid(TilingStrategy::DetectionOverlap, edge_shifted_origins(dims.width, tile_size, stride),
              edge_shifted_origins(dims.height, tile_size, stride), tile_size);
}

}  // namespace scopeloop
