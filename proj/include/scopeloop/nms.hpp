#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "scopeloop/inference.hpp"

namespace scopeloop {

enum class ConfidenceBand { High, Medium, Low };

[[nodiscard]] const char* to_string(ConfidenceBand band) noexcept;

struct NmsConfig {
  double radius = 25.0;        ///< centroid distance below which lower-ranked detections are dropped
  double high_above = 0.7;     ///< s > high_above is High
  double medium_above = 0.4;   ///< medium_above < s <= high_above is Medium, the rest Low
};

/// High for s > 0.7, Medium for 0.4 < s <= 0.7, Low otherwise.
[[nodiscard]] ConfidenceBand band_for(double score, const NmsConfig& config = {}) noexcept;

/// Suppression order: descending score, ties broken by ascending centroid x,
/// then y, then input position.
[[nodiscard]] bool ranks_before(const Detection& a, std::size_t ia, const Detection& b, std::size_t ib) noexcept;

/// Static 2-d KD-tree over points, answering "all points strictly within r".
class KdTree2 {
 public:
  struct Point2 {
    double x, y;
  };

  explicit KdTree2(std::vector<Point2> points);

  /// Indices (into the construction order) of points with distance < radius.
  void radius_query(Point2 center, double radius, std::vector<std::size_t>& out) const;
  [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }

 private:
  void build(std::size_t lo, std::size_t hi, int depth);
  void query(std::size_t lo, std::size_t hi, int depth, Point2 c, double r2, std::vector<std::size_t>& out) const;

  std::vector<Point2> points_;
  std::vector<std::size_t> order_;  // implicit tree: median of [lo, hi) is the node
};

/// Distance-based non-maximum suppression over detection centroids.
/// Detections are visited in `ranks_before` order; each kept detection drops
/// every not-yet-kept detection whose centroid lies strictly within
/// `config.radius`. Returns survivors in visit order.
[[nodiscard]] std::vector<Detection> distance_nms(std::span<const Detection> candidates, const NmsConfig& config = {});

}  // namespace scopeloop
