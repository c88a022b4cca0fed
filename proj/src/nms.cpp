#include "scopeloop/nms.hpp"

#include <algorithm>
#include <numeric>

namespace scopeloop {

const char* to_string(ConfidenceBand band) noexcept {
  switch (band) {
    case ConfidenceBand::High: return "high";
    case ConfidenceBand::Medium: return "medium";
    case ConfidenceBand::Low: return "low";
  }
  return "?";
}

ConfidenceBand band_for(double score, const NmsConfig& config) noexcept {
  if (score > config.high_above) return ConfidenceBand::High;
  if (score > config.medium_above) return ConfidenceBand::Medium;
  return ConfidenceBand::Low;
}

bool ranks_before(const Detection& a, std::size_t ia, const Detection& b, std::size_t ib) noexcept {
  if (a.score != b.score) return a.score > b.score;
  if (a.cx() != b.cx()) return a.cx() < b.cx();
  if (a.cy() != b.cy()) return a.cy() < b.cy();
  return ia < ib;
}

// ------------------------------------------------------------------ kd-tree

KdTree2::KdTree2(std::vector<Point2> points) : points_(std::move(points)), order_(points_.size()) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  build(0, order_.size(), 0);
}

void KdTree2::build(std::size_t lo, std::size_t hi, int depth) {
  if (hi - lo <= 1) return;
  const std::size_t mid = lo + (hi - lo) / 2;
  const bool by_x = depth % 2 == 0;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(hi), [&](std::size_t a, std::size_t b) {
                     return by_x ? points_[a].x < points_[b].x : points_[a].y < points_[b].y;
                   });
  build(lo, mid, depth + 1);
  build(mid + 1, hi, depth + 1);
}

void KdTree2::radius_query(Point2 center, double radius, std::vector<std::size_t>& out) const {
  out.clear();
  if (points_.empty() || radius <= 0) return;
  query(0, order_.size(), 0, center, radius * radius, out);
}

void KdTree2::query(std::size_t lo, std::size_t hi, int depth, Point2 c, double r2,
                    std::vector<std::size_t>& out) const {
  if (lo >= hi) return;
  const std::size_t mid = lo + (hi - lo) / 2;
  const Point2& p = points_[order_[mid]];
  const double dx = p.x - c.x, dy = p.y - c.y;
  if (dx * dx + dy * dy < r2) out.push_back(order_[mid]);
  if (hi - lo == 1) return;

  // Signed distance from the query to this node's splitting line.
  const double delta = depth % 2 == 0 ? c.x - p.x : c.y - p.y;
  // Left subtree holds coordinates <= split, right subtree >= split.
  if (delta <= 0 || delta * delta < r2) query(lo, mid, depth + 1, c, r2, out);
  if (delta >= 0 || delta * delta < r2) query(mid + 1, hi, depth + 1, c, r2, out);
}

// ---------------------------------------------------------------------- nms

std::vector<Detection> distance_nms(std::span<const Detection> candidates, const NmsConfig& config) {
  const std::size_t n = candidates.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ranks_before(candidates[a], a, candidates[b], b);
  });

  std::vector<KdTree2::Point2> centroids;
  centroids.reserve(n);
  for (const auto& d : candidates) centroids.push_back({d.cx(), d.cy()});
  const KdTree2 tree(std::move(centroids));

  std::vector<bool> suppressed(n, false);
  std::vector<std::size_t> neighbours;
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    if (suppressed[idx]) continue;
    kept.push_back(candidates[idx]);
    tree.radius_query({candidates[idx].cx(), candidates[idx].cy()}, config.radius, neighbours);
    for (std::size_t j : neighbours) {
      if (j != idx) suppressed[j] = true;
    }
    suppressed[idx] = true;
  }
  return kept;
}

}  // namespace scopeloop
