#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "scopeloop/error.hpp"
#include "scopeloop/tiling.hpp"
#include "support.hpp"

using namespace scopeloop;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidRequest;
}

// Pixel-level coverage count, usable for small frames.
std::vector<int> coverage_map(const std::vector<TileRect>& tiles, int w, int h) {
  std::vector<int> hits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
  for (const auto& t : tiles) {
    for (int y = t.y; y < t.y + t.h; ++y) {
      for (int x = t.x; x < t.x + t.w; ++x) ++hits[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
    }
  }
  return hits;
}

}  // namespace

TEST_CASE("edge_shifted_origins") {
  CHECK(edge_shifted_origins(1024, 1024, 1024) == std::vector<int>{0});
  CHECK(edge_shifted_origins(2048, 1024, 1024) == std::vector<int>{0, 1024});
  CHECK(edge_shifted_origins(2500, 1024, 1024) == std::vector<int>{0, 1024, 1476});
  CHECK(edge_shifted_origins(1000, 512, 448) == std::vector<int>{0, 448, 488});
  CHECK(edge_shifted_origins(960, 512, 448) == std::vector<int>{0, 448});
}

TEST_CASE("classification plan: 2500x1100 with T=1024") {
  const auto plan = plan_classification({2500, 1100}, 1024);
  CHECK(plan.strategy == TilingStrategy::ClassificationEdgeShift);
  REQUIRE(plan.tiles.size() == 6);
  CHECK(plan.tiles[0] == TileRect{0, 0, 1024, 1024});
  CHECK(plan.tiles[2] == TileRect{1476, 0, 1024, 1024});
  CHECK(plan.tiles[5] == TileRect{1476, 76, 1024, 1024});
}

TEST_CASE("segmentation plan drops residual strips") {
  const auto plan = plan_segmentation({2500, 1100}, 1024);
  REQUIRE(plan.tiles.size() == 2);
  CHECK(plan.tiles[0] == TileRect{0, 0, 1024, 1024});
  CHECK(plan.tiles[1] == TileRect{1024, 0, 1024, 1024});
}

TEST_CASE("detection plan: stride is tile minus overlap, last tile flush") {
  const auto plan = plan_detection({1000, 600}, 512, 64);
  REQUIRE(plan.tiles.size() == 6);
  CHECK(plan.tiles[0] == TileRect{0, 0, 512, 512});
  CHECK(plan.tiles[1] == TileRect{448, 0, 512, 512});
  CHECK(plan.tiles[2] == TileRect{488, 0, 512, 512});
  CHECK(plan.tiles[3] == TileRect{0, 88, 512, 512});
}

TEST_CASE("plans validate their inputs") {
  CHECK(code_of([] { (void)plan_detection({1000, 1000}, 512, 512); }) == ErrorCode::InvalidOverlap);
  CHECK(code_of([] { (void)plan_detection({1000, 1000}, 512, -1); }) == ErrorCode::InvalidOverlap);
  CHECK(code_of([] { (void)plan_detection({100, 1000}, 512, 600); }) == ErrorCode::InvalidOverlap);
  CHECK(code_of([] { (void)plan_classification({1023, 2000}, 1024); }) == ErrorCode::FrameSmallerThanTile);
  CHECK(code_of([] { (void)plan_segmentation({2000, 10}, 1024); }) == ErrorCode::FrameSmallerThanTile);
}

TEST_CASE("pixel-level coverage on small random frames") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = std::uniform_int_distribution<int>(4, 24)(rng);
    const int w = std::uniform_int_distribution<int>(t, 4 * t)(rng);
    const int h = std::uniform_int_distribution<int>(t, 4 * t)(rng);
    const int overlap = std::uniform_int_distribution<int>(0, t - 1)(rng);
    CAPTURE(t);
    CAPTURE(w);
    CAPTURE(h);
    CAPTURE(overlap);

    const auto cls = coverage_map(plan_classification({w, h}, t).tiles, w, h);
    CHECK(std::all_of(cls.begin(), cls.end(), [](int c) { return c >= 1; }));
    const auto det = coverage_map(plan_detection({w, h}, t, overlap).tiles, w, h);
    CHECK(std::all_of(det.begin(), det.end(), [](int c) { return c >= 1; }));

    const auto seg = coverage_map(plan_segmentation({w, h}, t).tiles, w, h);
    CHECK(std::all_of(seg.begin(), seg.end(), [](int c) { return c <= 1; }));
    const auto excluded = std::count(seg.begin(), seg.end(), 0);
    CHECK(excluded == static_cast<long>(w) * h - static_cast<long>(w / t) * (h / t) * t * t);
  }
}

TEST_CASE("compressed-coverage oracle agrees on full-size tiles") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = std::uniform_int_distribution<int>(1024, 4096)(rng);
    const int h = std::uniform_int_distribution<int>(1024, 4096)(rng);
    const auto cls = plan_classification({w, h}, 1024);
    CHECK(oracle::covered_area(cls.tiles, w, h) == static_cast<std::int64_t>(w) * h);
    const auto det = plan_detection({w, h}, 512, 64);
    CHECK(oracle::covered_area(det.tiles, w, h) == static_cast<std::int64_t>(w) * h);
    for (const auto& tile : det.tiles) CHECK(oracle::inside(tile, w, h));
    const auto seg = plan_segmentation({w, h}, 1024);
    CHECK(oracle::pairwise_disjoint(seg.tiles));
  }
}

TEST_CASE("upscale keeps the aspect ratio with an exact rational scale") {
  const Frame small = testing_support::solid_rgb(300, 500, 10, 20, 30);
  const auto up = upscale_if_undersized(small, 1024);
  CHECK(up.scale == Scale{256, 75});
  CHECK(up.frame.width == 1024);
  CHECK(up.frame.height == 1707);  // ceil(500 * 256 / 75)
  CHECK(up.frame.at(500, 800)[1] == 20);

  const Frame wide = testing_support::solid_rgb(2000, 512, 0, 0, 0);
  const auto up2 = upscale_if_undersized(wide, 1024);
  CHECK(up2.scale == Scale{2, 1});
  CHECK(up2.frame.width == 4000);
  CHECK(up2.frame.height == 1024);

  const Frame big = testing_support::solid_rgb(1024, 1100, 0, 0, 0);
  const auto same = upscale_if_undersized(big, 1024);
  CHECK(same.scale == Scale{1, 1});
  CHECK(same.frame.width == 1024);
  CHECK(code_of([] { (void)upscale_if_undersized(Frame{}, 1024); }) == ErrorCode::EmptyFrame);
}
