#include "scopeloop/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "scopeloop/error.hpp"

namespace scopeloop {

const char* to_string(Task task) noexcept {
  switch (task) {
    case Task::Classification: return "classification";
    case Task::Detection: return "detection";
    case Task::Segmentation: return "segmentation";
  }
  return "?";
}

Task parse_task(const std::string& text) {
  if (text == "classification") return Task::Classification;
  if (text == "detection" || text == "mitosis") return Task::Detection;
  if (text == "segmentation" || text == "ki67") return Task::Segmentation;
  throw Error(ErrorCode::InvalidRequest, "unknown task '" + text + "'");
}

void SoftmaxVector::validate() const {
  if (probs.size() != class_names.size() || probs.size() < 2) {
    throw Error(ErrorCode::BackendFailure, "softmax needs >= 2 named classes");
  }
  double sum = 0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::BackendFailure, "probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error(ErrorCode::BackendFailure, "probabilities do not sum to 1");
}

std::vector<double> softmax(const std::vector<double>& logits) {
  if (logits.empty()) return {};
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - peak);
  for (double& v : out) v /= total;
  return out;
}

std::int64_t InstanceMask::area() const noexcept {
  std::int64_t a = 0;
  for (const auto& r : runs) a += r.length;
  return a;
}

InstanceMask InstanceMask::stitched() const {
  InstanceMask out;
  out.label = label;
  out.runs.reserve(runs.size());
  for (const auto& r : runs) out.runs.push_back({r.y + tile_origin.y, r.x + tile_origin.x, r.length});
  return out;
}

void ModelDescriptor::validate() const {
  if (id.empty()) throw Error(ErrorCode::ManifestError, "model id must not be empty");
  if (tile_size < 1) throw Error(ErrorCode::ManifestError, id + ": tile_size must be >= 1");
  if (input_format == PixelFormat::BGRA) throw Error(ErrorCode::ManifestError, id + ": models consume RGB or BGR");
  const PixelFormat expected = task == Task::Segmentation ? PixelFormat::BGR : PixelFormat::RGB;
  if (input_format != expected) {
    throw Error(ErrorCode::ManifestError, id + ": " + to_string(task) + " models take " + scopeloop::to_string(expected));
  }
  if (const auto* remote = std::get_if<RemoteSource>(&source)) {
    if (remote->sha256.size() != 64) throw Error(ErrorCode::ManifestError, id + ": remote source needs a sha256");
  }
}

SoftmaxVector InferenceBackend::classify(const Frame&) {
  throw Error(ErrorCode::BackendFailure, descriptor().id + " does not classify");
}
std::vector<Detection> InferenceBackend::detect(const Frame&) {
  throw Error(ErrorCode::BackendFailure, descriptor().id + " does not detect");
}
std::vector<InstanceMask> InferenceBackend::segment(const Frame&) {
  throw Error(ErrorCode::BackendFailure, descriptor().id + " does not segment");
}

namespace {

void check_tile(const InferenceBackend& backend, const Frame& tile, Task task) {
  const auto& d = backend.descriptor();
  if (d.task != task) {
    throw Error(ErrorCode::BackendFailure, d.id + " is a " + to_string(d.task) + " model, not " + to_string(task));
  }
  if (tile.width != d.tile_size || tile.height != d.tile_size) {
    throw Error(ErrorCode::WrongTileShape, d.id + " expects " + std::to_string(d.tile_size) + "x" +
                                               std::to_string(d.tile_size) + " tiles, got " +
                                               std::to_string(tile.width) + "x" + std::to_string(tile.height));
  }
  if (tile.format != d.input_format) {
    throw Error(ErrorCode::WrongTileShape, d.id + " expects " + std::string(to_string(d.input_format)) + " input");
  }
  if (tile.pixels.size() != tile.expected_bytes()) throw Error(ErrorCode::WrongTileShape, "tile buffer size mismatch");
}

template <typename Fn>
auto guarded(const InferenceBackend& backend, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BackendFailure || e.code() == ErrorCode::WrongTileShape) throw;
    throw Error(ErrorCode::BackendFailure, backend.descriptor().id + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::BackendFailure, backend.descriptor().id + ": " + e.what());
  }
}

}  // namespace

SoftmaxVector classify_tile(InferenceBackend& backend, const Frame& tile) {
  check_tile(backend, tile, Task::Classification);
  auto out = guarded(backend, [&] { return backend.classify(tile); });
  out.validate();
  return out;
}

std::vector<Detection> detect_tile(InferenceBackend& backend, const Frame& tile) {
  check_tile(backend, tile, Task::Detection);
  auto out = guarded(backend, [&] { return backend.detect(tile); });
  for (const auto& d : out) {
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw Error(ErrorCode::BackendFailure, "detection score outside [0,1]");
  }
  return out;
}

std::vector<InstanceMask> segment_tile(InferenceBackend& backend, const Frame& tile) {
  check_tile(backend, tile, Task::Segmentation);
  auto out = guarded(backend, [&] { return backend.segment(tile); });
  for (const auto& m : out) {
    if (m.runs.empty()) throw Error(ErrorCode::BackendFailure, "empty instance mask");
    for (const auto& r : m.runs) {
      if (r.y < 0 || r.y >= tile.height || r.x < 0 || r.length < 1 || r.x + r.length > tile.width) {
        throw Error(ErrorCode::BackendFailure, "instance mask outside tile bounds");
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- mocks

namespace {

struct Component {
  int min_x, min_y, max_x, max_y;
  Point seed;
  std::vector<MaskRun> runs;
};

// 4-connected components of pixels accepted by `member`, in raster order of
// their first pixel. Runs are sorted by (y, x).
template <typename Member>
std::vector<Component> components(const Frame& tile, Member&& member) {
  const int w = tile.width, h = tile.height;
  std::vector<std::uint8_t> state(static_cast<std::size_t>(w) * h, 0);  // 0 unseen, 1 member, 2 visited
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (member(tile.at(x, y))) state[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  std::vector<Component> out;
  std::vector<Point> stack, pixels;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (state[static_cast<std::size_t>(y) * w + x] != 1) continue;
      Component c{x, y, x, y, {x, y}, {}};
      pixels.clear();
      stack.assign(1, {x, y});
      state[static_cast<std::size_t>(y) * w + x] = 2;
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        pixels.push_back(p);
        c.min_x = std::min(c.min_x, p.x);
        c.max_x = std::max(c.max_x, p.x);
        c.min_y = std::min(c.min_y, p.y);
        c.max_y = std::max(c.max_y, p.y);
        const Point nbrs[4] = {{p.x - 1, p.y}, {p.x + 1, p.y}, {p.x, p.y - 1}, {p.x, p.y + 1}};
        for (const Point& n : nbrs) {
          if (n.x < 0 || n.y < 0 || n.x >= w || n.y >= h) continue;
          auto& s = state[static_cast<std::size_t>(n.y) * w + n.x];
          if (s == 1) {
            s = 2;
            stack.push_back(n);
          }
        }
      }
      std::sort(pixels.begin(), pixels.end(), [](Point a, Point b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
      for (const Point& p : pixels) {
        if (!c.runs.empty() && c.runs.back().y == p.y && c.runs.back().x + c.runs.back().length == p.x) {
          ++c.runs.back().length;
        } else {
          c.runs.push_back({p.y, p.x, 1});
        }
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class MockBackend final : public InferenceBackend {
 public:
  explicit MockBackend(ModelDescriptor descriptor) : descriptor_(std::move(descriptor)) {
    kind_ = std::get<BuiltinMockSource>(descriptor_.source).backend;
  }

  [[nodiscard]] const ModelDescriptor& descriptor() const override { return descriptor_; }
  [[nodiscard]] bool reentrant() const override { return true; }

  SoftmaxVector classify(const Frame& tile) override {
    before_call();
    if (kind_ != "quadrant") return InferenceBackend::classify(tile);
    double sum[3] = {0, 0, 0};
    const std::size_t n = static_cast<std::size_t>(tile.width) * tile.height;
    const std::uint8_t* p = tile.pixels.data();
    for (std::size_t i = 0; i < n; ++i, p += 3) {
      sum[0] += p[0];
      sum[1] += p[1];
      sum[2] += p[2];
    }
    const double r = sum[0] / (255.0 * n), g = sum[1] / (255.0 * n), b = sum[2] / (255.0 * n);
    const double gain = 4.0;
    return {softmax({gain * r, gain * g, gain * b, gain * (1.0 - (r + g + b) / 3.0)}), {"red", "green", "blue", "pale"}};
  }

  std::vector<Detection> detect(const Frame& tile) override {
    before_call();
    if (kind_ == "marker-detector") {
      auto comps = components(tile, [](const std::uint8_t* px) { return px[0] == 255 && px[2] == 255 && px[1] <= 100; });
      std::vector<Detection> out;
      out.reserve(comps.size());
      for (const auto& c : comps) {
        const std::uint8_t g = tile.at(c.seed.x, c.seed.y)[1];
        const double score = g == 0 ? kMarkerDefaultScore : g / 100.0;
        out.push_back({{static_cast<double>(c.min_x), static_cast<double>(c.min_y),
                        static_cast<double>(c.max_x - c.min_x + 1), static_cast<double>(c.max_y - c.min_y + 1)},
                       1,
                       score});
      }
      return out;
    }
    if (kind_ == "scatter-detector") {
      std::uint64_t state = mix64(content_hash(tile));
      auto next = [&state] { return state = mix64(state); };
      const int count = static_cast<int>(next() % 6);
      std::vector<Detection> out;
      for (int i = 0; i < count; ++i) {
        const double cx = static_cast<double>(next() % static_cast<std::uint64_t>(tile.width));
        const double cy = static_cast<double>(next() % static_cast<std::uint64_t>(tile.height));
        const double score = static_cast<double>(next() % 1001) / 1000.0;
        out.push_back({{cx - 8, cy - 8, 16, 16}, 1, score});
      }
      return out;
    }
    return InferenceBackend::detect(tile);
  }

  std::vector<InstanceMask> segment(const Frame& tile) override {
    before_call();
    if (kind_ != "marker-segmenter") return InferenceBackend::segment(tile);
    // Tile is BGR.
    auto is_brown = [](const std::uint8_t* px) {
      return px[2] == kMarkerBrownRgb[0] && px[1] == kMarkerBrownRgb[1] && px[0] == kMarkerBrownRgb[2];
    };
    auto is_blue = [](const std::uint8_t* px) {
      return px[2] == kMarkerBlueRgb[0] && px[1] == kMarkerBlueRgb[1] && px[0] == kMarkerBlueRgb[2];
    };
    std::vector<InstanceMask> out;
    for (auto& c : components(tile, is_brown)) out.push_back({{0, 0}, std::move(c.runs), Ki67Label::Positive});
    for (auto& c : components(tile, is_blue)) out.push_back({{0, 0}, std::move(c.runs), Ki67Label::Negative});
    return out;
  }

 private:
  void before_call() {
    if (descriptor_.fail_after_calls >= 0 && calls_.fetch_add(1) >= descriptor_.fail_after_calls) {
      throw std::runtime_error("injected failure");
    }
    if (descriptor_.simulated_latency.count() > 0) std::this_thread::sleep_for(descriptor_.simulated_latency);
  }

  ModelDescriptor descriptor_;
  std::string kind_;
  std::atomic<int> calls_{0};
};

}  // namespace

std::shared_ptr<InferenceBackend> make_mock_backend(const ModelDescriptor& descriptor) {
  descriptor.validate();
  const auto* mock = std::get_if<BuiltinMockSource>(&descriptor.source);
  if (mock == nullptr) throw Error(ErrorCode::UnsupportedGraph, descriptor.id + " is not a builtin mock");
  static const std::pair<const char*, Task> kinds[] = {{"quadrant", Task::Classification},
                                                       {"marker-detector", Task::Detection},
                                                       {"scatter-detector", Task::Detection},
                                                       {"marker-segmenter", Task::Segmentation}};
  for (const auto& [name, task] : kinds) {
    if (mock->backend == name) {
      if (task != descriptor.task) {
        throw Error(ErrorCode::ManifestError, descriptor.id + ": mock '" + mock->backend + "' serves " + to_string(task));
      }
      return std::make_shared<MockBackend>(descriptor);
    }
  }
  throw Error(ErrorCode::UnsupportedGraph, "unknown mock backend '" + mock->backend + "'");
}

std::vector<ModelDescriptor> builtin_descriptors() {
  return {
      {"mock-quadrant", Task::Classification, 1024, PixelFormat::RGB, BuiltinMockSource{"quadrant"}},
      {"mock-marker-detector", Task::Detection, 512, PixelFormat::RGB, BuiltinMockSource{"marker-detector"}},
      {"mock-scatter-detector", Task::Detection, 512, PixelFormat::RGB, BuiltinMockSource{"scatter-detector"}},
      {"mock-marker-segmenter", Task::Segmentation, 1024, PixelFormat::BGR, BuiltinMockSource{"marker-segmenter"}},
  };
}

}  // namespace scopeloop
