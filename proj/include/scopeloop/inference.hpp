#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "scopeloop/frame.hpp"

namespace scopeloop {

enum class Task { Classification, Detection, Segmentation };

[[nodiscard]] const char* to_string(Task task) noexcept;
[[nodiscard]] Task parse_task(const std::string& text);

/// Per-class probabilities for one tile (or the pooled mean over tiles).
struct SoftmaxVector {
  std::vector<double> probs;
  std::vector<std::string> class_names;

  /// Throws BackendFailure unless sizes agree, there are >= 2 classes, every
  /// entry is in [0,1] and the entries sum to 1 within 1e-6.
  void validate() const;
};

/// Numerically stable softmax over `logits`.
[[nodiscard]] std::vector<double> softmax(const std::vector<double>& logits);

struct BoxRect {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
  friend bool operator==(const BoxRect&, const BoxRect&) = default;
};

/// One candidate detection: box, class id (1 = mitotic figure) and score.
struct Detection {
  BoxRect box;
  int class_id = 1;
  double score = 0;

  [[nodiscard]] double cx() const noexcept { return box.x + box.w / 2; }
  [[nodiscard]] double cy() const noexcept { return box.y + box.h / 2; }

  /// Same detection shifted by a tile origin.
  [[nodiscard]] Detection translated(int dx, int dy) const noexcept {
    Detection d = *this;
    d.box.x += dx;
    d.box.y += dy;
    return d;
  }
  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Horizontal run of mask pixels in the mask's own coordinate space.
struct MaskRun {
  int y = 0;
  int x = 0;
  int length = 0;
  friend bool operator==(const MaskRun&, const MaskRun&) = default;
};

enum class Ki67Label { Positive, Negative };

/// Run-length encoded instance mask. Runs are tile-local until the mask is
/// stitched into frame coordinates, after which `tile_origin` is (0, 0).
struct InstanceMask {
  Point tile_origin;
  std::vector<MaskRun> runs;
  Ki67Label label = Ki67Label::Positive;

  [[nodiscard]] std::int64_t area() const noexcept;
  [[nodiscard]] InstanceMask stitched() const;
  friend bool operator==(const InstanceMask&, const InstanceMask&) = default;
};

struct BuiltinMockSource {
  std::string backend;  ///< quadrant | marker-detector | scatter-detector | marker-segmenter
};
struct LocalFileSource {
  std::filesystem::path path;
};
struct RemoteSource {
  std::string url;
  std::string sha256;  ///< lowercase hex
};
using ModelSource = std::variant<BuiltinMockSource, LocalFileSource, RemoteSource>;

struct ModelDescriptor {
  std::string id;
  Task task = Task::Classification;
  int tile_size = 1024;
  PixelFormat input_format = PixelFormat::RGB;
  ModelSource source = BuiltinMockSource{"quadrant"};
  /// Extra per-call latency injected by mock backends (testing knob).
  std::chrono::milliseconds simulated_latency{0};
  /// When >= 0, the mock throws on every call after this many successes.
  int fail_after_calls = -1;

  /// Throws ManifestError if the descriptor is internally inconsistent.
  void validate() const;
};

/// Uniform adapter over the three model task shapes. Backends only see single
/// tiles; merging across tiles is the caller's job.
class InferenceBackend {
 public:
  virtual ~InferenceBackend() = default;

  [[nodiscard]] virtual const ModelDescriptor& descriptor() const = 0;
  /// True when concurrent calls on one handle are safe.
  [[nodiscard]] virtual bool reentrant() const { return false; }

  virtual SoftmaxVector classify(const Frame& tile);
  virtual std::vector<Detection> detect(const Frame& tile);
  virtual std::vector<InstanceMask> segment(const Frame& tile);
};

/// Shape/format-checked entry points. Backend exceptions are rethrown as
/// BackendFailure carrying the model id.
[[nodiscard]] SoftmaxVector classify_tile(InferenceBackend& backend, const Frame& tile);
[[nodiscard]] std::vector<Detection> detect_tile(InferenceBackend& backend, const Frame& tile);
[[nodiscard]] std::vector<InstanceMask> segment_tile(InferenceBackend& backend, const Frame& tile);

// ---------------------------------------------------------------- mocks
//
// quadrant          classification. Means (r, g, b) of the RGB tile, scaled to
//                   [0,1], give logits 4*(r, g, b, 1 - (r+g+b)/3) over the
//                   classes red, green, blue, pale.
// marker-detector   detection. Every 4-connected component of pixels with
//                   R = 255, B = 255, G <= 100 is one detection whose box is
//                   the component bounding box. Score 0.9 for G = 0,
//                   otherwise G / 100.
// scatter-detector  detection. 0-5 detections at pseudo-random centroids with
//                   pseudo-random scores, seeded by the tile content hash.
// marker-segmenter  segmentation. 4-connected components of exact RGB
//                   (140, 70, 20) are Ki-67 positive, RGB (0, 0, 255) negative.
//                   Input is BGR.

inline constexpr std::uint8_t kMarkerBrownRgb[3] = {140, 70, 20};
inline constexpr std::uint8_t kMarkerBlueRgb[3] = {0, 0, 255};
inline constexpr double kMarkerDefaultScore = 0.9;

[[nodiscard]] std::shared_ptr<InferenceBackend> make_mock_backend(const ModelDescriptor& descriptor);

/// Descriptors for the shipped mocks: mock-quadrant (1024), mock-marker-detector
/// (512), mock-scatter-detector (512), mock-marker-segmenter (1024).
[[nodiscard]] std::vector<ModelDescriptor> builtin_descriptors();

}  // namespace scopeloop
