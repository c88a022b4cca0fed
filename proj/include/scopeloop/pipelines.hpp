#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "scopeloop/inference.hpp"
#include "scopeloop/nms.hpp"
#include "scopeloop/tiling.hpp"

namespace scopeloop {

/// Wall-clock split of one pipeline run.
struct PipelineLatency {
  double total_ms = 0;
  double adapter_ms = 0;  ///< time spent inside backend calls
  [[nodiscard]] double overhead_ms() const noexcept { return total_ms - adapter_ms; }
};

struct ClassificationResult {
  SoftmaxVector mean_probs;
  std::size_t predicted = 0;
  std::size_t tile_count = 0;
  PipelineLatency latency;
};

struct DetectionResult {
  std::vector<Detection> detections;  ///< analyzed-frame coordinates, post-NMS, post-threshold
  std::vector<ConfidenceBand> bands;  ///< parallel to detections
  double threshold_applied = 0;
  std::size_t candidate_count = 0;    ///< raw per-tile detections before NMS
  std::size_t tile_count = 0;
  PipelineLatency latency;
};

struct Ki67Result {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::optional<double> index;  ///< absent when no nuclei were found
  std::vector<InstanceMask> stitched_masks;
  std::size_t tile_count = 0;
  PipelineLatency latency;
};

using InferenceResult = std::variant<ClassificationResult, DetectionResult, Ki67Result>;

[[nodiscard]] Task task_of(const InferenceResult& result) noexcept;
[[nodiscard]] const PipelineLatency& latency_of(const InferenceResult& result) noexcept;
[[nodiscard]] std::size_t tile_count_of(const InferenceResult& result) noexcept;

/// Element-wise arithmetic mean of the tile vectors. Each class is summed in
/// ascending value order, so the result does not depend on tile order.
[[nodiscard]] SoftmaxVector mean_pool(std::span<const SoftmaxVector> tiles);

/// Index of the largest entry; ties go to the lowest index.
[[nodiscard]] std::size_t argmax(std::span<const double> values);

/// Prepared model input: converted to the model's pixel format and upscaled
/// so both sides are at least one tile.
struct AnalyzedFrame {
  Frame frame;
  Scale scale;
};
[[nodiscard]] AnalyzedFrame prepare_frame(const Frame& frame, const ModelDescriptor& descriptor);

struct RunOptions {
  /// Dispatch tiles concurrently when the backend declares itself reentrant.
  bool parallel_tiles = false;
};

[[nodiscard]] ClassificationResult run_classification(const Frame& analyzed, InferenceBackend& backend,
                                                      const RunOptions& options = {});

[[nodiscard]] DetectionResult run_detection(const Frame& analyzed, InferenceBackend& backend, int overlap,
                                            double threshold, const NmsConfig& nms = {},
                                            const RunOptions& options = {});

/// Strict grid, no cross-tile de-duplication: an instance cut by a tile
/// boundary is counted once per tile it appears in.
[[nodiscard]] Ki67Result run_ki67(const Frame& analyzed, InferenceBackend& backend, const RunOptions& options = {});

/// Keeps detections with score >= threshold and recomputes bands.
[[nodiscard]] DetectionResult apply_threshold(DetectionResult result, double threshold, const NmsConfig& nms = {});

}  // namespace scopeloop
