#include "scopeloop/pipelines.hpp"

#include <algorithm>
#include <chrono>
#include <future>

#include "scopeloop/error.hpp"

namespace scopeloop {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Returns `frame` itself when it is already model-ready, else a prepared copy
// held in `storage`.
const Frame& ensure_prepared(const Frame& frame, const ModelDescriptor& d, std::optional<AnalyzedFrame>& storage) {
  if (frame.format == d.input_format && frame.width >= d.tile_size && frame.height >= d.tile_size) return frame;
  storage = prepare_frame(frame, d);
  return storage->frame;
}

// Runs `infer` on every tile of `plan`, keyed by tile index. Adapter time is
// accumulated as the wall time of the dispatch phase.
template <typename Out, typename Infer>
std::vector<Out> run_tiles(const Frame& frame, const TilePlan& plan, InferenceBackend& backend,
                           const RunOptions& options, PipelineLatency& latency, Infer&& infer) {
  std::vector<Frame> tiles;
  tiles.reserve(plan.tiles.size());
  for (const auto& t : plan.tiles) tiles.push_back(crop(frame, t.x, t.y, t.w, t.h));

  std::vector<Out> out(plan.tiles.size());
  const auto start = Clock::now();
  if (options.parallel_tiles && backend.reentrant() && tiles.size() > 1) {
    std::vector<std::future<Out>> pending;
    pending.reserve(tiles.size());
    for (const auto& tile : tiles) {
      pending.push_back(std::async(std::launch::async, [&backend, &tile, &infer] { return infer(backend, tile); }));
    }
    for (std::size_t i = 0; i < pending.size(); ++i) out[i] = pending[i].get();
  } else {
    for (std::size_t i = 0; i < tiles.size(); ++i) out[i] = infer(backend, tiles[i]);
  }
  latency.adapter_ms += ms_since(start);
  return out;
}

}  // namespace

Task task_of(const InferenceResult& result) noexcept {
  switch (result.index()) {
    case 0: return Task::Classification;
    case 1: return Task::Detection;
    default: return Task::Segmentation;
  }
}

const PipelineLatency& latency_of(const InferenceResult& result) noexcept {
  return std::visit([](const auto& r) -> const PipelineLatency& { return r.latency; }, result);
}

std::size_t tile_count_of(const InferenceResult& result) noexcept {
  return std::visit([](const auto& r) { return r.tile_count; }, result);
}

SoftmaxVector mean_pool(std::span<const SoftmaxVector> tiles) {
  if (tiles.empty()) throw Error(ErrorCode::InvalidRequest, "mean pooling needs at least one tile");
  const std::size_t classes = tiles.front().probs.size();
  for (const auto& t : tiles) {
    if (t.probs.size() != classes || t.class_names != tiles.front().class_names) {
      throw Error(ErrorCode::BackendFailure, "tiles disagree on the class set");
    }
  }
  SoftmaxVector out;
  out.class_names = tiles.front().class_names;
  out.probs.resize(classes);
  std::vector<double> column(tiles.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < tiles.size(); ++i) column[i] = tiles[i].probs[c];
    std::sort(column.begin(), column.end());
    double sum = 0;
    for (double v : column) sum += v;
    out.probs[c] = sum / static_cast<double>(tiles.size());
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidRequest, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

AnalyzedFrame prepare_frame(const Frame& frame, const ModelDescriptor& descriptor) {
  if (frame.empty()) throw Error(ErrorCode::EmptyFrame, "cannot analyze an empty frame");
  auto up = upscale_if_undersized(convert_format(frame, descriptor.input_format), descriptor.tile_size);
  return {std::move(up.frame), up.scale};
}

ClassificationResult run_classification(const Frame& input, InferenceBackend& backend, const RunOptions& options) {
  const auto start = Clock::now();
  std::optional<AnalyzedFrame> storage;
  const Frame& frame = ensure_prepared(input, backend.descriptor(), storage);

  const TilePlan plan = plan_classification({frame.width, frame.height}, backend.descriptor().tile_size);
  ClassificationResult result;
  const auto per_tile = run_tiles<SoftmaxVector>(frame, plan, backend, options, result.latency, classify_tile);
  result.mean_probs = mean_pool(per_tile);
  result.predicted = argmax(result.mean_probs.probs);
  result.tile_count = per_tile.size();
  result.latency.total_ms = ms_since(start);
  return result;
}

DetectionResult apply_threshold(DetectionResult result, double threshold, const NmsConfig& nms) {
  std::erase_if(result.detections, [threshold](const Detection& d) { return d.score < threshold; });
  result.bands.clear();
  for (const auto& d : result.detections) result.bands.push_back(band_for(d.score, nms));
  result.threshold_applied = threshold;
  return result;
}

DetectionResult run_detection(const Frame& input, InferenceBackend& backend, int overlap, double threshold,
                              const NmsConfig& nms, const RunOptions& options) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::InvalidRequest, "threshold must be in [0,1]");
  const auto start = Clock::now();
  std::optional<AnalyzedFrame> storage;
  const Frame& frame = ensure_prepared(input, backend.descriptor(), storage);

  const TilePlan plan = plan_detection({frame.width, frame.height}, backend.descriptor().tile_size, overlap);
  DetectionResult result;
  const auto per_tile =
      run_tiles<std::vector<Detection>>(frame, plan, backend, options, result.latency, detect_tile);

  std::vector<Detection> candidates;
  for (std::size_t i = 0; i < per_tile.size(); ++i) {
    for (const auto& d : per_tile[i]) candidates.push_back(d.translated(plan.tiles[i].x, plan.tiles[i].y));
  }
  result.candidate_count = candidates.size();
  result.detections = distance_nms(candidates, nms);
  result.tile_count = plan.tiles.size();
  result = apply_threshold(std::move(result), threshold, nms);
  result.latency.total_ms = ms_since(start);
  return result;
}

Ki67Result run_ki67(const Frame& input, InferenceBackend& backend, const RunOptions& options) {
  const auto start = Clock::now();
  std::optional<AnalyzedFrame> storage;
  const Frame& frame = ensure_prepared(input, backend.descriptor(), storage);

  const TilePlan plan = plan_segmentation({frame.width, frame.height}, backend.descriptor().tile_size);
  Ki67Result result;
  const auto per_tile =
      run_tiles<std::vector<InstanceMask>>(frame, plan, backend, options, result.latency, segment_tile);

  for (std::size_t i = 0; i < per_tile.size(); ++i) {
    for (InstanceMask mask : per_tile[i]) {
      mask.tile_origin = {plan.tiles[i].x, plan.tiles[i].y};
      (mask.label == Ki67Label::Positive ? result.positive : result.negative) += 1;
      result.stitched_masks.push_back(mask.stitched());
    }
  }
  const std::size_t total = result.positive + result.negative;
  if (total > 0) result.index = static_cast<double>(result.positive) / static_cast<double>(total);
  result.tile_count = plan.tiles.size();
  result.latency.total_ms = ms_since(start);
  return result;
}

}  // namespace scopeloop
