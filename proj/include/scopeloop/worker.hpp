#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>

#include <json.hpp>

#include "scopeloop/aggregation.hpp"
#include "scopeloop/crash_log.hpp"
#include "scopeloop/error.hpp"
#include "scopeloop/frame_source.hpp"
#include "scopeloop/model_registry.hpp"
#include "scopeloop/nms.hpp"
#include "scopeloop/overlay.hpp"

namespace scopeloop {

/// Everything the worker needs to run one analysis cycle.
struct PipelineConfig {
  SourceSpec source = SyntheticSpec{0, 1024, 1024};
  std::optional<CaptureRegion> region;  ///< crops replay/synthetic frames; screen capture rectangle
  std::string model_id = "mock-quadrant";
  double threshold = 0.0;
  int overlap = kDefaultDetectionOverlap;
  OverlayStyle style;
  NmsConfig nms;
  bool aggregate_mode = false;
  int port = 8765;
  std::chrono::milliseconds capture_interval{10};

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Converts, tiles, infers, merges and renders one frame.
[[nodiscard]] AnalysisSnapshot analyze_frame(std::shared_ptr<const Frame> raw, InferenceBackend& backend,
                                             const PipelineConfig& config, std::uint64_t sequence);

/// Task-specific metrics block used in result events and CLI output.
[[nodiscard]] nlohmann::json result_metrics_json(const InferenceResult& result);

/// Single-slot mailbox between capture and inference: a new frame overwrites
/// an unconsumed one (latest frame wins).
class LatestFrameSlot {
 public:
  void put(Frame frame);
  /// Waits up to `timeout` for a frame; nullopt on timeout or after close().
  std::optional<Frame> take(std::chrono::milliseconds timeout);
  void close();

  [[nodiscard]] std::uint64_t produced() const noexcept { return produced_; }
  [[nodiscard]] std::uint64_t consumed() const noexcept { return consumed_; }
  [[nodiscard]] std::uint64_t dropped() const noexcept { return dropped_; }
  /// Timestamp of the newest frame ever put.
  [[nodiscard]] std::int64_t newest_timestamp() const noexcept { return newest_ts_; }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<Frame> frame_;
  bool closed_ = false;
  std::atomic<std::uint64_t> produced_{0}, consumed_{0}, dropped_{0};
  std::atomic<std::int64_t> newest_ts_{0};
};

struct ResultEvent {
  std::shared_ptr<const AnalysisSnapshot> snapshot;
  double latency_ms = 0;  ///< convert-to-render processing time for this frame
  double adapter_ms = 0;
  double cycle_ms = 0;    ///< start-to-start period of the worker loop
  std::uint64_t frames_dropped = 0;
};

struct ErrorEvent {
  ErrorCode code = ErrorCode::BackendFailure;
  std::string message;
  std::filesystem::path log_path;
};

using WorkerEvent = std::variant<ResultEvent, ErrorEvent>;

[[nodiscard]] nlohmann::json event_json(const WorkerEvent& event);

struct WorkerStats {
  std::uint64_t frames_produced = 0;
  std::uint64_t frames_processed = 0;
  std::uint64_t frames_dropped = 0;
  std::uint64_t cycles = 0;
  bool running = false;
};

/// The capture -> analyze -> render loop. Owns the frame source and the loaded
/// backend; publishes immutable events through `sink` and never touches
/// aggregation state.
class Worker {
 public:
  using EventSink = std::function<void(const WorkerEvent&)>;

  Worker(ModelRegistry& registry, CrashLogger& crash_log, EventSink sink);
  ~Worker();
  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;

  /// Resolves the model, opens the source and starts both threads. Throws
  /// AlreadyRunning, or the resolution/source error.
  void start(const PipelineConfig& config);

  /// Asks the loop to stop after the current cycle; returns immediately.
  /// No events are published once this returns.
  void request_stop();
  /// request_stop() and wait for the threads to exit.
  void stop();

  /// Replaces the live settings; applied at the next cycle boundary. A model
  /// change releases the current backend before the next one is loaded.
  void update(const PipelineConfig& config);

  [[nodiscard]] bool running() const noexcept { return running_; }
  [[nodiscard]] WorkerStats stats() const;

 private:
  void capture_loop(std::unique_ptr<FrameSource> source);
  void inference_loop();
  void fail(const std::exception_ptr& error, const std::string& last_event);
  void join();

  ModelRegistry& registry_;
  CrashLogger& crash_log_;
  EventSink sink_;

  mutable std::mutex config_mutex_;
  PipelineConfig config_;      // guarded by config_mutex_
  std::uint64_t config_version_ = 0;

  std::shared_ptr<InferenceBackend> backend_;
  std::string backend_model_;
  LatestFrameSlot* slot_ = nullptr;
  std::unique_ptr<LatestFrameSlot> slot_storage_;
  std::thread capture_thread_;
  std::thread inference_thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> processed_{0};
  std::atomic<std::uint64_t> cycles_{0};
  std::uint64_t sequence_ = 0;
  std::mutex lifecycle_mutex_;
  std::mutex emit_mutex_;
};

}  // namespace scopeloop
