#include "scopeloop/worker.hpp"

#include <algorithm>

#include "scopeloop/error.hpp"

namespace scopeloop {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

// Region clipped to the frame, or nullopt when nothing of it is visible.
std::optional<CaptureRegion> clip(const CaptureRegion& r, int width, int height) {
  CaptureRegion c{std::max(0, r.left), std::max(0, r.top), std::min(width, r.right), std::min(height, r.bottom)};
  if (c.width() <= 0 || c.height() <= 0) return std::nullopt;
  return c;
}

}  // namespace

json PipelineConfig::to_json() const {
  json j{{"source", describe(source)},
         {"model", model_id},
         {"threshold", threshold},
         {"overlap", overlap},
         {"alpha", style.mask_alpha},
         {"nms_radius", nms.radius},
         {"aggregate_mode", aggregate_mode},
         {"port", port},
         {"capture_interval_ms", capture_interval.count()}};
  if (region) {
    j["region"] = {{"left", region->left}, {"top", region->top}, {"right", region->right}, {"bottom", region->bottom}};
  } else {
    j["region"] = nullptr;
  }
  return j;
}

json result_metrics_json(const InferenceResult& result) {
  return std::visit(
      [](const auto& r) -> json {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ClassificationResult>) {
          return {{"task", "classification"},
                  {"tile_count", r.tile_count},
                  {"predicted", r.predicted},
                  {"predicted_class", r.mean_probs.class_names.at(r.predicted)},
                  {"class_names", r.mean_probs.class_names},
                  {"probs", r.mean_probs.probs}};
        } else if constexpr (std::is_same_v<T, DetectionResult>) {
          json dets = json::array();
          for (std::size_t i = 0; i < r.detections.size(); ++i) {
            const auto& d = r.detections[i];
            dets.push_back({{"x", d.box.x},
                            {"y", d.box.y},
                            {"w", d.box.w},
                            {"h", d.box.h},
                            {"score", d.score},
                            {"band", to_string(r.bands.at(i))}});
          }
          return {{"task", "mitosis"},
                  {"tile_count", r.tile_count},
                  {"count", r.detections.size()},
                  {"candidates", r.candidate_count},
                  {"threshold", r.threshold_applied},
                  {"detections", dets}};
        } else {
          return {{"task", "ki67"},
                  {"tile_count", r.tile_count},
                  {"positive", r.positive},
                  {"negative", r.negative},
                  {"index", r.index ? json(*r.index) : json(nullptr)}};
        }
      },
      result);
}

AnalysisSnapshot analyze_frame(std::shared_ptr<const Frame> raw, InferenceBackend& backend,
                               const PipelineConfig& config, std::uint64_t sequence) {
  const bool is_screen = std::holds_alternative<ScreenSpec>(config.source);
  if (config.region && !is_screen) {
    if (const auto c = clip(*config.region, raw->width, raw->height);
        c && (c->width() != raw->width || c->height() != raw->height)) {
      raw = std::make_shared<const Frame>(crop(*raw, c->left, c->top, c->width(), c->height()));
    }
  }

  const ModelDescriptor& d = backend.descriptor();
  const AnalyzedFrame analyzed = prepare_frame(*raw, d);
  InferenceResult result;
  switch (d.task) {
    case Task::Classification: result = run_classification(analyzed.frame, backend); break;
    case Task::Detection:
      result = run_detection(analyzed.frame, backend, config.overlap, config.threshold, config.nms);
      break;
    case Task::Segmentation: result = run_ki67(analyzed.frame, backend); break;
  }

  AnalysisSnapshot snap;
  snap.sequence = sequence;
  snap.model_id = d.id;
  snap.annotated = std::make_shared<const Frame>(render_result(analyzed.frame, result, config.style));
  snap.result = std::move(result);
  snap.roi_dims = {raw->width, raw->height};
  snap.timestamp_ns = raw->timestamp_ns;
  snap.raw = std::move(raw);
  return snap;
}

// --------------------------------------------------------------------- slot

void LatestFrameSlot::put(Frame frame) {
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    if (frame_) ++dropped_;
    newest_ts_ = frame.timestamp_ns;
    frame_ = std::move(frame);
    ++produced_;
  }
  cv_.notify_one();
}

std::optional<Frame> LatestFrameSlot::take(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  if (!cv_.wait_for(lock, timeout, [this] { return frame_.has_value() || closed_; }) || closed_) return std::nullopt;
  std::optional<Frame> out = std::move(frame_);
  frame_.reset();
  ++consumed_;
  return out;
}

void LatestFrameSlot::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
    frame_.reset();
  }
  cv_.notify_all();
}

// ------------------------------------------------------------------- events

json event_json(const WorkerEvent& event) {
  return std::visit(
      [](const auto& e) -> json {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, ResultEvent>) {
          const auto& s = *e.snapshot;
          const auto& lat = latency_of(s.result);
          return {{"type", "result"},
                  {"sequence", s.sequence},
                  {"model_id", s.model_id},
                  {"timestamp_ns", s.timestamp_ns},
                  {"roi", {{"width", s.roi_dims.width}, {"height", s.roi_dims.height}}},
                  {"latency_ms", e.latency_ms},
                  {"adapter_ms", e.adapter_ms},
                  {"pipeline_ms", lat.total_ms},
                  {"cycle_ms", e.cycle_ms},
                  {"frames_dropped", e.frames_dropped},
                  {"metrics", result_metrics_json(s.result)}};
        } else {
          return {{"type", "error"},
                  {"code", std::string(to_string(e.code))},
                  {"message", e.message},
                  {"log_path", e.log_path.string()}};
        }
      },
      event);
}

// ------------------------------------------------------------------- worker

Worker::Worker(ModelRegistry& registry, CrashLogger& crash_log, EventSink sink)
    : registry_(registry), crash_log_(crash_log), sink_(std::move(sink)) {}

Worker::~Worker() { stop(); }

void Worker::start(const PipelineConfig& config) {
  std::lock_guard life(lifecycle_mutex_);
  if (running_) throw Error(ErrorCode::AlreadyRunning, "the worker loop is already running");
  join();

  const ModelDescriptor& descriptor = registry_.find(config.model_id);
  config.style.validate();
  if (descriptor.task == Task::Detection) {
    if (config.overlap < 0 || config.overlap >= descriptor.tile_size) {
      throw Error(ErrorCode::InvalidOverlap, "overlap must be in [0, tile_size)");
    }
  }
  if (!(config.threshold >= 0.0 && config.threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidRequest, "threshold must be in [0,1]");
  }

  PipelineConfig effective = config;
  if (std::holds_alternative<ScreenSpec>(effective.source) && effective.region) {
    std::get<ScreenSpec>(effective.source).region = *effective.region;
  }
  auto source = open_source(effective.source);
  backend_ = registry_.resolve(descriptor);
  backend_model_ = descriptor.id;
  {
    std::lock_guard lock(config_mutex_);
    config_ = effective;
    ++config_version_;
  }

  slot_storage_ = std::make_unique<LatestFrameSlot>();
  slot_ = slot_storage_.get();
  processed_ = 0;
  cycles_ = 0;
  stop_ = false;
  running_ = true;
  capture_thread_ = std::thread(&Worker::capture_loop, this, std::move(source));
  inference_thread_ = std::thread(&Worker::inference_loop, this);
}

void Worker::request_stop() {
  {
    std::lock_guard emit(emit_mutex_);
    stop_ = true;
  }
  running_ = false;
  if (slot_ != nullptr) slot_->close();
}

void Worker::join() {
  if (capture_thread_.joinable()) capture_thread_.join();
  if (inference_thread_.joinable()) inference_thread_.join();
  backend_.reset();
}

void Worker::stop() {
  std::lock_guard life(lifecycle_mutex_);
  request_stop();
  join();
}

void Worker::update(const PipelineConfig& config) {
  std::lock_guard lock(config_mutex_);
  config_ = config;
  ++config_version_;
}

WorkerStats Worker::stats() const {
  WorkerStats s;
  if (slot_ != nullptr) {
    s.frames_produced = slot_->produced();
    s.frames_dropped = slot_->dropped();
  }
  s.frames_processed = processed_;
  s.cycles = cycles_;
  s.running = running_;
  return s;
}

void Worker::fail(const std::exception_ptr& error, const std::string& last_event) {
  ErrorEvent event;
  try {
    std::rethrow_exception(error);
  } catch (const Error& e) {
    event.code = e.code();
  } catch (...) {
    event.code = ErrorCode::BackendFailure;
  }
  event.message = describe_exception(error);
  json config;
  {
    std::lock_guard lock(config_mutex_);
    config = config_.to_json();
  }
  event.log_path = crash_log_.log({event.message, config, last_event});

  std::lock_guard emit(emit_mutex_);
  if (stop_) return;
  stop_ = true;
  running_ = false;
  if (slot_ != nullptr) slot_->close();
  sink_(event);
}

void Worker::capture_loop(std::unique_ptr<FrameSource> source) {
  std::optional<CaptureRegion> screen_region;
  {
    std::lock_guard lock(config_mutex_);
    if (const auto* s = std::get_if<ScreenSpec>(&config_.source)) screen_region = s->region;
  }
  try {
    while (!stop_) {
      std::chrono::milliseconds interval;
      {
        std::lock_guard lock(config_mutex_);
        interval = config_.capture_interval;
        if (screen_region && config_.region && *config_.region != *screen_region) {
          screen_region = *config_.region;
          source = std::make_unique<ScreenSource>(*screen_region, make_platform_grabber());
        }
      }
      const auto due = Clock::now() + interval;
      if (auto frame = source->next_frame(std::chrono::milliseconds(100))) slot_->put(std::move(*frame));
      std::this_thread::sleep_until(due);
    }
  } catch (...) {
    fail(std::current_exception(), "capture");
  }
  source->close();
}

void Worker::inference_loop() {
  std::string last_event = "none";
  std::uint64_t seen_version = 0;
  PipelineConfig config;
  auto last_start = Clock::now();
  bool first = true;
  try {
    while (!stop_) {
      auto frame = slot_->take(std::chrono::milliseconds(100));
      if (!frame) continue;

      {
        std::lock_guard lock(config_mutex_);
        if (config_version_ != seen_version) {
          config = config_;
          seen_version = config_version_;
        }
      }
      if (config.model_id != backend_model_) {
        backend_.reset();
        backend_model_.clear();
        backend_ = registry_.resolve(config.model_id);
        backend_model_ = config.model_id;
      }

      const auto start = Clock::now();
      const double cycle_ms = first ? 0.0 : ms_between(last_start, start);
      first = false;
      last_start = start;

      auto raw = std::make_shared<const Frame>(std::move(*frame));
      auto snap = std::make_shared<const AnalysisSnapshot>(analyze_frame(raw, *backend_, config, ++sequence_));
      const double latency_ms = ms_between(start, Clock::now());
      ++processed_;
      ++cycles_;

      ResultEvent event{snap, latency_ms, latency_of(snap->result).adapter_ms, cycle_ms, slot_->dropped()};
      std::lock_guard emit(emit_mutex_);
      if (stop_) break;
      sink_(event);
      last_event = "result#" + std::to_string(snap->sequence);
    }
  } catch (...) {
    fail(std::current_exception(), last_event);
  }
}

}  // namespace scopeloop
