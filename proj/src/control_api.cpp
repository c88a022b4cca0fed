#include "scopeloop/control_api.hpp"

#include <httplib.h>

#include <iostream>

#include "scopeloop/image_io.hpp"

namespace scopeloop {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ framing

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)]);
  return v;
}

}  // namespace

std::string encode_stream_message(char kind, const std::string& payload) {
  std::string out;
  out.reserve(payload.size() + 5);
  out.push_back(kind);
  const auto n = static_cast<std::uint32_t>(payload.size());
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((n >> shift) & 0xff));
  out += payload;
  return out;
}

std::string encode_frame_payload(const Frame& frame) {
  const auto png = encode_png(frame);
  std::string out(kFrameMagic, sizeof kFrameMagic);
  put_u32_le(out, static_cast<std::uint32_t>(frame.width));
  put_u32_le(out, static_cast<std::uint32_t>(frame.height));
  // The PNG always carries RGB samples.
  put_u32_le(out, static_cast<std::uint32_t>(PixelFormat::RGB));
  out.append(reinterpret_cast<const char*>(png.data()), png.size());
  return out;
}

DecodedFrameHeader decode_frame_payload(const std::string& payload) {
  if (payload.size() < 16 || payload.compare(0, 4, kFrameMagic, 4) != 0) {
    throw Error(ErrorCode::InvalidRequest, "not a frame payload");
  }
  DecodedFrameHeader h;
  h.width = get_u32_le(payload, 4);
  h.height = get_u32_le(payload, 8);
  h.format = static_cast<PixelFormat>(get_u32_le(payload, 12));
  h.png = payload.substr(16);
  return h;
}

void StreamDecoder::feed(const char* data, std::size_t size) { buffer_.append(data, size); }

std::optional<StreamMessage> StreamDecoder::pop() {
  if (buffer_.size() < 5) return std::nullopt;
  std::uint32_t n = 0;
  for (std::size_t i = 1; i < 5; ++i) n = (n << 8) | static_cast<unsigned char>(buffer_[i]);
  if (buffer_.size() < 5 + static_cast<std::size_t>(n)) return std::nullopt;
  StreamMessage m{buffer_[0], buffer_.substr(5, n)};
  buffer_.erase(0, 5 + static_cast<std::size_t>(n));
  return m;
}

// ------------------------------------------------------------------- errors

int http_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateRegion:
    case ErrorCode::InvalidOverlap:
    case ErrorCode::InvalidRequest:
    case ErrorCode::NegativeOverride:
    case ErrorCode::OverrideOnNonCountTask:
    case ErrorCode::NonPositiveArea:
      return 400;
    case ErrorCode::UnknownModel:
      return 404;
    case ErrorCode::AlreadyRunning:
    case ErrorCode::NotRunning:
    case ErrorCode::NoCurrentResult:
    case ErrorCode::ChatActive:
    case ErrorCode::RoiDimsChangedSinceCalibration:
    case ErrorCode::Uncalibrated:
    case ErrorCode::EmptySession:
      return 409;
    default:
      return 500;
  }
}

json error_body(std::string_view code, const std::string& message) {
  return {{"error", {{"code", std::string(code)}, {"message", message}}}};
}

// ------------------------------------------------------------------- server

const std::string& ControlPlane::SharedFrame::encoded() {
  std::call_once(once, [this] { message = encode_stream_message(kStreamFrame, encode_frame_payload(*frame)); });
  return message;
}

ControlPlane::ControlPlane(ModelRegistry& registry, CrashLogger& crash_log, ControlOptions options,
                           PipelineConfig initial)
    : registry_(registry),
      crash_log_(crash_log),
      options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()),
      config_(std::move(initial)),
      latency_(options_.latency_window),
      cycle_(options_.latency_window),
      adapter_(options_.latency_window),
      session_start_(std::chrono::system_clock::now()) {
  (void)registry_.find(config_.model_id);
  worker_ = std::make_unique<Worker>(registry_, crash_log_, [this](const WorkerEvent& e) { on_worker_event(e); });
  const int threads = std::max(1, options_.http_threads);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  routes();
}

ControlPlane::~ControlPlane() {
  shutdown();
  worker_->stop();
  handle_chat_close();
}

int ControlPlane::listen() {
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else if (server_->bind_to_port(options_.host, options_.port)) {
    port_ = options_.port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) {
    throw Error(ErrorCode::IoFailure, "cannot bind " + options_.host + ":" + std::to_string(options_.port));
  }
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void ControlPlane::wait() {
  if (server_thread_.joinable()) server_thread_.join();
}

void ControlPlane::shutdown() {
  {
    std::lock_guard lock(subscribers_mutex_);
    for (auto& s : subscribers_) {
      std::lock_guard sl(s->mutex);
      s->closed = true;
      s->cv.notify_all();
    }
  }
  server_->stop();
  if (server_thread_.joinable() && server_thread_.get_id() != std::this_thread::get_id()) server_thread_.join();
}

// ------------------------------------------------------------------- events

void ControlPlane::broadcast(Outgoing message) {
  constexpr std::size_t kMaxQueuedFrames = 4;
  constexpr std::size_t kMaxQueued = 1024;
  std::lock_guard lock(subscribers_mutex_);
  for (auto& s : subscribers_) {
    std::lock_guard sl(s->mutex);
    if (s->closed) continue;
    if (message.frame) {
      const auto frames = std::count_if(s->queue.begin(), s->queue.end(), [](const Outgoing& o) { return o.frame; });
      if (static_cast<std::size_t>(frames) >= kMaxQueuedFrames) continue;  // slow reader: skip this frame
    }
    if (s->queue.size() >= kMaxQueued) s->queue.pop_front();
    s->queue.push_back(message);
    s->cv.notify_all();
  }
}

void ControlPlane::publish_json(const json& event) {
  broadcast({encode_stream_message(kStreamJson, event.dump()), nullptr});
}

void ControlPlane::on_worker_event(const WorkerEvent& event) {
  if (const auto* r = std::get_if<ResultEvent>(&event)) {
    {
      std::lock_guard lock(snapshot_mutex_);
      latest_ = r->snapshot;
      latency_.add(r->latency_ms);
      adapter_.add(r->adapter_ms);
      if (r->cycle_ms > 0) cycle_.add(r->cycle_ms);
    }
    publish_json(event_json(event));
    bool any;
    {
      std::lock_guard lock(subscribers_mutex_);
      any = !subscribers_.empty();
    }
    if (any) {
      auto shared = std::make_shared<SharedFrame>();
      shared->frame = r->snapshot->annotated;
      broadcast({{}, std::move(shared)});
    }
  } else {
    {
      std::lock_guard lock(snapshot_mutex_);
      last_error_ = std::get<ErrorEvent>(event);
    }
    publish_json(event_json(event));
  }
}

// ------------------------------------------------------------------- config

json ControlPlane::config_json() const {
  std::lock_guard lock(config_mutex_);
  json j = config_.to_json();
  j["task"] = to_string(registry_.find(config_.model_id).task);
  return j;
}

json ControlPlane::metrics() const {
  json j;
  {
    std::lock_guard lock(snapshot_mutex_);
    const auto window = [](const LatencyWindow& w) {
      const auto samples = w.samples();
      const auto s = summarize(samples);
      return json{{"samples", samples}, {"count", s.count}, {"capacity", w.capacity()},
                  {"mean", s.mean},     {"stddev", s.stddev}, {"min", s.min}, {"max", s.max}};
    };
    j["latency_ms"] = window(latency_);
    j["adapter_ms"] = window(adapter_);
    j["cycle_ms"] = window(cycle_);
    j["last_sequence"] = latest_ ? json(latest_->sequence) : json(nullptr);
    if (last_error_) {
      j["last_error"] = {{"code", std::string(to_string(last_error_->code))},
                         {"message", last_error_->message},
                         {"log_path", last_error_->log_path.string()}};
    } else {
      j["last_error"] = nullptr;
    }
  }
  const auto ws = worker_->stats();
  j["worker"] = {{"running", ws.running},
                 {"frames_produced", ws.frames_produced},
                 {"frames_processed", ws.frames_processed},
                 {"frames_dropped", ws.frames_dropped},
                 {"cycles", ws.cycles}};
  const auto rs = registry_.stats();
  j["registry"] = {{"downloads", rs.downloads}, {"cache_hits", rs.cache_hits}, {"evicted_corrupt", rs.evicted_corrupt}};
  return j;
}

json ControlPlane::handle_config(const json& body) {
  if (!body.is_object()) throw Error(ErrorCode::InvalidRequest, "expected a JSON object");
  PipelineConfig next;
  {
    std::lock_guard lock(config_mutex_);
    next = config_;
  }
  if (body.contains("model")) next.model_id = body.at("model").get<std::string>();
  if (body.contains("threshold")) next.threshold = body.at("threshold").get<double>();
  if (body.contains("overlap")) next.overlap = body.at("overlap").get<int>();
  if (body.contains("alpha")) next.style.mask_alpha = body.at("alpha").get<double>();
  if (body.contains("nms_radius")) next.nms.radius = body.at("nms_radius").get<double>();
  if (body.contains("aggregate_mode")) next.aggregate_mode = body.at("aggregate_mode").get<bool>();
  if (body.contains("source")) next.source = parse_source_spec(body.at("source").get<std::string>());
  if (body.contains("capture_interval_ms")) {
    next.capture_interval = std::chrono::milliseconds(body.at("capture_interval_ms").get<int>());
  }

  const ModelDescriptor& d = registry_.find(next.model_id);
  if (body.contains("task") && parse_task(body.at("task").get<std::string>()) != d.task) {
    throw Error(ErrorCode::InvalidRequest, "task does not match model " + d.id);
  }
  if (!(next.threshold >= 0.0 && next.threshold <= 1.0)) throw Error(ErrorCode::InvalidRequest, "threshold must be in [0,1]");
  if (d.task == Task::Detection && (next.overlap < 0 || next.overlap >= d.tile_size)) {
    throw Error(ErrorCode::InvalidOverlap, "overlap must be in [0, " + std::to_string(d.tile_size) + ")");
  }
  if (!(next.nms.radius > 0)) throw Error(ErrorCode::InvalidRequest, "nms_radius must be positive");
  if (next.capture_interval.count() < 0) throw Error(ErrorCode::InvalidRequest, "capture_interval_ms must be >= 0");
  next.style.validate();

  {
    std::lock_guard lock(config_mutex_);
    config_ = next;
  }
  if (worker_->running()) worker_->update(next);
  return config_json();
}

json ControlPlane::handle_region(const json& body) {
  std::optional<CaptureRegion> region;
  if (body.is_object() && body.contains("region") && body.at("region").is_null()) {
    region.reset();
  } else {
    const json& r = body.contains("region") ? body.at("region") : body;
    region = CaptureRegion{r.at("left").get<int>(), r.at("top").get<int>(), r.at("right").get<int>(),
                           r.at("bottom").get<int>()};
    if (region->width() <= 0 || region->height() <= 0) {
      throw Error(ErrorCode::DegenerateRegion, "region must have positive width and height");
    }
  }
  PipelineConfig next;
  {
    std::lock_guard lock(config_mutex_);
    config_.region = region;
    next = config_;
  }
  if (worker_->running()) worker_->update(next);
  return config_json();
}

json ControlPlane::handle_start() {
  {
    std::lock_guard lock(chat_mutex_);
    if (chat_ && chat_->state() != ChatState::Closed) {
      throw Error(ErrorCode::ChatActive, "close the chat session before starting inference");
    }
  }
  PipelineConfig config;
  {
    std::lock_guard lock(config_mutex_);
    config = config_;
  }
  {
    std::lock_guard lock(snapshot_mutex_);
    last_error_.reset();
  }
  worker_->start(config);
  return {{"running", true}, {"config", config_json()}};
}

json ControlPlane::handle_stop() {
  if (!worker_->running()) throw Error(ErrorCode::NotRunning, "the worker loop is not running");
  worker_->request_stop();
  return {{"running", false}};
}

// -------------------------------------------------------------- aggregation

json ControlPlane::handle_propose() {
  std::shared_ptr<const AnalysisSnapshot> snap;
  {
    std::lock_guard lock(snapshot_mutex_);
    snap = latest_;
  }
  std::lock_guard lock(session_mutex_);
  pending_ = session_.propose_entry(snap.get());
  json j = pending_->prompt();
  j["calibration_valid"] = session_.calibration_valid_for(pending_->roi_dims);
  return j;
}

json ControlPlane::handle_commit(const json& body) {
  const std::string decision = body.at("decision").get<std::string>();
  Decision d;
  if (decision == "accept") {
    d = Decision::Accept;
  } else if (decision == "reject") {
    d = Decision::Reject;
  } else {
    throw Error(ErrorCode::InvalidRequest, "decision must be accept or reject");
  }
  std::optional<std::int64_t> override_count;
  if (body.contains("override") && !body.at("override").is_null()) override_count = body.at("override").get<std::int64_t>();

  std::lock_guard lock(session_mutex_);
  if (!pending_) throw Error(ErrorCode::NoCurrentResult, "nothing proposed; call /aggregate/propose first");
  const auto id = session_.commit_entry(*pending_, d, override_count);
  pending_.reset();
  return {{"entry_id", id ? json(*id) : json(nullptr)}, {"summary", session_.summary()}};
}

json ControlPlane::handle_calibrate(const json& body) {
  const double area = body.at("area_mm2").get<double>();
  FrameDims dims;
  if (body.contains("width") && body.contains("height")) {
    dims = {body.at("width").get<int>(), body.at("height").get<int>()};
  } else {
    std::lock_guard lock(snapshot_mutex_);
    if (!latest_) throw Error(ErrorCode::NoCurrentResult, "no analyzed ROI to calibrate against");
    dims = latest_->roi_dims;
  }
  std::lock_guard lock(session_mutex_);
  session_.calibrate(area, dims);
  return session_.summary();
}

json ControlPlane::handle_export(const json& body) {
  AggregateSession copy;
  {
    std::lock_guard lock(session_mutex_);
    copy = session_;
  }
  fs::path dir = options_.export_root / export_dir_name(session_start_);
  if (body.is_object() && body.contains("dir")) dir = body.at("dir").get<std::string>();
  const auto manifest = export_session(copy, dir);
  json images = json::array();
  for (const auto& p : manifest.images) images.push_back(p.string());
  return {{"directory", manifest.directory.string()}, {"csv", manifest.csv.string()}, {"images", images}};
}

// --------------------------------------------------------------------- chat

json ControlPlane::chat_json() const {
  std::lock_guard lock(chat_mutex_);
  const char* state = "closed";
  if (chat_) {
    switch (chat_->state()) {
      case ChatState::Ready: state = "ready"; break;
      case ChatState::Streaming: state = "streaming"; break;
      case ChatState::Closed: state = "closed"; break;
    }
  }
  return {{"state", state}, {"model", chat_ ? json(chat_->model_id()) : json(nullptr)}, {"transcript", transcript_}};
}

json ControlPlane::handle_chat_open(const json& body) {
  const std::string model = body.is_object() ? body.value("model", "mock") : "mock";
  {
    std::lock_guard lock(chat_mutex_);
    if (chat_ && chat_->state() != ChatState::Closed) throw Error(ErrorCode::ChatActive, "a chat session is already open");
  }
  handle_chat_close();
  // The chat model takes over the compute: inference is suspended while it is open.
  if (worker_->running()) worker_->request_stop();
  auto handle = ChatHandle::open(model, options_.chat_models);
  {
    std::lock_guard lock(chat_mutex_);
    chat_ = std::move(handle);
    transcript_.clear();
  }
  return chat_json();
}

json ControlPlane::handle_chat_prompt(const json& body) {
  const std::string text = body.at("text").get<std::string>();
  const bool attach = body.value("attach_frame", true);
  ChatMessage msg{ChatMessage::Role::User, text, std::nullopt};
  if (attach) {
    std::shared_ptr<const AnalysisSnapshot> snap;
    {
      std::lock_guard lock(snapshot_mutex_);
      snap = latest_;
    }
    if (snap) msg.image_png = encode_png(*snap->raw);
  }
  std::lock_guard lock(chat_mutex_);
  if (!chat_ || chat_->state() == ChatState::Closed) throw Error(ErrorCode::NotRunning, "no open chat session");
  TokenStream stream = chat_->send_prompt(msg);
  const std::uint64_t turn = ++chat_turn_;
  transcript_.push_back({{"role", "user"}, {"text", text}, {"image", msg.image_png.has_value()}, {"turn", turn}});
  chat_threads_.emplace_back(&ControlPlane::chat_pump, this, std::move(stream), turn);
  return {{"turn", turn}, {"state", "streaming"}};
}

void ControlPlane::chat_pump(TokenStream stream, std::uint64_t turn) {
  try {
    for (;;) {
      auto chunk = stream.next(std::chrono::milliseconds(500));
      if (!chunk) {
        if (!stream.finished()) continue;
        publish_json({{"type", "chat_closed"}, {"turn", turn}, {"partial", stream.partial()}});
        return;
      }
      if (chunk->terminal) break;
      publish_json({{"type", "chat_token"}, {"turn", turn}, {"text", chunk->text}});
    }
    {
      std::lock_guard lock(chat_mutex_);
      transcript_.push_back({{"role", "assistant"}, {"text", stream.partial()}, {"turn", turn}});
    }
    publish_json({{"type", "chat_done"}, {"turn", turn}, {"text", stream.partial()}});
  } catch (const std::exception& e) {
    publish_json({{"type", "chat_error"}, {"turn", turn}, {"message", e.what()}, {"partial", stream.partial()}});
  }
}

json ControlPlane::handle_chat_close() {
  std::unique_ptr<ChatHandle> handle;
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(chat_mutex_);
    handle = std::move(chat_);
    threads = std::move(chat_threads_);
    chat_threads_.clear();
  }
  if (handle) handle->close();
  for (auto& t : threads) t.join();
  return {{"state", "closed"}};
}

// ------------------------------------------------------------------- routes

namespace {

constexpr const char* kPlaceholderPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>scopeloop</title></head>"
    "<body><h1>scopeloop</h1><p>No UI bundle is mounted. The JSON API is available under "
    "/models, /config, /region, /start, /stop, /aggregate, /calibrate, /export, /metrics, /stream and /chat.</p>"
    "</body></html>";

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::InvalidRequest, "request body is not valid JSON");
  return j;
}

template <typename Fn>
httplib::Server::Handler wrap(Fn fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(fn(req).dump(), "application/json");
    } catch (const Error& e) {
      res.status = http_status_for(e.code());
      res.set_content(error_body(to_string(e.code()), e.what()).dump(), "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(error_body(to_string(ErrorCode::InvalidRequest), e.what()).dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(error_body("Internal", e.what()).dump(), "application/json");
    }
  };
}

}  // namespace

void ControlPlane::routes() {
  auto& s = *server_;
  s.Get("/models", wrap([this](const httplib::Request&) {
          json j = json::parse(dump_manifest(registry_.models()));
          json chat = json::array();
          for (const auto& m : options_.chat_models) chat.push_back(m.id);
          j["chat_models"] = chat;
          return j;
        }));
  s.Get("/config", wrap([this](const httplib::Request&) { return config_json(); }));
  s.Post("/config", wrap([this](const httplib::Request& r) { return handle_config(parse_body(r)); }));
  s.Post("/region", wrap([this](const httplib::Request& r) { return handle_region(parse_body(r)); }));
  s.Post("/start", wrap([this](const httplib::Request&) { return handle_start(); }));
  s.Post("/stop", wrap([this](const httplib::Request&) { return handle_stop(); }));
  s.Post("/aggregate/propose", wrap([this](const httplib::Request&) { return handle_propose(); }));
  s.Post("/aggregate/commit", wrap([this](const httplib::Request& r) { return handle_commit(parse_body(r)); }));
  s.Get("/aggregate", wrap([this](const httplib::Request&) {
          std::lock_guard lock(session_mutex_);
          json j = session_.summary();
          j["pending"] = pending_ ? pending_->prompt() : json(nullptr);
          return j;
        }));
  s.Post("/calibrate", wrap([this](const httplib::Request& r) { return handle_calibrate(parse_body(r)); }));
  s.Post("/export", wrap([this](const httplib::Request& r) { return handle_export(parse_body(r)); }));
  s.Get("/metrics", wrap([this](const httplib::Request&) { return metrics(); }));
  s.Get("/chat", wrap([this](const httplib::Request&) { return chat_json(); }));
  s.Post("/chat/open", wrap([this](const httplib::Request& r) { return handle_chat_open(parse_body(r)); }));
  s.Post("/chat/prompt", wrap([this](const httplib::Request& r) { return handle_chat_prompt(parse_body(r)); }));
  s.Post("/chat/close", wrap([this](const httplib::Request&) { return handle_chat_close(); }));

  s.Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
    auto sub = std::make_shared<Subscriber>();
    sub->queue.push_back({encode_stream_message(kStreamJson, json{{"type", "hello"}, {"config", config_json()}}.dump()),
                          nullptr});
    {
      std::lock_guard lock(subscribers_mutex_);
      subscribers_.push_back(sub);
    }
    res.set_header("Cache-Control", "no-store");
    res.set_chunked_content_provider(
        "application/octet-stream",
        [sub](std::size_t, httplib::DataSink& sink) {
          std::deque<Outgoing> batch;
          {
            std::unique_lock lock(sub->mutex);
            sub->cv.wait_for(lock, std::chrono::milliseconds(250), [&] { return !sub->queue.empty() || sub->closed; });
            if (sub->closed) {
              sink.done();
              return true;
            }
            batch.swap(sub->queue);
          }
          if (batch.empty()) return sink.is_writable();
          for (auto& m : batch) {
            const std::string& bytes = m.frame ? m.frame->encoded() : m.bytes;
            if (!sink.write(bytes.data(), bytes.size())) return false;
          }
          return true;
        },
        [this, sub](bool) {
          std::lock_guard lock(subscribers_mutex_);
          std::erase(subscribers_, sub);
        });
  });

  if (options_.ui_dir) {
    if (!s.set_mount_point("/", options_.ui_dir->string())) {
      std::cerr << "scopeloop: UI directory " << *options_.ui_dir << " not found; serving placeholder\n";
      options_.ui_dir.reset();
    }
  }
  if (!options_.ui_dir) {
    s.Get("/", [](const httplib::Request&, httplib::Response& res) { res.set_content(kPlaceholderPage, "text/html"); });
  }
}

}  // namespace scopeloop
