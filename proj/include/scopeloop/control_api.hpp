#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "scopeloop/aggregation.hpp"
#include "scopeloop/chat_bridge.hpp"
#include "scopeloop/crash_log.hpp"
#include "scopeloop/error.hpp"
#include "scopeloop/latency.hpp"
#include "scopeloop/model_registry.hpp"
#include "scopeloop/worker.hpp"

namespace httplib {
class Server;
}

namespace scopeloop {

// Stream framing on GET /stream (chunked HTTP body): every message is
//   kind (1 byte: 'J' JSON event, 'F' annotated frame) | length (u32 BE) | payload
// A frame payload is a 16-byte header followed by a PNG:
//   "SLF1" | width (u32 LE) | height (u32 LE) | format (u32 LE, PixelFormat)
inline constexpr char kStreamJson = 'J';
inline constexpr char kStreamFrame = 'F';
inline constexpr char kFrameMagic[4] = {'S', 'L', 'F', '1'};

[[nodiscard]] std::string encode_stream_message(char kind, const std::string& payload);
[[nodiscard]] std::string encode_frame_payload(const Frame& frame);

struct StreamMessage {
  char kind = kStreamJson;
  std::string payload;
};

/// Incremental decoder for the stream framing; feed bytes, pop whole messages.
class StreamDecoder {
 public:
  void feed(const char* data, std::size_t size);
  std::optional<StreamMessage> pop();

 private:
  std::string buffer_;
};

struct DecodedFrameHeader {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  PixelFormat format = PixelFormat::RGB;
  std::string png;
};
/// Throws InvalidRequest on a bad magic or short payload.
[[nodiscard]] DecodedFrameHeader decode_frame_payload(const std::string& payload);

/// HTTP status used for an error code in JSON error bodies.
[[nodiscard]] int http_status_for(ErrorCode code) noexcept;
[[nodiscard]] nlohmann::json error_body(std::string_view code, const std::string& message);

struct ControlOptions {
  std::string host = "127.0.0.1";
  int port = 8765;  ///< 0 picks a free port
  std::filesystem::path export_root = ".";
  std::optional<std::filesystem::path> ui_dir;  ///< static files served at `/`
  std::vector<ChatModelSpec> chat_models = builtin_chat_models();
  std::size_t latency_window = 10;
  int http_threads = 64;
};

/// The control plane: owns the aggregate session and serves the JSON API and
/// the event stream while the worker runs on its own threads.
class ControlPlane {
 public:
  ControlPlane(ModelRegistry& registry, CrashLogger& crash_log, ControlOptions options,
               PipelineConfig initial = {});
  ~ControlPlane();
  ControlPlane(const ControlPlane&) = delete;
  ControlPlane& operator=(const ControlPlane&) = delete;

  /// Binds and starts serving in the background; returns the bound port.
  int listen();
  /// Blocks until shutdown() is called from another thread or a signal.
  void wait();
  void shutdown();
  [[nodiscard]] int port() const noexcept { return port_; }

  [[nodiscard]] nlohmann::json metrics() const;
  [[nodiscard]] nlohmann::json config_json() const;

 private:
  // Frames are PNG-encoded lazily, once, by whichever stream reader gets there first.
  struct SharedFrame {
    std::shared_ptr<const Frame> frame;
    std::once_flag once;
    std::string message;
    const std::string& encoded();
  };
  struct Outgoing {
    std::string bytes;
    std::shared_ptr<SharedFrame> frame;
  };
  struct Subscriber {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<Outgoing> queue;
    bool closed = false;
  };

  void routes();
  void on_worker_event(const WorkerEvent& event);
  void broadcast(Outgoing message);
  void publish_json(const nlohmann::json& event);
  void chat_pump(TokenStream stream, std::uint64_t turn);

  nlohmann::json handle_config(const nlohmann::json& body);
  nlohmann::json handle_region(const nlohmann::json& body);
  nlohmann::json handle_start();
  nlohmann::json handle_stop();
  nlohmann::json handle_propose();
  nlohmann::json handle_commit(const nlohmann::json& body);
  nlohmann::json handle_calibrate(const nlohmann::json& body);
  nlohmann::json handle_export(const nlohmann::json& body);
  nlohmann::json handle_chat_open(const nlohmann::json& body);
  nlohmann::json handle_chat_prompt(const nlohmann::json& body);
  nlohmann::json handle_chat_close();
  nlohmann::json chat_json() const;

  ModelRegistry& registry_;
  CrashLogger& crash_log_;
  ControlOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  int port_ = 0;

  mutable std::mutex config_mutex_;
  PipelineConfig config_;

  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const AnalysisSnapshot> latest_;
  std::optional<ErrorEvent> last_error_;
  LatencyWindow latency_;
  LatencyWindow cycle_;
  LatencyWindow adapter_;

  mutable std::mutex session_mutex_;
  AggregateSession session_;
  std::optional<PendingEntry> pending_;
  std::chrono::system_clock::time_point session_start_;

  mutable std::mutex subscribers_mutex_;
  std::vector<std::shared_ptr<Subscriber>> subscribers_;

  mutable std::mutex chat_mutex_;
  std::unique_ptr<ChatHandle> chat_;
  std::vector<nlohmann::json> transcript_;
  std::vector<std::thread> chat_threads_;
  std::uint64_t chat_turn_ = 0;

  std::unique_ptr<Worker> worker_;
};

}  // namespace scopeloop
