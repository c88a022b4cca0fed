#pragma once

#include <chrono>
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

#include <sys/types.h>

namespace scopeloop {

// Wire protocol (newline-delimited JSON over the child's stdin/stdout):
//   child  -> {"type":"ready","model":<id>,"protocol":1}          once, at start
//   parent -> {"type":"image_chunk","data":<b64 piece>}*          only for large images
//   parent -> {"type":"prompt","text":<str>,"image_b64":<b64 PNG>|null,"image_chunks":<n>}
//   child  -> {"type":"token","text":<str>}*  then  {"type":"done"}
//   parent -> {"type":"shutdown"}
// Each line is at most kMaxChatLine bytes; images larger than that are sent as
// image_chunk messages first and reassembled by the child.

inline constexpr std::size_t kMaxChatLine = 1 << 20;
inline constexpr std::size_t kImageChunkBytes = 512 * 1024;

struct ChatMessage {
  enum class Role { User, Assistant };
  Role role = Role::User;
  std::string text;
  std::optional<std::vector<std::uint8_t>> image_png;  ///< user messages only
};

struct TokenChunk {
  std::string text;
  bool terminal = false;
};

/// How to launch a chat model: an executable speaking the protocol above.
struct ChatModelSpec {
  std::string id;
  std::vector<std::string> argv;
};

/// Path of the bundled mock worker: `$SCOPELOOP_CHAT_WORKER`, else
/// `scopeloop-chat-worker` next to the running executable.
[[nodiscard]] std::filesystem::path default_chat_worker();

/// Known chat models. Only "mock" ships.
[[nodiscard]] std::vector<ChatModelSpec> builtin_chat_models(const std::filesystem::path& worker = default_chat_worker());

// Mock model: canned descriptions, chosen by FNV-1a of the image bytes (or of
// the prompt text when there is no image) modulo the template count.
[[nodiscard]] const std::vector<std::string>& mock_chat_templates();
[[nodiscard]] std::uint64_t fnv1a64(std::string_view bytes) noexcept;
[[nodiscard]] const std::string& mock_chat_reply(std::string_view image_bytes, std::string_view text);
/// Splits a reply into word-sized chunks whose concatenation is the reply.
[[nodiscard]] std::vector<std::string> split_tokens(const std::string& reply);

[[nodiscard]] std::string base64_encode(std::string_view bytes);
[[nodiscard]] std::string base64_decode(std::string_view text);

enum class ChatState { Ready, Streaming, Closed };

class ChatChannel;

/// Incremental view of one response.
class TokenStream {
 public:
  explicit TokenStream(std::shared_ptr<ChatChannel> channel) : channel_(std::move(channel)) {}

  /// Next chunk in order; the final chunk has terminal = true. Returns nullopt
  /// on timeout, or once the stream was truncated by a local close(). Throws
  /// ChannelBroken if the child died mid-stream.
  std::optional<TokenChunk> next(std::chrono::milliseconds timeout = std::chrono::seconds(30));

  /// Drains the stream and returns the full text.
  std::string collect(std::chrono::milliseconds timeout = std::chrono::seconds(30));

  /// Text received so far.
  [[nodiscard]] const std::string& partial() const noexcept { return partial_; }
  [[nodiscard]] bool finished() const noexcept { return finished_; }

 private:
  std::shared_ptr<ChatChannel> channel_;
  std::string partial_;
  bool finished_ = false;
};

/// One chat worker subprocess. The parent survives anything the child does.
class ChatHandle {
 public:
  /// Spawns the worker and waits for its ready message. Throws UnknownModel
  /// (before spawning), SpawnFailure or HandshakeTimeout.
  static std::unique_ptr<ChatHandle> open(const std::string& model_id, const std::vector<ChatModelSpec>& models,
                                          std::chrono::milliseconds handshake_timeout = std::chrono::seconds(5));
  static std::unique_ptr<ChatHandle> open(const ChatModelSpec& spec,
                                          std::chrono::milliseconds handshake_timeout = std::chrono::seconds(5));

  ~ChatHandle();
  ChatHandle(const ChatHandle&) = delete;
  ChatHandle& operator=(const ChatHandle&) = delete;

  /// Sends one user message. Throws ChannelBroken when the child is gone and
  /// InvalidRequest while another response is still streaming.
  TokenStream send_prompt(const ChatMessage& message);

  /// Asks the child to exit, killing it after 2 s. Idempotent, safe from any thread.
  void close();

  [[nodiscard]] ChatState state() const;
  [[nodiscard]] pid_t pid() const noexcept;
  [[nodiscard]] const std::string& model_id() const noexcept { return model_id_; }

 private:
  ChatHandle(std::string model_id, std::shared_ptr<ChatChannel> channel);

  std::string model_id_;
  std::shared_ptr<ChatChannel> channel_;
};

}  // namespace scopeloop
