#include "scopeloop/chat_bridge.hpp"

#include <array>
#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <mutex>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>
#include <openssl/evp.h>

#include "scopeloop/error.hpp"

extern char** environ;

namespace scopeloop {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

fs::path default_chat_worker() {
  if (const char* env = std::getenv("SCOPELOOP_CHAT_WORKER"); env != nullptr && *env != '\0') return env;
  std::error_code ec;
  const fs::path self = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) return self.parent_path() / "scopeloop-chat-worker";
  return "scopeloop-chat-worker";
}

std::vector<ChatModelSpec> builtin_chat_models(const fs::path& worker) {
  return {{"mock", {worker.string(), "--model-id", "mock"}}};
}

const std::vector<std::string>& mock_chat_templates() {
  static const std::vector<std::string> templates{
      "The field shows densely packed tumor cells with hyperchromatic nuclei and scattered mitotic figures.",
      "This region contains fibrillary background with moderately pleomorphic glial cells and no clear necrosis.",
      "Sheets of small round blue cells fill the field; nuclear molding and crush artifact are present.",
      "The tissue is predominantly stroma with sparse inflammatory cells and a few reactive fibroblasts.",
      "Well formed glands lined by columnar epithelium are seen, with mild architectural crowding.",
      "Most nuclei are lightly stained; only a small fraction show strong brown proliferation marker staining.",
  };
  return templates;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

const std::string& mock_chat_reply(std::string_view image_bytes, std::string_view text) {
  const auto& t = mock_chat_templates();
  const std::uint64_t h = image_bytes.empty() ? fnv1a64(text) : fnv1a64(image_bytes);
  return t[h % t.size()];
}

std::vector<std::string> split_tokens(const std::string& reply) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < reply.size()) {
    std::size_t end = reply.find(' ', start);
    end = end == std::string::npos ? reply.size() : end + 1;
    out.push_back(reply.substr(start, end - start));
    start = end;
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::InvalidRequest, "base64 length must be a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::InvalidRequest, "invalid base64");
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

// ------------------------------------------------------------------ channel

class ChatChannel {
 public:
  pid_t pid = -1;
  int to_child = -1;
  int from_child = -1;
  std::thread reader;

  mutable std::mutex mutex;
  std::condition_variable cv;
  std::deque<json> inbox;
  bool eof = false;
  bool closed_locally = false;
  bool streaming = false;

  std::mutex write_mutex;
  std::mutex close_mutex;
  bool close_done = false;

  ~ChatChannel() { shutdown(); }

  bool write_line(const std::string& line) {
    std::lock_guard lock(write_mutex);
    if (to_child < 0) return false;
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::write(to_child, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    return true;
  }

  void reader_loop() {
    std::string buffer;
    std::array<char, 8192> chunk{};
    for (;;) {
      const ssize_t n = ::read(from_child, chunk.data(), chunk.size());
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      buffer.append(chunk.data(), static_cast<std::size_t>(n));
      std::size_t pos;
      while ((pos = buffer.find('\n')) != std::string::npos) {
        json msg = json::parse(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(pos), nullptr, false);
        buffer.erase(0, pos + 1);
        if (msg.is_discarded() || !msg.is_object()) continue;
        {
          std::lock_guard lock(mutex);
          inbox.push_back(std::move(msg));
        }
        cv.notify_all();
      }
      if (buffer.size() > kMaxChatLine) {
        // Protocol violation: an unterminated line over the cap.
        ::kill(pid, SIGKILL);
        break;
      }
    }
    {
      std::lock_guard lock(mutex);
      eof = true;
      streaming = false;
    }
    cv.notify_all();
  }

  bool exited_within(std::chrono::milliseconds budget) {
    const auto deadline = Clock::now() + budget;
    for (;;) {
      int status = 0;
      const pid_t r = ::waitpid(pid, &status, WNOHANG);
      if (r == pid || (r < 0 && errno == ECHILD)) return true;
      if (Clock::now() >= deadline) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  void shutdown() {
    std::lock_guard close_lock(close_mutex);
    if (close_done) return;
    close_done = true;
    {
      std::lock_guard lock(mutex);
      closed_locally = true;
    }
    cv.notify_all();
    if (pid > 0) {
      write_line(json{{"type", "shutdown"}}.dump());
      {
        std::lock_guard lock(write_mutex);
        if (to_child >= 0) ::close(to_child);
        to_child = -1;
      }
      if (!exited_within(std::chrono::seconds(2))) {
        ::kill(pid, SIGKILL);
        int status = 0;
        while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
        }
      }
    }
    if (reader.joinable()) reader.join();
    if (from_child >= 0) ::close(from_child);
    from_child = -1;
    {
      std::lock_guard lock(mutex);
      eof = true;
      streaming = false;
    }
    cv.notify_all();
  }
};

// ------------------------------------------------------------------- stream

std::optional<TokenChunk> TokenStream::next(std::chrono::milliseconds timeout) {
  if (finished_) return std::nullopt;
  auto& ch = *channel_;
  std::unique_lock lock(ch.mutex);
  for (;;) {
    if (!ch.cv.wait_for(lock, timeout, [&] { return !ch.inbox.empty() || ch.eof || ch.closed_locally; })) {
      return std::nullopt;
    }
    if (ch.closed_locally) {
      // A local close truncates the response, even if tokens are still buffered.
      finished_ = true;
      ch.streaming = false;
      return std::nullopt;
    }
    if (!ch.inbox.empty()) {
      json msg = std::move(ch.inbox.front());
      ch.inbox.pop_front();
      const std::string type = msg.value("type", "");
      if (type == "token") {
        TokenChunk chunk{msg.value("text", ""), false};
        partial_ += chunk.text;
        return chunk;
      }
      if (type == "done") {
        ch.streaming = false;
        finished_ = true;
        return TokenChunk{"", true};
      }
      if (type == "error") {
        ch.streaming = false;
        finished_ = true;
        throw Error(ErrorCode::ChannelBroken, "chat worker error: " + msg.value("message", ""));
      }
      continue;  // unknown message types are ignored
    }
    finished_ = true;
    ch.streaming = false;
    throw Error(ErrorCode::ChannelBroken, "chat worker exited mid-stream after " + std::to_string(partial_.size()) +
                                              " bytes");
  }
}

std::string TokenStream::collect(std::chrono::milliseconds timeout) {
  while (!finished_) {
    if (!next(timeout) && !finished_) throw Error(ErrorCode::ChannelBroken, "timed out waiting for chat tokens");
  }
  return partial_;
}

// ------------------------------------------------------------------- handle

namespace {

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] {
    struct sigaction sa{};
    sa.sa_handler = SIG_IGN;
    sigemptyset(&sa.sa_mask);
    ::sigaction(SIGPIPE, &sa, nullptr);
  });
}

}  // namespace

ChatHandle::ChatHandle(std::string model_id, std::shared_ptr<ChatChannel> channel)
    : model_id_(std::move(model_id)), channel_(std::move(channel)) {}

ChatHandle::~ChatHandle() { close(); }

std::unique_ptr<ChatHandle> ChatHandle::open(const std::string& model_id, const std::vector<ChatModelSpec>& models,
                                             std::chrono::milliseconds handshake_timeout) {
  for (const auto& m : models) {
    if (m.id == model_id) return open(m, handshake_timeout);
  }
  throw Error(ErrorCode::UnknownModel, "no chat model '" + model_id + "'");
}

std::unique_ptr<ChatHandle> ChatHandle::open(const ChatModelSpec& spec, std::chrono::milliseconds handshake_timeout) {
  if (spec.argv.empty()) throw Error(ErrorCode::SpawnFailure, spec.id + ": empty command line");
  ignore_sigpipe();

  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw Error(ErrorCode::SpawnFailure, std::strerror(errno));
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error(ErrorCode::SpawnFailure, std::strerror(errno));
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);

  std::vector<char*> argv;
  for (const auto& a : spec.argv) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  pid_t pid = -1;
  const int rc = ::posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  if (rc != 0) {
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    throw Error(ErrorCode::SpawnFailure, spec.argv[0] + ": " + std::strerror(rc));
  }

  auto channel = std::make_shared<ChatChannel>();
  channel->pid = pid;
  channel->to_child = in_pipe[1];
  channel->from_child = out_pipe[0];
  channel->reader = std::thread([raw = channel.get()] { raw->reader_loop(); });

  std::unique_ptr<ChatHandle> handle(new ChatHandle(spec.id, channel));
  std::unique_lock lock(channel->mutex);
  const bool got = channel->cv.wait_for(lock, handshake_timeout, [&] { return !channel->inbox.empty() || channel->eof; });
  if (got && !channel->inbox.empty() && channel->inbox.front().value("type", "") == "ready") {
    channel->inbox.pop_front();
    return handle;
  }
  const bool died = got && channel->eof;
  lock.unlock();
  handle->close();
  if (died) throw Error(ErrorCode::SpawnFailure, spec.id + ": worker exited before the handshake");
  throw Error(ErrorCode::HandshakeTimeout, spec.id + ": no ready message within " +
                                               std::to_string(handshake_timeout.count()) + " ms");
}

TokenStream ChatHandle::send_prompt(const ChatMessage& message) {
  if (message.role != ChatMessage::Role::User) throw Error(ErrorCode::InvalidRequest, "only user messages can be sent");
  auto& ch = *channel_;
  {
    std::lock_guard lock(ch.mutex);
    if (ch.eof || ch.closed_locally) throw Error(ErrorCode::ChannelBroken, "chat worker is not running");
    if (ch.streaming) throw Error(ErrorCode::InvalidRequest, "a response is still streaming");
    ch.streaming = true;
    ch.inbox.clear();
  }

  json prompt{{"type", "prompt"}, {"text", message.text}, {"image_b64", nullptr}, {"image_chunks", 0}};
  bool ok = true;
  if (message.image_png) {
    std::string b64 = base64_encode({reinterpret_cast<const char*>(message.image_png->data()), message.image_png->size()});
    if (b64.size() + message.text.size() + 256 <= kMaxChatLine) {
      prompt["image_b64"] = std::move(b64);
    } else {
      int chunks = 0;
      for (std::size_t off = 0; ok && off < b64.size(); off += kImageChunkBytes, ++chunks) {
        ok = ch.write_line(json{{"type", "image_chunk"}, {"data", b64.substr(off, kImageChunkBytes)}}.dump());
      }
      prompt["image_chunks"] = chunks;
    }
  }
  ok = ok && ch.write_line(prompt.dump());
  if (!ok) {
    std::lock_guard lock(ch.mutex);
    ch.streaming = false;
    throw Error(ErrorCode::ChannelBroken, "cannot write to chat worker");
  }
  return TokenStream(channel_);
}

void ChatHandle::close() {
  if (channel_) channel_->shutdown();
}

ChatState ChatHandle::state() const {
  std::lock_guard lock(channel_->mutex);
  if (channel_->eof || channel_->closed_locally) return ChatState::Closed;
  return channel_->streaming ? ChatState::Streaming : ChatState::Ready;
}

pid_t ChatHandle::pid() const noexcept { return channel_->pid; }

}  // namespace scopeloop
