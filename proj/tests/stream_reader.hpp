#pragma once

// Background reader for GET /stream that decodes messages as they arrive.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "scopeloop/control_api.hpp"

namespace testing_support {

class StreamReader {
 public:
  explicit StreamReader(int port) : client_("127.0.0.1", port) {
    client_.set_read_timeout(30, 0);
    thread_ = std::thread([this] {
      client_.Get("/stream", [this](const char* data, std::size_t size) {
        std::lock_guard lock(mutex_);
        decoder_.feed(data, size);
        while (auto m = decoder_.pop()) messages_.push_back(std::move(*m));
        cv_.notify_all();
        return !stop_.load();
      });
      std::lock_guard lock(mutex_);
      ended_ = true;
      cv_.notify_all();
    });
  }
  ~StreamReader() { close(); }

  void close() {
    stop_ = true;
    client_.stop();
    if (thread_.joinable()) thread_.join();
  }

  /// Waits until some received message satisfies `pred`; returns it.
  std::optional<scopeloop::StreamMessage> wait_for(const std::function<bool(const scopeloop::StreamMessage&)>& pred,
                                                   std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    std::optional<scopeloop::StreamMessage> found;
    std::size_t scanned = 0;
    cv_.wait_for(lock, timeout, [&] {
      for (; scanned < messages_.size(); ++scanned) {
        if (pred(messages_[scanned])) {
          found = messages_[scanned];
          return true;
        }
      }
      return ended_;
    });
    return found;
  }

  std::optional<nlohmann::json> wait_json(const std::function<bool(const nlohmann::json&)>& pred,
                                          std::chrono::milliseconds timeout) {
    const auto m = wait_for(
        [&](const scopeloop::StreamMessage& m) {
          return m.kind == scopeloop::kStreamJson && pred(nlohmann::json::parse(m.payload));
        },
        timeout);
    if (!m) return std::nullopt;
    return nlohmann::json::parse(m->payload);
  }

  std::vector<scopeloop::StreamMessage> messages() {
    std::lock_guard lock(mutex_);
    return messages_;
  }

 private:
  httplib::Client client_;
  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::mutex mutex_;
  std::condition_variable cv_;
  scopeloop::StreamDecoder decoder_;
  std::vector<scopeloop::StreamMessage> messages_;
  bool ended_ = false;
};

}  // namespace testing_support
