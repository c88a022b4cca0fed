// Mock chat model speaking the newline-delimited JSON protocol on stdin/stdout.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "scopeloop/chat_bridge.hpp"

using nlohmann::json;

namespace {

void send(const json& msg) {
  std::cout << msg.dump() << '\n';
  std::cout.flush();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scopeloop mock chat worker"};
  std::string model_id = "mock";
  int token_delay_ms = 0;
  int handshake_delay_ms = 0;
  int exit_after_tokens = -1;
  app.add_option("--model-id", model_id);
  app.add_option("--token-delay-ms", token_delay_ms);
  app.add_option("--handshake-delay-ms", handshake_delay_ms);
  app.add_option("--exit-after-tokens", exit_after_tokens, "Die abruptly after emitting this many tokens");
  CLI11_PARSE(app, argc, argv);

  std::ios::sync_with_stdio(false);
  if (handshake_delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(handshake_delay_ms));
  send({{"type", "ready"}, {"model", model_id}, {"protocol", 1}});

  std::string chunks;
  std::string line;
  int emitted = 0;
  while (std::getline(std::cin, line)) {
    const json msg = json::parse(line, nullptr, false);
    if (msg.is_discarded() || !msg.is_object()) {
      send({{"type", "error"}, {"message", "malformed message"}});
      continue;
    }
    const std::string type = msg.value("type", "");
    if (type == "shutdown") break;
    if (type == "image_chunk") {
      chunks += msg.value("data", "");
      continue;
    }
    if (type != "prompt") continue;

    std::string image;
    try {
      if (msg.contains("image_b64") && msg["image_b64"].is_string()) {
        image = scopeloop::base64_decode(msg["image_b64"].get<std::string>());
      } else if (!chunks.empty()) {
        image = scopeloop::base64_decode(chunks);
      }
    } catch (const std::exception& e) {
      send({{"type", "error"}, {"message", e.what()}});
      chunks.clear();
      continue;
    }
    chunks.clear();

    const std::string& reply = scopeloop::mock_chat_reply(image, msg.value("text", ""));
    for (const auto& token : scopeloop::split_tokens(reply)) {
      if (exit_after_tokens >= 0 && emitted >= exit_after_tokens) std::_Exit(3);
      if (token_delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(token_delay_ms));
      send({{"type", "token"}, {"text", token}});
      ++emitted;
    }
    send({{"type", "done"}});
  }
  return 0;
}
