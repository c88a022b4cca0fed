#include <doctest.h>

#include <fstream>
#include <future>

#include <httplib.h>

#include "scopeloop/control_api.hpp"
#include "scopeloop/image_io.hpp"
#include "stream_reader.hpp"
#include "support.hpp"

using namespace scopeloop;
using namespace std::chrono_literals;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Reply {
  int status = 0;
  json body;
};

class Fixture {
 public:
  explicit Fixture(std::chrono::milliseconds slow_latency = 1000ms, std::optional<fs::path> ui_dir = std::nullopt)
      : registry_(descriptors(slow_latency), dir_ / "cache"), log_(dir_ / "logs") {
    ControlOptions options;
    options.port = 0;
    options.export_root = dir_ / "exports";
    options.ui_dir = std::move(ui_dir);
    options.chat_models = builtin_chat_models(SCOPELOOP_CHAT_WORKER_PATH);
    PipelineConfig initial;
    initial.source = SyntheticSpec{1, 1024, 1024, 0ms};
    initial.capture_interval = 5ms;
    plane_ = std::make_unique<ControlPlane>(registry_, log_, options, initial);
    port_ = plane_->listen();
  }

  Reply get(const std::string& path) { return to_reply(client().Get(path)); }
  Reply post(const std::string& path, const json& body = json::object()) {
    return to_reply(client().Post(path, body.dump(), "application/json"));
  }
  Reply post_raw(const std::string& path, const std::string& body) {
    return to_reply(client().Post(path, body, "application/json"));
  }
  httplib::Client client() {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(10, 0);
    return c;
  }

  [[nodiscard]] int port() const { return port_; }
  [[nodiscard]] const fs::path& dir() const { return dir_.path(); }
  ControlPlane& plane() { return *plane_; }

  /// Polls /metrics until at least `n` results were published.
  bool wait_results(std::uint64_t n, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      const auto m = get("/metrics").body;
      if (!m["last_sequence"].is_null() && m["last_sequence"].get<std::uint64_t>() >= n) return true;
      std::this_thread::sleep_for(20ms);
    }
    return false;
  }

 private:
  static std::vector<ModelDescriptor> descriptors(std::chrono::milliseconds slow_latency) {
    auto all = builtin_descriptors();
    ModelDescriptor slow{"slow-quadrant", Task::Classification, 1024, PixelFormat::RGB, BuiltinMockSource{"quadrant"}};
    slow.simulated_latency = slow_latency;
    all.push_back(slow);
    return all;
  }
  static Reply to_reply(const httplib::Result& r) {
    REQUIRE(r);
    Reply out{r->status, json::parse(r->body, nullptr, false)};
    return out;
  }

  testing_support::TempDir dir_;
  ModelRegistry registry_;
  CrashLogger log_;
  std::unique_ptr<ControlPlane> plane_;
  int port_ = 0;
};

std::string error_code(const Reply& r) { return r.body["error"]["code"].get<std::string>(); }

}  // namespace

TEST_CASE("stream framing round trip, byte by byte") {
  const Frame f = testing_support::solid_rgb(7, 5, 1, 2, 3);
  const std::string bytes =
      encode_stream_message(kStreamJson, R"({"type":"x"})") + encode_stream_message(kStreamFrame, encode_frame_payload(f));
  StreamDecoder decoder;
  std::vector<StreamMessage> got;
  for (char c : bytes) {
    decoder.feed(&c, 1);
    while (auto m = decoder.pop()) got.push_back(*m);
  }
  REQUIRE(got.size() == 2);
  CHECK(got[0].kind == kStreamJson);
  CHECK(got[0].payload == R"({"type":"x"})");
  CHECK(got[1].kind == kStreamFrame);
  const auto header = decode_frame_payload(got[1].payload);
  CHECK(header.width == 7);
  CHECK(header.height == 5);
  CHECK(header.format == PixelFormat::RGB);
  const Frame back = decode_image({reinterpret_cast<const std::uint8_t*>(header.png.data()), header.png.size()});
  CHECK(back.pixels == f.pixels);
  CHECK_THROWS_AS((void)decode_frame_payload("XXXX"), Error);
}

TEST_CASE("error codes map to HTTP statuses") {
  CHECK(http_status_for(ErrorCode::InvalidOverlap) == 400);
  CHECK(http_status_for(ErrorCode::DegenerateRegion) == 400);
  CHECK(http_status_for(ErrorCode::UnknownModel) == 404);
  CHECK(http_status_for(ErrorCode::AlreadyRunning) == 409);
  CHECK(http_status_for(ErrorCode::NoCurrentResult) == 409);
  CHECK(http_status_for(ErrorCode::BackendFailure) == 500);
  CHECK(error_body("X", "y") == json{{"error", {{"code", "X"}, {"message", "y"}}}});
}

TEST_CASE("config and region validation") {
  Fixture fx;
  auto models = fx.get("/models");
  CHECK(models.status == 200);
  CHECK(models.body["models"].size() == 5);
  CHECK(models.body["chat_models"] == json::array({"mock"}));

  CHECK(fx.get("/config").body["model"] == "mock-quadrant");
  auto ok = fx.post("/config", {{"model", "mock-marker-detector"}, {"threshold", 0.8}, {"overlap", 128}});
  CHECK(ok.status == 200);
  CHECK(ok.body["threshold"] == 0.8);
  CHECK(ok.body["task"] == "detection");

  auto bad_overlap = fx.post("/config", {{"overlap", 512}});
  CHECK(bad_overlap.status == 400);
  CHECK(error_code(bad_overlap) == "InvalidOverlap");
  CHECK(error_code(fx.post("/config", {{"threshold", 1.5}})) == "InvalidRequest");
  CHECK(error_code(fx.post("/config", {{"alpha", -0.1}})) == "InvalidRequest");
  CHECK(error_code(fx.post("/config", {{"model", "mock-quadrant"}, {"task", "ki67"}})) == "InvalidRequest");
  auto unknown = fx.post("/config", {{"model", "nope"}});
  CHECK(unknown.status == 404);
  CHECK(error_code(unknown) == "UnknownModel");
  auto garbage = fx.post_raw("/config", "{not json");
  CHECK(garbage.status == 400);
  CHECK(fx.get("/config").body["overlap"] == 128);  // failed updates change nothing

  auto region = fx.post("/region", {{"left", 10}, {"top", 20}, {"right", 110}, {"bottom", 220}});
  CHECK(region.status == 200);
  CHECK(region.body["region"]["right"] == 110);
  auto degenerate = fx.post("/region", {{"region", {{"left", 10}, {"top", 20}, {"right", 10}, {"bottom", 220}}}});
  CHECK(degenerate.status == 400);
  CHECK(error_code(degenerate) == "DegenerateRegion");
  CHECK(fx.post("/region", {{"region", nullptr}}).body["region"].is_null());
}

TEST_CASE("lifecycle, aggregation and export over HTTP") {
  Fixture fx;
  CHECK(error_code(fx.post("/stop")) == "NotRunning");
  CHECK(error_code(fx.post("/aggregate/propose")) == "NoCurrentResult");
  CHECK(error_code(fx.post("/aggregate/commit", {{"decision", "accept"}})) == "NoCurrentResult");
  CHECK(error_code(fx.post("/calibrate", {{"area_mm2", 0.036}})) == "NoCurrentResult");

  CHECK(fx.post("/config", {{"model", "mock-marker-detector"}}).status == 200);
  CHECK(fx.post("/start").status == 200);
  auto again = fx.post("/start");
  CHECK(again.status == 409);
  CHECK(error_code(again) == "AlreadyRunning");
  REQUIRE(fx.wait_results(2, 10s));

  auto cal = fx.post("/calibrate", {{"area_mm2", 0.036}});
  CHECK(cal.status == 200);
  CHECK(cal.body["calibration"]["fov_area_mm2"] == 9.0 * 0.036);
  CHECK(cal.body["calibration"]["roi_width"] == 1024);
  CHECK(error_code(fx.post("/calibrate", {{"area_mm2", -1}})) == "NonPositiveArea");

  auto proposal = fx.post("/aggregate/propose");
  CHECK(proposal.status == 200);
  CHECK(proposal.body["kind"] == "editable_count");
  CHECK(proposal.body["calibration_valid"] == true);
  CHECK(error_code(fx.post("/aggregate/commit", {{"decision", "accept"}, {"override", -2}})) == "NegativeOverride");
  CHECK(error_code(fx.post("/aggregate/commit", {{"decision", "maybe"}})) == "InvalidRequest");
  auto commit = fx.post("/aggregate/commit", {{"decision", "accept"}, {"override", 3}});
  CHECK(commit.status == 200);
  CHECK(commit.body["entry_id"] == 1);
  CHECK(commit.body["summary"]["mitosis_final_count"] == 3);
  CHECK(error_code(fx.post("/aggregate/commit", {{"decision", "accept"}})) == "NoCurrentResult");

  REQUIRE(fx.post("/aggregate/propose").status == 200);
  auto rejected = fx.post("/aggregate/commit", {{"decision", "reject"}});
  CHECK(rejected.body["entry_id"].is_null());
  CHECK(fx.get("/aggregate").body["entries"] == 1);

  CHECK(fx.post("/stop").status == 200);
  auto exported = fx.post("/export");
  REQUIRE(exported.status == 200);
  const fs::path dir = exported.body["directory"].get<std::string>();
  CHECK(dir.parent_path() == fx.dir() / "exports");
  CHECK(dir.filename().string().rfind("export_", 0) == 0);
  CHECK(fs::exists(exported.body["csv"].get<std::string>()));
  CHECK(exported.body["images"].size() == 2);
}

TEST_CASE("stream delivers hello, results and annotated frames") {
  Fixture fx;
  testing_support::StreamReader reader(fx.port());
  const auto hello = reader.wait_json([](const json& j) { return j["type"] == "hello"; }, 5s);
  REQUIRE(hello.has_value());
  CHECK((*hello)["config"]["model"] == "mock-quadrant");

  REQUIRE(fx.post("/config", {{"model", "mock-marker-detector"}, {"threshold", 0.3}}).status == 200);
  REQUIRE(fx.post("/start").status == 200);
  const auto result = reader.wait_json([](const json& j) { return j["type"] == "result"; }, 10s);
  REQUIRE(result.has_value());
  CHECK((*result)["metrics"]["task"] == "mitosis");
  CHECK((*result)["metrics"]["threshold"] == 0.3);

  const auto frame = reader.wait_for([](const StreamMessage& m) { return m.kind == kStreamFrame; }, 10s);
  REQUIRE(frame.has_value());
  const auto header = decode_frame_payload(frame->payload);
  CHECK(header.width == 1024);
  CHECK(header.height == 1024);

  // A threshold change during the run shows up in a later result.
  REQUIRE(fx.post("/config", {{"threshold", 0.8}}).status == 200);
  const auto updated = reader.wait_json(
      [](const json& j) { return j["type"] == "result" && j["metrics"]["threshold"] == 0.8; }, 10s);
  CHECK(updated.has_value());
  fx.post("/stop");
  reader.close();
}

TEST_CASE("metrics window covers exactly the last 10 frames") {
  Fixture fx;
  REQUIRE(fx.post("/start").status == 200);
  REQUIRE(fx.wait_results(14, 30s));
  fx.post("/stop");
  const auto m = fx.get("/metrics").body;
  CHECK(m["latency_ms"]["count"] == 10);
  CHECK(m["latency_ms"]["capacity"] == 10);
  CHECK(m["latency_ms"]["samples"].size() == 10);
  CHECK(m["cycle_ms"]["count"] == 10);
  CHECK(m["worker"]["cycles"].get<int>() >= 14);
  CHECK(m["last_error"].is_null());
}

TEST_CASE("control requests stay fast while a 1 s cycle runs") {
  Fixture fx(1000ms);
  REQUIRE(fx.post("/config", {{"model", "slow-quadrant"}}).status == 200);
  REQUIRE(fx.post("/start").status == 200);
  std::this_thread::sleep_for(300ms);  // the first cycle is now inside the adapter

  std::vector<std::future<double>> futures;
  for (int i = 0; i < 100; ++i) {
    futures.push_back(std::async(std::launch::async, [&fx, i] {
      auto c = fx.client();
      const auto t0 = std::chrono::steady_clock::now();
      httplib::Result r;
      switch (i % 4) {
        case 0: r = c.Get("/metrics"); break;
        case 1: r = c.Get("/config"); break;
        case 2: r = c.Post("/config", R"({"alpha":0.3})", "application/json"); break;
        default: r = c.Get("/aggregate"); break;
      }
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      return r && r->status == 200 ? ms : 1e9;
    }));
  }
  double worst = 0;
  for (auto& f : futures) worst = std::max(worst, f.get());
  CHECK(worst < 100.0);
  REQUIRE(fx.wait_results(1, 5s));
  CHECK(fx.get("/metrics").body["worker"]["frames_dropped"].get<std::uint64_t>() > 0);
  fx.post("/stop");
}

TEST_CASE("root serves a placeholder or the mounted UI") {
  {
    Fixture fx(0ms);
    auto r = fx.client().Get("/");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->body.find("scopeloop") != std::string::npos);
  }
  testing_support::TempDir ui;
  std::ofstream(ui / "index.html") << "<html>bundle</html>";
  Fixture fx(0ms, ui.path());
  auto r = fx.client().Get("/");
  REQUIRE(r);
  CHECK(r->body == "<html>bundle</html>");
  CHECK(fx.get("/config").status == 200);
}

TEST_CASE("chat endpoints pause inference and stream tokens") {
  Fixture fx(0ms);
  CHECK(fx.get("/chat").body["state"] == "closed");
  CHECK(fx.post("/chat/prompt", {{"text", "hi"}}).status == 409);
  CHECK(error_code(fx.post("/chat/open", {{"model", "gpt-nope"}})) == "UnknownModel");

  REQUIRE(fx.post("/start").status == 200);
  REQUIRE(fx.wait_results(1, 10s));
  testing_support::StreamReader reader(fx.port());

  auto opened = fx.post("/chat/open", {{"model", "mock"}});
  REQUIRE(opened.status == 200);
  CHECK(opened.body["state"] == "ready");
  CHECK(fx.get("/metrics").body["worker"]["running"] == false);
  CHECK(error_code(fx.post("/start")) == "ChatActive");
  CHECK(error_code(fx.post("/chat/open")) == "ChatActive");

  auto prompt = fx.post("/chat/prompt", {{"text", "describe this field"}});
  REQUIRE(prompt.status == 200);
  CHECK(prompt.body["turn"] == 1);
  const auto done = reader.wait_json([](const json& j) { return j["type"] == "chat_done"; }, 10s);
  REQUIRE(done.has_value());
  const std::string reply = (*done)["text"];
  const auto& templates = mock_chat_templates();
  CHECK(std::find(templates.begin(), templates.end(), reply) != templates.end());

  std::string joined;
  for (const auto& m : reader.messages()) {
    if (m.kind != kStreamJson) continue;
    const auto j = json::parse(m.payload);
    if (j["type"] == "chat_token") joined += j["text"].get<std::string>();
  }
  CHECK(joined == reply);

  const auto transcript = fx.get("/chat").body["transcript"];
  REQUIRE(transcript.size() == 2);
  CHECK(transcript[0]["image"] == true);
  CHECK(transcript[1]["text"] == reply);

  CHECK(fx.post("/chat/close").body["state"] == "closed");
  CHECK(fx.post("/chat/close").status == 200);
  CHECK(fx.post("/start").status == 200);
  fx.post("/stop");
  reader.close();
}
