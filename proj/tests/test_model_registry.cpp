#include <doctest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "scopeloop/error.hpp"
#include "scopeloop/model_registry.hpp"
#include "support.hpp"

using namespace scopeloop;
namespace fs = std::filesystem;
using testing_support::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidRequest;
}

const std::string kGraph = R"({"format":"scopeloop-mock-graph","backend":"marker-detector"})";

std::string sha_of(const std::string& s) {
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

// Local model server counting GET requests per path.
class ModelServer {
 public:
  ModelServer() {
    server_.Get("/graph.json", [this](const httplib::Request&, httplib::Response& res) {
      ++requests;
      res.set_content(body, "application/octet-stream");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ModelServer() {
    server_.stop();
    thread_.join();
  }
  [[nodiscard]] std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

  std::atomic<int> requests{0};
  std::string body = kGraph;

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

ModelDescriptor remote_model(const std::string& url, const std::string& sha) {
  return {"remote-det", Task::Detection, 512, PixelFormat::RGB, RemoteSource{url, sha}};
}

}  // namespace

TEST_CASE("sha256 of known input") {
  CHECK(sha_of("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("builtin mocks resolve without touching the cache") {
  TempDir cache;
  ModelRegistry registry(builtin_descriptors(), cache / "models");
  auto backend = registry.resolve("mock-marker-detector");
  CHECK(backend->descriptor().task == Task::Detection);
  CHECK_FALSE(fs::exists(cache / "models"));
  CHECK(code_of([&] { (void)registry.find("nope"); }) == ErrorCode::UnknownModel);
}

TEST_CASE("remote model is downloaded once and then served from cache") {
  TempDir cache;
  ModelServer server;
  ModelRegistry registry({remote_model(server.url("/graph.json"), sha_of(kGraph))}, cache.path());
  auto a = registry.resolve("remote-det");
  auto b = registry.resolve("remote-det");
  CHECK(server.requests == 1);
  CHECK(registry.stats().downloads == 1);
  CHECK(registry.stats().cache_hits == 1);
  CHECK(fs::exists(cache / sha_of(kGraph)));
  CHECK(b->descriptor().id == "remote-det");
}

TEST_CASE("corrupt cache entry is evicted and fetched again") {
  TempDir cache;
  ModelServer server;
  const std::string sha = sha_of(kGraph);
  ModelRegistry registry({remote_model(server.url("/graph.json"), sha)}, cache.path());
  (void)registry.resolve("remote-det");
  std::ofstream(cache / sha, std::ios::trunc) << "bit rot";
  (void)registry.resolve("remote-det");
  CHECK(server.requests == 2);
  CHECK(registry.stats().evicted_corrupt == 1);
  CHECK(sha256_file(cache / sha) == sha);
}

TEST_CASE("download that never matches the checksum fails") {
  TempDir cache;
  ModelServer server;
  server.body = "tampered";
  ModelRegistry registry({remote_model(server.url("/graph.json"), sha_of(kGraph))}, cache.path());
  CHECK(code_of([&] { (void)registry.resolve("remote-det"); }) == ErrorCode::ChecksumMismatch);
  CHECK_FALSE(fs::exists(cache / sha_of(kGraph)));
}

TEST_CASE("missing remote file is a download failure") {
  TempDir cache;
  ModelServer server;
  ModelRegistry registry({remote_model(server.url("/missing.bin"), sha_of(kGraph))}, cache.path());
  CHECK(code_of([&] { (void)registry.resolve("remote-det"); }) == ErrorCode::DownloadFailure);
  ModelRegistry dead({remote_model("http://127.0.0.1:1/graph.json", sha_of(kGraph))}, cache.path());
  CHECK(code_of([&] { (void)dead.resolve("remote-det"); }) == ErrorCode::DownloadFailure);
}

TEST_CASE("local model files: mock graphs load, anything else is unsupported") {
  TempDir dir;
  std::ofstream(dir / "det.json") << kGraph;
  std::ofstream(dir / "net.onnx") << "\x08\x07onnx-protobuf";
  ModelRegistry registry({{"local-det", Task::Detection, 512, PixelFormat::RGB, LocalFileSource{dir / "det.json"}},
                          {"onnx", Task::Detection, 512, PixelFormat::RGB, LocalFileSource{dir / "net.onnx"}}},
                         dir / "cache");
  CHECK(registry.resolve("local-det")->descriptor().id == "local-det");
  CHECK(code_of([&] { (void)registry.resolve("onnx"); }) == ErrorCode::UnsupportedGraph);
}

TEST_CASE("manifest round trip and errors") {
  const std::string text = R"({"models":[
    {"id":"a","task":"classification","source":{"kind":"builtin","backend":"quadrant"},"simulated_latency_ms":5},
    {"id":"b","task":"mitosis","tile_size":256,"source":{"kind":"file","path":"/x/y.json"},"fail_after_calls":3},
    {"id":"c","task":"ki67","source":{"kind":"remote","url":"http://h/m","sha256":")" +
                           std::string(64, 'a') + R"("}}]})";
  const auto models = parse_manifest(text);
  REQUIRE(models.size() == 3);
  CHECK(models[0].simulated_latency == std::chrono::milliseconds(5));
  CHECK(models[1].task == Task::Detection);
  CHECK(models[1].tile_size == 256);
  CHECK(models[1].fail_after_calls == 3);
  CHECK(models[2].input_format == PixelFormat::BGR);
  CHECK(models[2].tile_size == 1024);

  const auto again = parse_manifest(dump_manifest(models));
  REQUIRE(again.size() == 3);
  CHECK(dump_manifest(again) == dump_manifest(models));

  CHECK(code_of([] { (void)parse_manifest("{"); }) == ErrorCode::ManifestError);
  CHECK(code_of([] { (void)parse_manifest(R"({"models":[{"id":"x","task":"classification","source":{"kind":"ftp"}}]})"); }) ==
        ErrorCode::ManifestError);
  CHECK(code_of([] {
          (void)parse_manifest(R"({"models":[{"id":"x","task":"classification","source":{"kind":"builtin","backend":"quadrant"}},
                                              {"id":"x","task":"classification","source":{"kind":"builtin","backend":"quadrant"}}]})");
        }) == ErrorCode::ManifestError);
}

TEST_CASE("cache directory honors the environment") {
  {
    testing_support::ScopedEnv env("SCOPELOOP_CACHE_DIR", "/tmp/sl-cache");
    CHECK(default_cache_dir() == fs::path("/tmp/sl-cache"));
  }
  testing_support::ScopedEnv unset("SCOPELOOP_CACHE_DIR", "");
  testing_support::ScopedEnv xdg("XDG_CACHE_HOME", "/tmp/xdg");
  CHECK(default_cache_dir() == fs::path("/tmp/xdg/scopeloop/models"));
}
