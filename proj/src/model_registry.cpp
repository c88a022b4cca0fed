#include "scopeloop/model_registry.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "scopeloop/error.hpp"

namespace scopeloop {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoFailure, "sha256 failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_bytes(path)); }

fs::path default_cache_dir() {
  if (const char* env = std::getenv("SCOPELOOP_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg != nullptr && *xdg != '\0') {
    return fs::path(xdg) / "scopeloop" / "models";
  }
  if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') {
    return fs::path(home) / ".cache" / "scopeloop" / "models";
  }
  return fs::temp_directory_path() / "scopeloop" / "models";
}

// ----------------------------------------------------------------- manifest

namespace {

PixelFormat parse_format(const std::string& s) {
  if (s == "RGB") return PixelFormat::RGB;
  if (s == "BGR") return PixelFormat::BGR;
  throw Error(ErrorCode::ManifestError, "input_format must be RGB or BGR, got '" + s + "'");
}

ModelDescriptor descriptor_from_json(const json& j) {
  ModelDescriptor d;
  d.id = j.at("id").get<std::string>();
  d.task = parse_task(j.at("task").get<std::string>());
  d.tile_size = j.value("tile_size", d.task == Task::Detection ? 512 : 1024);
  d.input_format =
      parse_format(j.value("input_format", std::string(d.task == Task::Segmentation ? "BGR" : "RGB")));
  const json& src = j.at("source");
  const std::string kind = src.at("kind").get<std::string>();
  if (kind == "builtin") {
    d.source = BuiltinMockSource{src.at("backend").get<std::string>()};
  } else if (kind == "file") {
    d.source = LocalFileSource{src.at("path").get<std::string>()};
  } else if (kind == "remote") {
    d.source = RemoteSource{src.at("url").get<std::string>(), src.at("sha256").get<std::string>()};
  } else {
    throw Error(ErrorCode::ManifestError, "unknown source kind '" + kind + "'");
  }
  d.simulated_latency = std::chrono::milliseconds(j.value("simulated_latency_ms", 0));
  d.fail_after_calls = j.value("fail_after_calls", -1);
  d.validate();
  return d;
}

json descriptor_to_json(const ModelDescriptor& d) {
  json j{{"id", d.id},
         {"task", to_string(d.task)},
         {"tile_size", d.tile_size},
         {"input_format", to_string(d.input_format)}};
  std::visit(
      [&j](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BuiltinMockSource>) {
          j["source"] = {{"kind", "builtin"}, {"backend", s.backend}};
        } else if constexpr (std::is_same_v<T, LocalFileSource>) {
          j["source"] = {{"kind", "file"}, {"path", s.path.string()}};
        } else {
          j["source"] = {{"kind", "remote"}, {"url", s.url}, {"sha256", s.sha256}};
        }
      },
      d.source);
  if (d.simulated_latency.count() > 0) j["simulated_latency_ms"] = d.simulated_latency.count();
  if (d.fail_after_calls >= 0) j["fail_after_calls"] = d.fail_after_calls;
  return j;
}

}  // namespace

std::vector<ModelDescriptor> parse_manifest(const std::string& text) {
  std::vector<ModelDescriptor> out;
  try {
    const json doc = json::parse(text);
    for (const auto& entry : doc.at("models")) out.push_back(descriptor_from_json(entry));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestError, e.what());
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (out[i].id == out[k].id) throw Error(ErrorCode::ManifestError, "duplicate model id '" + out[i].id + "'");
    }
  }
  return out;
}

std::vector<ModelDescriptor> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ManifestError, "cannot read manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str());
}

std::string dump_manifest(const std::vector<ModelDescriptor>& models) {
  json doc{{"models", json::array()}};
  for (const auto& d : models) doc["models"].push_back(descriptor_to_json(d));
  return doc.dump(2);
}

std::shared_ptr<InferenceBackend> load_graph(const ModelDescriptor& descriptor, std::span<const std::uint8_t> bytes) {
  json doc = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || doc.value("format", "") != "scopeloop-mock-graph" ||
      !doc.contains("backend") || !doc["backend"].is_string()) {
    throw Error(ErrorCode::UnsupportedGraph, descriptor.id + ": no graph runtime for this model file");
  }
  ModelDescriptor mock = descriptor;
  mock.source = BuiltinMockSource{doc["backend"].get<std::string>()};
  return make_mock_backend(mock);
}

// ----------------------------------------------------------------- registry

ModelRegistry::ModelRegistry(std::vector<ModelDescriptor> models, fs::path cache_dir)
    : models_(std::move(models)), cache_dir_(std::move(cache_dir)) {
  for (const auto& m : models_) m.validate();
}

const ModelDescriptor& ModelRegistry::find(const std::string& id) const {
  for (const auto& m : models_) {
    if (m.id == id) return m;
  }
  throw Error(ErrorCode::UnknownModel, "no model with id '" + id + "'");
}

RegistryStats ModelRegistry::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

fs::path ModelRegistry::cache_path(const RemoteSource& remote) const { return cache_dir_ / remote.sha256; }

std::shared_ptr<InferenceBackend> ModelRegistry::resolve(const ModelDescriptor& descriptor) {
  descriptor.validate();
  return std::visit(
      [&](const auto& src) -> std::shared_ptr<InferenceBackend> {
        using T = std::decay_t<decltype(src)>;
        if constexpr (std::is_same_v<T, BuiltinMockSource>) {
          return make_mock_backend(descriptor);
        } else if constexpr (std::is_same_v<T, LocalFileSource>) {
          return load_graph(descriptor, read_bytes(src.path));
        } else {
          return load_graph(descriptor, fetch_verified(src));
        }
      },
      descriptor.source);
}

std::vector<std::uint8_t> ModelRegistry::fetch_verified(const RemoteSource& remote) {
  std::lock_guard lock(mutex_);
  const fs::path path = cache_path(remote);
  std::error_code ec;
  if (fs::exists(path, ec)) {
    auto bytes = read_bytes(path);
    if (sha256_hex(bytes) == remote.sha256) {
      ++stats_.cache_hits;
      return bytes;
    }
    // Corrupt entry: evict, then allow exactly one fresh download below.
    fs::remove(path, ec);
    ++stats_.evicted_corrupt;
  }
  download(remote, path);
  auto bytes = read_bytes(path);
  if (sha256_hex(bytes) != remote.sha256) {
    fs::remove(path, ec);
    throw Error(ErrorCode::ChecksumMismatch, remote.url + " does not match sha256 " + remote.sha256);
  }
  return bytes;
}

void ModelRegistry::download(const RemoteSource& remote, const fs::path& dest) {
  const auto scheme_end = remote.url.find("://");
  const auto path_start = remote.url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (scheme_end == std::string::npos || path_start == std::string::npos) {
    throw Error(ErrorCode::DownloadFailure, "malformed url " + remote.url);
  }
  httplib::Client client(remote.url.substr(0, path_start));
  client.set_follow_location(true);
  client.set_connection_timeout(10);
  client.set_read_timeout(60);

  std::error_code ec;
  fs::create_directories(dest.parent_path(), ec);
  const fs::path partial = dest.string() + ".part";
  std::ofstream out(partial, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::DownloadFailure, "cannot write cache file " + partial.string());

  ++stats_.downloads;
  auto res = client.Get(remote.url.substr(path_start), [&out](const char* data, std::size_t n) {
    out.write(data, static_cast<std::streamsize>(n));
    return static_cast<bool>(out);
  });
  out.close();
  if (!res || res->status != 200 || !out) {
    fs::remove(partial, ec);
    const std::string why = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    throw Error(ErrorCode::DownloadFailure, remote.url + ": " + why);
  }
  fs::rename(partial, dest, ec);
  if (ec) throw Error(ErrorCode::DownloadFailure, "cannot move download into cache: " + ec.message());
}

}  // namespace scopeloop
