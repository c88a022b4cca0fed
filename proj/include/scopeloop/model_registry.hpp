#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "scopeloop/inference.hpp"

namespace scopeloop {

/// Lowercase hex SHA-256 of `bytes`.
[[nodiscard]] std::string sha256_hex(std::span<const std::uint8_t> bytes);
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);

/// `$SCOPELOOP_CACHE_DIR`, else `$XDG_CACHE_HOME/scopeloop/models`, else
/// `~/.cache/scopeloop/models`.
[[nodiscard]] std::filesystem::path default_cache_dir();

/// Reads/writes the model manifest, a JSON document of the form
/// {"models": [{"id", "task", "tile_size", "input_format", "source": {...}}]}
/// where source is {"kind": "builtin", "backend"}, {"kind": "file", "path"} or
/// {"kind": "remote", "url", "sha256"}. Throws ManifestError.
[[nodiscard]] std::vector<ModelDescriptor> load_manifest(const std::filesystem::path& path);
[[nodiscard]] std::vector<ModelDescriptor> parse_manifest(const std::string& text);
[[nodiscard]] std::string dump_manifest(const std::vector<ModelDescriptor>& models);

/// Turns the bytes of a model file into a backend. The only graph format this
/// build understands is the mock-graph document
/// {"format": "scopeloop-mock-graph", "backend": "<mock name>"}; anything else
/// is UnsupportedGraph.
[[nodiscard]] std::shared_ptr<InferenceBackend> load_graph(const ModelDescriptor& descriptor,
                                                           std::span<const std::uint8_t> bytes);

struct RegistryStats {
  int downloads = 0;         ///< HTTP fetches performed
  int cache_hits = 0;        ///< remote resolutions served from disk
  int evicted_corrupt = 0;   ///< cache entries dropped for failing their checksum
};

/// Known models plus the on-disk download cache. Remote weights are stored
/// under `<cache>/<sha256>` and re-verified on every load.
class ModelRegistry {
 public:
  explicit ModelRegistry(std::vector<ModelDescriptor> models = builtin_descriptors(),
                         std::filesystem::path cache_dir = default_cache_dir());

  [[nodiscard]] const std::vector<ModelDescriptor>& models() const noexcept { return models_; }
  [[nodiscard]] const ModelDescriptor& find(const std::string& id) const;
  [[nodiscard]] const std::filesystem::path& cache_dir() const noexcept { return cache_dir_; }

  /// Loads a backend for `descriptor`. Builtin mocks never touch the file
  /// system. Throws ChecksumMismatch, DownloadFailure or UnsupportedGraph.
  [[nodiscard]] std::shared_ptr<InferenceBackend> resolve(const ModelDescriptor& descriptor);
  [[nodiscard]] std::shared_ptr<InferenceBackend> resolve(const std::string& id) { return resolve(find(id)); }

  [[nodiscard]] RegistryStats stats() const;
  [[nodiscard]] std::filesystem::path cache_path(const RemoteSource& remote) const;

 private:
  std::vector<std::uint8_t> fetch_verified(const RemoteSource& remote);
  void download(const RemoteSource& remote, const std::filesystem::path& dest);

  std::vector<ModelDescriptor> models_;
  std::filesystem::path cache_dir_;
  mutable std::mutex mutex_;
  RegistryStats stats_;
};

}  // namespace scopeloop
