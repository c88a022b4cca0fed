#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "scopeloop/frame.hpp"
#include "scopeloop/inference.hpp"
#include "scopeloop/pipelines.hpp"
#include "scopeloop/tiling.hpp"

namespace scopeloop {

/// The latest analyzed ROI as published by the worker: immutable once built.
struct AnalysisSnapshot {
  std::uint64_t sequence = 0;
  std::string model_id;
  std::shared_ptr<const Frame> raw;
  std::shared_ptr<const Frame> annotated;
  InferenceResult result;
  FrameDims roi_dims;  ///< dimensions of the captured frame before upscaling
  std::int64_t timestamp_ns = 0;
};

struct ClassificationMetrics {
  std::vector<std::string> class_names;
  std::vector<double> probs;  ///< full pooled distribution
  std::size_t predicted = 0;
  friend bool operator==(const ClassificationMetrics&, const ClassificationMetrics&) = default;
};
struct MitosisMetrics {
  std::int64_t model_count = 0;
  std::int64_t final_count = 0;
  friend bool operator==(const MitosisMetrics&, const MitosisMetrics&) = default;
};
struct Ki67Metrics {
  std::int64_t positive = 0;
  std::int64_t negative = 0;
  std::optional<double> index;
  friend bool operator==(const Ki67Metrics&, const Ki67Metrics&) = default;
};
using EntryMetrics = std::variant<ClassificationMetrics, MitosisMetrics, Ki67Metrics>;

[[nodiscard]] EntryMetrics metrics_from(const InferenceResult& result);
/// CSV/JSON task label: classification, mitosis or ki67.
[[nodiscard]] const char* task_label(const EntryMetrics& metrics) noexcept;

/// A proposed ROI awaiting the operator's decision.
struct PendingEntry {
  std::uint64_t snapshot_sequence = 0;
  std::string model_id;
  std::size_t tile_count = 0;
  std::shared_ptr<const Frame> raw;
  std::shared_ptr<const Frame> annotated;
  EntryMetrics metrics;
  FrameDims roi_dims;
  std::int64_t timestamp_ns = 0;

  /// Dialog payload: accept/reject for classification and Ki-67, an editable
  /// count for mitosis.
  [[nodiscard]] nlohmann::json prompt() const;
};

struct SessionEntry {
  std::int64_t entry_id = 0;
  std::string model_id;
  std::size_t tile_count = 0;
  std::shared_ptr<const Frame> raw;
  std::shared_ptr<const Frame> annotated;
  EntryMetrics metrics;
  std::optional<double> area_mm2;
  std::int64_t timestamp_ns = 0;
  FrameDims roi_dims;
};

struct CalibrationState {
  double reference_area_mm2 = 0;
  FrameDims roi_dims;
  double fov_area_mm2 = 0;  ///< 9 x reference: the reference box is 1/3 x 1/3 of the ROI
};

/// Cumulative statistics. Always equal to `fold_totals(entries)`.
struct SessionTotals {
  std::int64_t entries = 0;
  std::int64_t tile_count = 0;
  double area_mm2 = 0;
  std::int64_t classification_entries = 0;
  std::vector<std::string> class_names;  ///< first-seen order
  std::vector<double> prob_sums;         ///< parallel to class_names
  std::vector<std::int64_t> prob_counts; ///< entries contributing to each class
  std::int64_t mitosis_entries = 0;
  std::int64_t mitosis_model_count = 0;
  std::int64_t mitosis_final_count = 0;
  double mitosis_area_mm2 = 0;
  std::int64_t mitosis_entries_without_area = 0;
  std::int64_t ki67_entries = 0;
  std::int64_t ki67_positive = 0;
  std::int64_t ki67_negative = 0;

  void add(const SessionEntry& entry);
  /// Mean probability per class over classification entries.
  [[nodiscard]] std::vector<double> mean_probs() const;
  /// Count-weighted Ki-67 index, sum(pos) / sum(pos + neg).
  [[nodiscard]] std::optional<double> aggregate_ki67_index() const;
  /// Mitoses per mm^2 when every mitosis entry carries an area.
  [[nodiscard]] std::optional<double> density_per_mm2() const;
  friend bool operator==(const SessionTotals&, const SessionTotals&) = default;
};

[[nodiscard]] SessionTotals fold_totals(const std::vector<SessionEntry>& entries);

enum class Decision { Accept, Reject };

struct ExportManifest {
  std::filesystem::path directory;
  std::filesystem::path csv;
  std::vector<std::filesystem::path> images;  ///< raw, annotated per entry in commit order
};

/// Validated ROIs of one aggregation session. Single owner; not thread-safe.
class AggregateSession {
 public:
  AggregateSession() = default;

  /// Throws NoCurrentResult when nothing has been analyzed yet.
  [[nodiscard]] PendingEntry propose_entry(const AnalysisSnapshot* current) const;

  /// Reject leaves the session untouched. Accept appends an entry whose final
  /// mitosis count is `override_count` when given. Returns the new entry id
  /// (nullopt on reject). Throws OverrideOnNonCountTask, NegativeOverride or
  /// RoiDimsChangedSinceCalibration.
  std::optional<std::int64_t> commit_entry(const PendingEntry& pending, Decision decision,
                                           std::optional<std::int64_t> override_count = std::nullopt);

  /// Stores the measured reference-box area; later entries of the same ROI
  /// size carry 9x that area. Throws NonPositiveArea.
  const CalibrationState& calibrate(double measured_reference_area_mm2, FrameDims roi_dims);

  /// Throws Uncalibrated or EmptySession.
  [[nodiscard]] double density() const;

  [[nodiscard]] const std::vector<SessionEntry>& entries() const noexcept { return entries_; }
  [[nodiscard]] const SessionTotals& totals() const noexcept { return totals_; }
  [[nodiscard]] const std::optional<CalibrationState>& calibration() const noexcept { return calibration_; }
  [[nodiscard]] bool calibration_valid_for(FrameDims dims) const noexcept;

  [[nodiscard]] nlohmann::json summary() const;

 private:
  std::vector<SessionEntry> entries_;
  SessionTotals totals_;
  std::optional<CalibrationState> calibration_;
  std::int64_t next_id_ = 1;
};

/// CSV text for `session`: one row per entry and a final AGGREGATE row.
[[nodiscard]] std::string session_csv(const AggregateSession& session);

/// Writes entry_<k>_raw.png, entry_<k>_annotated.png and session.csv into
/// `out_dir`. On failure every file written so far is removed and IoFailure
/// is thrown.
ExportManifest export_session(const AggregateSession& session, const std::filesystem::path& out_dir);

/// `export_<ISO-8601 UTC timestamp>` for the given wall-clock time.
[[nodiscard]] std::string export_dir_name(std::chrono::system_clock::time_point start);

struct ParsedSessionCsv {
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;  ///< data rows, keyed by column
  std::map<std::string, std::string> aggregate;
};

/// RFC 4180 parser for files written by session_csv. Throws InvalidRequest.
[[nodiscard]] ParsedSessionCsv parse_session_csv(const std::string& text);

/// Shortest decimal text that reads back to exactly `v`.
[[nodiscard]] std::string format_double(double v);
[[nodiscard]] double parse_double(const std::string& s);

}  // namespace scopeloop
