#include "scopeloop/aggregation.hpp"

#include <charconv>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include "scopeloop/error.hpp"
#include "scopeloop/image_io.hpp"

namespace scopeloop {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::InvalidRequest, "not a number: '" + s + "'");
  }
  return v;
}

EntryMetrics metrics_from(const InferenceResult& result) {
  return std::visit(
      [](const auto& r) -> EntryMetrics {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ClassificationResult>) {
          return ClassificationMetrics{r.mean_probs.class_names, r.mean_probs.probs, r.predicted};
        } else if constexpr (std::is_same_v<T, DetectionResult>) {
          const auto n = static_cast<std::int64_t>(r.detections.size());
          return MitosisMetrics{n, n};
        } else {
          return Ki67Metrics{static_cast<std::int64_t>(r.positive), static_cast<std::int64_t>(r.negative), r.index};
        }
      },
      result);
}

const char* task_label(const EntryMetrics& metrics) noexcept {
  switch (metrics.index()) {
    case 0: return "classification";
    case 1: return "mitosis";
    default: return "ki67";
  }
}

json PendingEntry::prompt() const {
  json j{{"task", task_label(metrics)}, {"model_id", model_id}, {"tile_count", tile_count}};
  std::visit(
      [&j](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ClassificationMetrics>) {
          j["kind"] = "accept_reject";
          j["predicted_class"] = m.predicted < m.class_names.size() ? m.class_names[m.predicted] : "";
          j["confidence"] = m.predicted < m.probs.size() ? m.probs[m.predicted] : 0.0;
          j["probabilities"] = m.probs;
          j["class_names"] = m.class_names;
        } else if constexpr (std::is_same_v<T, MitosisMetrics>) {
          j["kind"] = "editable_count";
          j["model_count"] = m.model_count;
        } else {
          j["kind"] = "accept_reject";
          j["positive"] = m.positive;
          j["negative"] = m.negative;
          j["index"] = m.index ? json(*m.index) : json(nullptr);
        }
      },
      metrics);
  return j;
}

// ------------------------------------------------------------------- totals

void SessionTotals::add(const SessionEntry& entry) {
  ++entries;
  tile_count += static_cast<std::int64_t>(entry.tile_count);
  if (entry.area_mm2) area_mm2 += *entry.area_mm2;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ClassificationMetrics>) {
          ++classification_entries;
          for (std::size_t i = 0; i < m.class_names.size(); ++i) {
            std::size_t slot = 0;
            while (slot < class_names.size() && class_names[slot] != m.class_names[i]) ++slot;
            if (slot == class_names.size()) {
              class_names.push_back(m.class_names[i]);
              prob_sums.push_back(0.0);
              prob_counts.push_back(0);
            }
            prob_sums[slot] += m.probs[i];
            ++prob_counts[slot];
          }
        } else if constexpr (std::is_same_v<T, MitosisMetrics>) {
          ++mitosis_entries;
          mitosis_model_count += m.model_count;
          mitosis_final_count += m.final_count;
          if (entry.area_mm2) {
            mitosis_area_mm2 += *entry.area_mm2;
          } else {
            ++mitosis_entries_without_area;
          }
        } else {
          ++ki67_entries;
          ki67_positive += m.positive;
          ki67_negative += m.negative;
        }
      },
      entry.metrics);
}

std::vector<double> SessionTotals::mean_probs() const {
  std::vector<double> out(prob_sums.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob_sums[i] / static_cast<double>(prob_counts[i]);
  return out;
}

std::optional<double> SessionTotals::aggregate_ki67_index() const {
  const std::int64_t total = ki67_positive + ki67_negative;
  if (total == 0) return std::nullopt;
  return static_cast<double>(ki67_positive) / static_cast<double>(total);
}

std::optional<double> SessionTotals::density_per_mm2() const {
  if (mitosis_entries == 0 || mitosis_entries_without_area > 0 || !(mitosis_area_mm2 > 0)) return std::nullopt;
  return static_cast<double>(mitosis_final_count) / mitosis_area_mm2;
}

SessionTotals fold_totals(const std::vector<SessionEntry>& entries) {
  SessionTotals t;
  for (const auto& e : entries) t.add(e);
  return t;
}

// ------------------------------------------------------------------ session

PendingEntry AggregateSession::propose_entry(const AnalysisSnapshot* current) const {
  if (current == nullptr) throw Error(ErrorCode::NoCurrentResult, "no frame has been analyzed yet");
  PendingEntry p;
  p.snapshot_sequence = current->sequence;
  p.model_id = current->model_id;
  p.tile_count = tile_count_of(current->result);
  p.raw = current->raw;
  p.annotated = current->annotated;
  p.metrics = metrics_from(current->result);
  p.roi_dims = current->roi_dims;
  p.timestamp_ns = current->timestamp_ns;
  return p;
}

bool AggregateSession::calibration_valid_for(FrameDims dims) const noexcept {
  return calibration_ && calibration_->roi_dims.width == dims.width && calibration_->roi_dims.height == dims.height;
}

std::optional<std::int64_t> AggregateSession::commit_entry(const PendingEntry& pending, Decision decision,
                                                           std::optional<std::int64_t> override_count) {
  const bool is_mitosis = std::holds_alternative<MitosisMetrics>(pending.metrics);
  if (override_count && !is_mitosis) {
    throw Error(ErrorCode::OverrideOnNonCountTask, std::string("cannot override a ") + task_label(pending.metrics) + " entry");
  }
  if (override_count && *override_count < 0) throw Error(ErrorCode::NegativeOverride, "count must be >= 0");
  if (decision == Decision::Reject) return std::nullopt;
  if (calibration_ && !calibration_valid_for(pending.roi_dims)) {
    throw Error(ErrorCode::RoiDimsChangedSinceCalibration,
                "ROI is " + std::to_string(pending.roi_dims.width) + "x" + std::to_string(pending.roi_dims.height) +
                    " but calibration was done at " + std::to_string(calibration_->roi_dims.width) + "x" +
                    std::to_string(calibration_->roi_dims.height));
  }

  SessionEntry entry;
  entry.entry_id = next_id_++;
  entry.model_id = pending.model_id;
  entry.tile_count = pending.tile_count;
  entry.raw = pending.raw;
  entry.annotated = pending.annotated;
  entry.metrics = pending.metrics;
  if (override_count) std::get<MitosisMetrics>(entry.metrics).final_count = *override_count;
  if (calibration_) entry.area_mm2 = calibration_->fov_area_mm2;
  entry.timestamp_ns = pending.timestamp_ns;
  entry.roi_dims = pending.roi_dims;

  totals_.add(entry);
  entries_.push_back(std::move(entry));
  return entries_.back().entry_id;
}

const CalibrationState& AggregateSession::calibrate(double measured_reference_area_mm2, FrameDims roi_dims) {
  if (!(measured_reference_area_mm2 > 0) || !std::isfinite(measured_reference_area_mm2)) {
    throw Error(ErrorCode::NonPositiveArea, "reference area must be a positive number of mm^2");
  }
  calibration_ = CalibrationState{measured_reference_area_mm2, roi_dims, 9.0 * measured_reference_area_mm2};
  return *calibration_;
}

double AggregateSession::density() const {
  if (!calibration_) throw Error(ErrorCode::Uncalibrated, "calibrate before requesting densities");
  if (totals_.mitosis_entries == 0) throw Error(ErrorCode::EmptySession, "no accepted mitosis entries");
  const auto d = totals_.density_per_mm2();
  if (!d) throw Error(ErrorCode::Uncalibrated, "some mitosis entries were accepted before calibration");
  return *d;
}

json AggregateSession::summary() const {
  const auto& t = totals_;
  json j{{"entries", t.entries},
         {"tile_count", t.tile_count},
         {"area_mm2", t.area_mm2},
         {"mitosis_model_count", t.mitosis_model_count},
         {"mitosis_final_count", t.mitosis_final_count},
         {"ki67_positive", t.ki67_positive},
         {"ki67_negative", t.ki67_negative}};
  const auto idx = t.aggregate_ki67_index();
  j["aggregate_ki67_index"] = idx ? json(*idx) : json(nullptr);
  const auto dens = calibration_ ? t.density_per_mm2() : std::nullopt;
  j["density_per_mm2"] = dens ? json(*dens) : json(nullptr);
  if (t.classification_entries > 0) {
    j["class_names"] = t.class_names;
    j["mean_probs"] = t.mean_probs();
  }
  if (calibration_) {
    j["calibration"] = {{"reference_area_mm2", calibration_->reference_area_mm2},
                        {"fov_area_mm2", calibration_->fov_area_mm2},
                        {"roi_width", calibration_->roi_dims.width},
                        {"roi_height", calibration_->roi_dims.height}};
  } else {
    j["calibration"] = nullptr;
  }
  return j;
}

// ---------------------------------------------------------------------- csv

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_row(std::ostringstream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << csv_field(cells[i]);
  }
  out << '\n';
}

}  // namespace

std::string session_csv(const AggregateSession& session) {
  const SessionTotals& t = session.totals();
  const bool has_cls = t.classification_entries > 0;
  const bool has_mit = t.mitosis_entries > 0;
  const bool has_ki = t.ki67_entries > 0;

  std::vector<std::string> header{"entry_id", "task", "model_id", "tile_count", "area_mm2", "timestamp_ns"};
  if (has_cls) {
    for (const auto& name : t.class_names) header.push_back("prob_" + name);
    header.push_back("predicted");
  }
  if (has_mit) {
    header.push_back("model_count");
    header.push_back("final_count");
  }
  if (has_ki) {
    header.push_back("pos");
    header.push_back("neg");
    header.push_back("index");
  }
  header.push_back("density_per_mm2");
  header.push_back("aggregate_ki67_index");

  std::ostringstream out;
  write_row(out, header);

  for (const auto& e : session.entries()) {
    std::vector<std::string> row{std::to_string(e.entry_id),
                                 task_label(e.metrics),
                                 e.model_id,
                                 std::to_string(e.tile_count),
                                 e.area_mm2 ? format_double(*e.area_mm2) : "",
                                 std::to_string(e.timestamp_ns)};
    const auto* cls = std::get_if<ClassificationMetrics>(&e.metrics);
    const auto* mit = std::get_if<MitosisMetrics>(&e.metrics);
    const auto* ki = std::get_if<Ki67Metrics>(&e.metrics);
    if (has_cls) {
      for (const auto& name : t.class_names) {
        std::string cell;
        if (cls) {
          for (std::size_t i = 0; i < cls->class_names.size(); ++i) {
            if (cls->class_names[i] == name) cell = format_double(cls->probs[i]);
          }
        }
        row.push_back(cell);
      }
      row.push_back(cls && cls->predicted < cls->class_names.size() ? cls->class_names[cls->predicted] : "");
    }
    if (has_mit) {
      row.push_back(mit ? std::to_string(mit->model_count) : "");
      row.push_back(mit ? std::to_string(mit->final_count) : "");
    }
    if (has_ki) {
      row.push_back(ki ? std::to_string(ki->positive) : "");
      row.push_back(ki ? std::to_string(ki->negative) : "");
      row.push_back(ki && ki->index ? format_double(*ki->index) : "");
    }
    row.push_back("");
    row.push_back("");
    write_row(out, row);
  }

  std::vector<std::string> agg{"AGGREGATE", "", "", std::to_string(t.tile_count), format_double(t.area_mm2), ""};
  if (has_cls) {
    const auto means = t.mean_probs();
    for (double m : means) agg.push_back(format_double(m));
    agg.push_back(t.class_names[argmax(means)]);
  }
  if (has_mit) {
    agg.push_back(std::to_string(t.mitosis_model_count));
    agg.push_back(std::to_string(t.mitosis_final_count));
  }
  if (has_ki) {
    agg.push_back(std::to_string(t.ki67_positive));
    agg.push_back(std::to_string(t.ki67_negative));
    agg.push_back("");
  }
  const auto density = session.calibration() ? t.density_per_mm2() : std::nullopt;
  const auto ki_index = t.aggregate_ki67_index();
  agg.push_back(density ? format_double(*density) : "");
  agg.push_back(ki_index ? format_double(*ki_index) : "");
  write_row(out, agg);
  return out.str();
}

ParsedSessionCsv parse_session_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = field_started = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n') {
      record.push_back(std::move(field));
      records.push_back(std::move(record));
      field.clear();
      record.clear();
      field_started = false;
    } else if (c != '\r') {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw Error(ErrorCode::InvalidRequest, "unterminated quoted field");
  if (field_started || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  if (records.size() < 2) throw Error(ErrorCode::InvalidRequest, "session CSV needs a header and an AGGREGATE row");

  ParsedSessionCsv parsed;
  parsed.header = records.front();
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != parsed.header.size()) {
      throw Error(ErrorCode::InvalidRequest, "row " + std::to_string(r) + " has the wrong number of cells");
    }
    std::map<std::string, std::string> row;
    for (std::size_t c = 0; c < parsed.header.size(); ++c) row[parsed.header[c]] = records[r][c];
    if (row["entry_id"] == "AGGREGATE") {
      if (r + 1 != records.size()) throw Error(ErrorCode::InvalidRequest, "AGGREGATE must be the last row");
      parsed.aggregate = std::move(row);
    } else {
      parsed.rows.push_back(std::move(row));
    }
  }
  if (parsed.aggregate.empty()) throw Error(ErrorCode::InvalidRequest, "missing AGGREGATE row");
  return parsed;
}

// ------------------------------------------------------------------- export

std::string export_dir_name(std::chrono::system_clock::time_point start) {
  const std::time_t t = std::chrono::system_clock::to_time_t(start);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, "export_%Y-%m-%dT%H-%M-%SZ", &tm);
  return buf;
}

ExportManifest export_session(const AggregateSession& session, const fs::path& out_dir) {
  ExportManifest manifest;
  manifest.directory = out_dir;
  std::vector<fs::path> written;
  std::error_code ec;
  const bool created_dir = !fs::exists(out_dir, ec);

  auto cleanup = [&] {
    std::error_code ignore;
    for (const auto& p : written) fs::remove(p, ignore);
    if (created_dir) fs::remove(out_dir, ignore);
  };

  try {
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string());

    std::size_t k = 1;
    for (const auto& e : session.entries()) {
      const fs::path raw = out_dir / ("entry_" + std::to_string(k) + "_raw.png");
      const fs::path annotated = out_dir / ("entry_" + std::to_string(k) + "_annotated.png");
      if (!e.raw || !e.annotated) throw Error(ErrorCode::IoFailure, "entry " + std::to_string(k) + " has no image");
      written.push_back(raw);
      write_png(raw, *e.raw);
      written.push_back(annotated);
      write_png(annotated, *e.annotated);
      manifest.images.push_back(raw);
      manifest.images.push_back(annotated);
      ++k;
    }

    manifest.csv = out_dir / "session.csv";
    written.push_back(manifest.csv);
    const std::string text = session_csv(session);
    std::ofstream out(manifest.csv, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + manifest.csv.string());
    out << text;
    out.close();
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + manifest.csv.string());
  } catch (const Error& e) {
    cleanup();
    if (e.code() == ErrorCode::IoFailure) throw;
    throw Error(ErrorCode::IoFailure, e.what());
  } catch (const std::exception& e) {
    cleanup();
    throw Error(ErrorCode::IoFailure, e.what());
  }
  return manifest;
}

}  // namespace scopeloop
