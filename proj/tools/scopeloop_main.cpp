// scopeloop command line: headless runs, the control service and the model list.

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "scopeloop/aggregation.hpp"
#include "scopeloop/control_api.hpp"
#include "scopeloop/error.hpp"
#include "scopeloop/latency.hpp"
#include "scopeloop/model_registry.hpp"
#include "scopeloop/worker.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scopeloop;

namespace {

struct CommonOptions {
  std::string manifest;
  std::string model;
  std::string task;
  std::string source;
  std::string region;
  std::optional<double> threshold;
  std::optional<int> overlap;
  std::optional<double> alpha;
};

std::vector<ModelDescriptor> all_models(const std::string& manifest) {
  auto models = builtin_descriptors();
  if (!manifest.empty()) {
    for (auto& m : load_manifest(manifest)) {
      std::erase_if(models, [&](const ModelDescriptor& b) { return b.id == m.id; });
      models.push_back(std::move(m));
    }
  }
  return models;
}

CaptureRegion parse_region(const std::string& text) {
  CaptureRegion r;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(text);
  if (!(in >> r.left >> c1 >> r.top >> c2 >> r.right >> c3 >> r.bottom) || c1 != ',' || c2 != ',' || c3 != ',' ||
      !in.eof()) {
    throw Error(ErrorCode::InvalidRequest, "--region expects left,top,right,bottom");
  }
  if (r.width() <= 0 || r.height() <= 0) throw Error(ErrorCode::DegenerateRegion, "region has no area");
  return r;
}

PipelineConfig build_config(const CommonOptions& o, const ModelRegistry& registry) {
  PipelineConfig c;
  if (!o.region.empty()) c.region = parse_region(o.region);
  if (!o.source.empty()) c.source = parse_source_spec(o.source, c.region.value_or(CaptureRegion{}));
  if (!o.model.empty()) {
    c.model_id = o.model;
  } else if (!o.task.empty()) {
    const Task t = parse_task(o.task);
    const auto& models = registry.models();
    const auto it = std::find_if(models.begin(), models.end(), [&](const ModelDescriptor& m) { return m.task == t; });
    if (it == models.end()) throw Error(ErrorCode::UnknownModel, "no model for task " + o.task);
    c.model_id = it->id;
  }
  const ModelDescriptor& d = registry.find(c.model_id);
  if (!o.task.empty() && parse_task(o.task) != d.task) {
    throw Error(ErrorCode::InvalidRequest, "model " + d.id + " performs " + to_string(d.task) + ", not " + o.task);
  }
  if (o.threshold) c.threshold = *o.threshold;
  if (o.overlap) c.overlap = *o.overlap;
  if (o.alpha) c.style.mask_alpha = *o.alpha;
  c.style.validate();
  return c;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--manifest", o.manifest, "Model manifest (JSON) added to the builtin models");
  cmd->add_option("--model", o.model, "Model id");
  cmd->add_option("--task", o.task, "classification | detection | segmentation (aliases: mitosis, ki67)");
  cmd->add_option("--source", o.source, "screen | replay:<dir> | synthetic:<seed>x<W>x<H>");
  cmd->add_option("--region", o.region, "left,top,right,bottom");
  cmd->add_option("--threshold", o.threshold, "Detection score threshold")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--overlap", o.overlap, "Detection tile overlap in pixels");
  cmd->add_option("--alpha", o.alpha, "Mask transparency")->check(CLI::Range(0.0, 1.0));
}

int run_command(const CommonOptions& o, int frames, const std::string& export_dir, bool bench,
                std::optional<double> calibrate_mm2, bool quiet) {
  ModelRegistry registry(all_models(o.manifest));
  PipelineConfig config = build_config(o, registry);
  if (std::holds_alternative<ScreenSpec>(config.source) && config.region) {
    std::get<ScreenSpec>(config.source).region = *config.region;
  }
  auto backend = registry.resolve(config.model_id);
  auto source = open_source(config.source);

  AggregateSession session;
  LatencyWindow total(static_cast<std::size_t>(frames)), adapter(static_cast<std::size_t>(frames)),
      overhead(static_cast<std::size_t>(frames));
  for (int i = 0; i < frames; ++i) {
    auto frame = std::make_shared<const Frame>(source->next_frame());
    const auto snap = analyze_frame(frame, *backend, config, static_cast<std::uint64_t>(i + 1));
    const auto& lat = latency_of(snap.result);
    total.add(lat.total_ms);
    adapter.add(lat.adapter_ms);
    overhead.add(lat.overhead_ms());
    if (calibrate_mm2 && !session.calibration()) session.calibrate(*calibrate_mm2, snap.roi_dims);
    if (!export_dir.empty()) session.commit_entry(session.propose_entry(&snap), Decision::Accept);
    if (!quiet) {
      std::cout << json{{"frame", i + 1}, {"source_id", frame->source_id}, {"pipeline_ms", lat.total_ms},
                        {"metrics", result_metrics_json(snap.result)}}
                       .dump()
                << "\n";
    }
  }
  source->close();

  if (bench) {
    const auto print = [](const char* name, const LatencyWindow& w) {
      const auto s = summarize(w.samples());
      std::cout << name << ": mean " << s.mean << " ms, stddev " << s.stddev << " ms, min " << s.min << " ms, max "
                << s.max << " ms (n=" << s.count << ")\n";
    };
    print("pipeline", total);
    print("adapter", adapter);
    print("overhead", overhead);
  }
  if (!export_dir.empty()) {
    const auto manifest = export_session(session, export_dir);
    std::cerr << "exported " << session.entries().size() << " entries to " << manifest.directory.string() << "\n";
  }
  return 0;
}

int serve_command(const CommonOptions& o, int port, const std::string& host, const std::string& ui_dir,
                  const std::string& export_root, bool autostart) {
  ModelRegistry registry(all_models(o.manifest));
  CrashLogger crash_log;
  PipelineConfig config = build_config(o, registry);
  ControlOptions options;
  options.host = host;
  options.port = port;
  options.export_root = export_root;
  if (!ui_dir.empty()) options.ui_dir = ui_dir;
  config.port = port;

  // Signals are handled synchronously on this thread; block them before any
  // other thread starts so the server threads inherit the mask.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  ControlPlane plane(registry, crash_log, options, config);
  const int bound = plane.listen();
  std::cerr << "scopeloop serving on http://" << host << ":" << bound << "/ (crash logs: "
            << crash_log.directory().string() << ")\n";
  if (autostart) {
    httplib::Client client(host, bound);
    const auto res = client.Post("/start");
    if (!res || res->status != 200) std::cerr << "autostart failed: " << (res ? res->body : "no response") << "\n";
  }
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "shutting down\n";
  plane.shutdown();
  return 0;
}

int env_port() {
  if (const char* p = std::getenv("SCOPELOOP_PORT"); p != nullptr && *p != '\0') {
    try {
      return std::stoi(p);
    } catch (const std::exception&) {
      std::cerr << "ignoring invalid SCOPELOOP_PORT=" << p << "\n";
    }
  }
  return 8765;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scopeloop: real-time tiled inference over a screen region"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  int frames = 1;
  std::string export_dir;
  bool bench = false;
  bool quiet = false;
  std::optional<double> calibrate_mm2;
  auto* run = app.add_subcommand("run", "Process N frames headlessly");
  add_common(run, run_opts);
  run->add_option("--frames", frames, "Number of frames to process")->check(CLI::PositiveNumber);
  run->add_option("--export", export_dir, "Accept every result and export the session here");
  run->add_option("--calibrate", calibrate_mm2, "Measured reference-box area in mm^2");
  run->add_flag("--bench", bench, "Print latency statistics");
  run->add_flag("--quiet", quiet, "Do not print per-frame results");

  CommonOptions serve_opts;
  int port = env_port();
  std::string host = "127.0.0.1";
  std::string ui_dir;
  std::string export_root = ".";
  bool autostart = false;
  auto* serve = app.add_subcommand("serve", "Run the control service");
  add_common(serve, serve_opts);
  serve->add_option("--port", port, "Listen port (default $SCOPELOOP_PORT or 8765; 0 picks one)");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--ui-dir", ui_dir, "Static UI files served at /");
  serve->add_option("--export-root", export_root, "Parent directory for exports");
  serve->add_flag("--start", autostart, "Start the worker immediately");

  std::string models_manifest;
  auto* models = app.add_subcommand("models", "List available models as JSON");
  models->add_option("--manifest", models_manifest, "Model manifest (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) return run_command(run_opts, frames, export_dir, bench, calibrate_mm2, quiet);
    if (*serve) return serve_command(serve_opts, port, host, ui_dir, export_root, autostart);
    if (*models) {
      std::cout << dump_manifest(all_models(models_manifest)) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "scopeloop: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
