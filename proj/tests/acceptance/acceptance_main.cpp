// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <csignal>
#include <cstdio>
#include <future>
#include <random>
#include <sstream>

#include <httplib.h>

#include "aggregation_model.hpp"
#include "oracles.hpp"
#include "scopeloop/chat_bridge.hpp"
#include "scopeloop/control_api.hpp"
#include "scopeloop/latency.hpp"
#include "scopeloop/nms.hpp"
#include "scopeloop/pipelines.hpp"
#include "scopeloop/worker.hpp"
#include "support.hpp"

using namespace scopeloop;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ModelDescriptor builtin(const std::string& id) {
  for (auto& d : builtin_descriptors()) {
    if (d.id == id) return d;
  }
  throw std::runtime_error("missing builtin " + id);
}

// ------------------------------------------------------------------ tiling

Outcome tiling_coverage() {
  const auto t0 = Clock::now();
  std::mt19937 rng(2024);
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    for (int t : {1024, 512}) {
      std::uniform_int_distribution<int> side(t, 4 * t);
      const int w = side(rng);
      const int h = side(rng);
      const std::int64_t area = static_cast<std::int64_t>(w) * h;
      if (oracle::covered_area(plan_classification({w, h}, t).tiles, w, h) != area) ++failures;
      if (oracle::covered_area(plan_detection({w, h}, t, kDefaultDetectionOverlap).tiles, w, h) != area) ++failures;
      const auto seg = plan_segmentation({w, h}, t).tiles;
      const std::int64_t kept = static_cast<std::int64_t>(w / t) * (h / t) * t * t;
      if (!oracle::pairwise_disjoint(seg) || oracle::covered_area(seg, w, h) != kept) ++failures;
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 10.0,
          std::to_string(failures) + " mismatches over 2000 frame sizes, " + fmt("%.2f s", secs)};
}

// --------------------------------------------------------------------- nms

Outcome nms_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  int failures = 0;
  for (int set = 0; set < 1000; ++set) {
    const int n = std::uniform_int_distribution<int>(0, 500)(rng);
    // Every fourth set uses coarse scores and integer positions to force ties.
    const bool coarse = set % 4 == 0;
    std::uniform_real_distribution<double> pos(0, 4096);
    std::uniform_real_distribution<double> score(0, 1);
    std::uniform_int_distribution<int> ipos(0, 4096);
    std::uniform_int_distribution<int> qscore(0, 10);
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      const double cx = coarse ? ipos(rng) : pos(rng);
      const double cy = coarse ? ipos(rng) : pos(rng);
      dets.push_back({{cx - 8, cy - 8, 16, 16}, 1, coarse ? qscore(rng) / 10.0 : score(rng)});
    }
    if (distance_nms(dets) != oracle::nms(dets, 25.0)) ++failures;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 30.0, std::to_string(failures) + " of 1000 sets differ, " + fmt("%.2f s", secs)};
}

// ------------------------------------------------------------ mean pooling

Outcome mean_pooling() {
  const std::vector<std::string> names{"a", "b", "c", "d"};
  const auto hand = mean_pool(std::vector<SoftmaxVector>{{{.5, .5, 0, 0}, names},
                                                         {{.5, .25, .25, 0}, names},
                                                         {{.5, .25, .25, 0}, names},
                                                         {{.5, .2, .3, 0}, names}});
  bool ok = hand.probs == std::vector<double>{2.0 / 4, 1.2 / 4, 0.8 / 4, 0.0 / 4};

  std::mt19937_64 rng(8);
  std::normal_distribution<double> logit(0, 3);
  double worst_sum = 0;
  for (int trial = 0; trial < 500 && ok; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
    std::vector<SoftmaxVector> tiles;
    for (std::size_t i = 0; i < n; ++i) tiles.push_back({softmax({logit(rng), logit(rng), logit(rng), logit(rng)}), names});
    const auto mean = mean_pool(tiles);
    if (n == 1 && mean.probs != tiles[0].probs) ok = false;
    auto shuffled = tiles;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (mean_pool(shuffled).probs != mean.probs) ok = false;
    double sum = 0;
    for (double p : mean.probs) sum += p;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  ok = ok && worst_sum <= 1e-9;
  return {ok, "hand example exact, permutation/identity exact over 500 sets, max |sum-1| = " + fmt("%.2e", worst_sum)};
}

// ------------------------------------------------------------- calibration

Outcome calibration() {
  auto session_with = [](double ref) {
    AggregateSession s;
    s.calibrate(ref, {1200, 900});
    AnalysisSnapshot snap;
    snap.roi_dims = {1200, 900};
    snap.raw = snap.annotated = std::make_shared<Frame>(2, 2, PixelFormat::RGB);
    for (int n : {2, 3, 5}) {
      DetectionResult r;
      r.detections.assign(static_cast<std::size_t>(n), Detection{{0, 0, 4, 4}, 1, 0.9});
      snap.result = r;
      s.commit_entry(s.propose_entry(&snap), Decision::Accept);
    }
    return s;
  };
  const auto a = session_with(0.036);
  const auto b = session_with(0.072);
  const double fov = a.calibration()->fov_area_mm2;
  const bool nine = fov == 9.0 * 0.036;
  const bool shown_value = std::round(fov * 1000.0) / 1000.0 == 0.324;
  bool doubled = b.calibration()->fov_area_mm2 == 2 * fov && b.totals().area_mm2 == 2 * a.totals().area_mm2 &&
                 b.density() == a.density() / 2;
  for (std::size_t i = 0; i < a.entries().size(); ++i) doubled = doubled && *b.entries()[i].area_mm2 == 2 * *a.entries()[i].area_mm2;
  return {nine && shown_value && doubled,
          "0.036 mm2 -> FOV " + fmt("%.3f mm2", fov) + (doubled ? ", doubling exact" : ", doubling NOT exact")};
}

// --------------------------------------------------------- overlap collapse

Outcome overlap_collapse() {
  auto backend = make_mock_backend(builtin("mock-marker-detector"));
  std::string detail;
  bool ok = true;
  for (int overlap : {32, 64, 128}) {
    // The last tile starts at 488, so x 502..521 lies in it and in the tile before.
    Frame f = testing_support::gray_noise(1000, 512, 11);
    testing_support::fill_rect(f, 502, 200, 20, 20, 255, 0, 255);
    const auto r = run_detection(f, *backend, overlap, 0.0);
    ok = ok && r.candidate_count >= 2 && r.detections.size() == 1;
    detail += "overlap " + std::to_string(overlap) + ": " + std::to_string(r.candidate_count) + " candidates -> " +
              std::to_string(r.detections.size()) + " survivor; ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// -------------------------------------------------------------- aggregation

Outcome aggregation() {
  int failures = 0;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    oracle::SessionDriver driver(seed);
    for (int i = 0; i < 200; ++i) driver.step();
    const auto& totals = driver.session.totals();
    if (driver.mismatches != 0) ++failures;
    if (!(totals == fold_totals(driver.session.entries()))) ++failures;
    if (!driver.tally.matches(totals)) ++failures;
    const auto parsed = parse_session_csv(session_csv(driver.session));
    if (!oracle::tally_csv(parsed).matches(totals)) ++failures;
    if (parse_double(parsed.aggregate.at("area_mm2")) != totals.area_mm2) ++failures;
  }
  return {failures == 0, "10 sessions x 200 operations, " + std::to_string(failures) + " inconsistencies"};
}

// ---------------------------------------------------------- real-time budget

struct CycleStats {
  SummaryStats overhead;
  SummaryStats period;
};

CycleStats run_cycles(const ModelDescriptor& model, int cycles) {
  testing_support::TempDir dir;
  auto models = builtin_descriptors();
  models.push_back(model);
  ModelRegistry registry(models, dir / "cache");
  CrashLogger log(dir / "logs");
  std::mutex mutex;
  std::condition_variable cv;
  std::vector<double> overhead, period;
  int errors = 0;
  Worker worker(registry, log, [&](const WorkerEvent& e) {
    std::lock_guard lock(mutex);
    if (const auto* r = std::get_if<ResultEvent>(&e)) {
      overhead.push_back(r->latency_ms - r->adapter_ms);
      if (r->cycle_ms > 0) period.push_back(r->cycle_ms);
    } else {
      ++errors;
    }
    cv.notify_all();
  });
  PipelineConfig config;
  config.model_id = model.id;
  config.source = SyntheticSpec{9, 1024, 1024, 0ms};
  config.capture_interval = 5ms;
  worker.start(config);
  {
    std::unique_lock lock(mutex);
    cv.wait_for(lock, std::chrono::seconds(5 + cycles), [&] { return errors > 0 || static_cast<int>(overhead.size()) > cycles; });
  }
  worker.stop();
  if (errors > 0) throw std::runtime_error("worker reported an error");
  overhead.resize(std::min<std::size_t>(overhead.size(), static_cast<std::size_t>(cycles)));
  period.resize(std::min<std::size_t>(period.size(), static_cast<std::size_t>(cycles)));
  return {summarize(overhead), summarize(period)};
}

Outcome realtime_budget() {
  auto zero = builtin("mock-quadrant");
  zero.id = "zero-cost";
  const auto fast = run_cycles(zero, 100);
  auto slow = zero;
  slow.id = "slow-350";
  slow.simulated_latency = 350ms;
  const auto timed = run_cycles(slow, 100);
  const bool ok = fast.overhead.count == 100 && fast.overhead.max < 50.0 && timed.period.count == 100 &&
                  timed.period.max <= 400.0;
  std::ostringstream d;
  d << "overhead mean " << fmt("%.2f", fast.overhead.mean) << " ms, stddev " << fmt("%.2f", fast.overhead.stddev)
    << ", max " << fmt("%.2f", fast.overhead.max) << " (n=" << fast.overhead.count << "); 350 ms adapter period mean "
    << fmt("%.1f", timed.period.mean) << " ms, stddev " << fmt("%.2f", timed.period.stddev) << ", max "
    << fmt("%.1f", timed.period.max) << " (n=" << timed.period.count << ")";
  return {ok, d.str()};
}

// --------------------------------------------------------------- liveness

Outcome control_liveness() {
  testing_support::TempDir dir;
  auto models = builtin_descriptors();
  auto slow = builtin("mock-quadrant");
  slow.id = "slow-1s";
  slow.simulated_latency = 1000ms;
  models.push_back(slow);
  ModelRegistry registry(models, dir / "cache");
  CrashLogger log(dir / "logs");
  ControlOptions options;
  options.port = 0;
  options.export_root = dir.path();
  PipelineConfig initial;
  initial.model_id = "slow-1s";
  initial.source = SyntheticSpec{5, 1024, 1024, 0ms};
  initial.capture_interval = 10ms;
  ControlPlane plane(registry, log, options, initial);
  const int port = plane.listen();
  {
    httplib::Client c("127.0.0.1", port);
    if (auto r = c.Post("/start"); !r || r->status != 200) return {false, "could not start the worker"};
  }
  std::this_thread::sleep_for(1500ms);  // mid-cycle

  std::vector<std::future<double>> futures;
  for (int i = 0; i < 100; ++i) {
    futures.push_back(std::async(std::launch::async, [port, i] {
      httplib::Client c("127.0.0.1", port);
      const auto t0 = Clock::now();
      httplib::Result r;
      switch (i % 5) {
        case 0: r = c.Get("/metrics"); break;
        case 1: r = c.Get("/config"); break;
        case 2: r = c.Post("/config", R"({"threshold":0.5})", "application/json"); break;
        case 3: r = c.Post("/region", R"({"left":0,"top":0,"right":1024,"bottom":1024})", "application/json"); break;
        default: r = c.Get("/aggregate"); break;
      }
      const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      return r && r->status == 200 ? ms : 1e9;
    }));
  }
  std::vector<double> times;
  for (auto& f : futures) times.push_back(f.get());
  const auto stats = summarize(times);
  const auto metrics = plane.metrics();
  const auto dropped = metrics["worker"]["frames_dropped"].get<std::uint64_t>();
  {
    httplib::Client c("127.0.0.1", port);
    c.Post("/stop");
  }
  plane.shutdown();
  return {stats.max < 100.0 && dropped > 0,
          "100 concurrent requests, max " + fmt("%.1f ms", stats.max) + ", mean " + fmt("%.1f ms", stats.mean) +
              "; frames dropped " + std::to_string(dropped)};
}

// ------------------------------------------------------------------- chat

Outcome chat_robustness() {
  const ChatModelSpec spec{"mock", {SCOPELOOP_CHAT_WORKER_PATH, "--model-id", "mock", "--token-delay-ms", "1"}};
  std::mt19937 rng(31);
  int bad = 0, broken = 0, completed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    try {
      auto chat = ChatHandle::open(spec);
      const std::string prompt = "trial " + std::to_string(trial);
      auto stream = chat->send_prompt({ChatMessage::Role::User, prompt, std::nullopt});
      std::this_thread::sleep_for(std::chrono::microseconds(std::uniform_int_distribution<int>(0, 20000)(rng)));
      ::kill(chat->pid(), SIGKILL);
      const std::string& expected = mock_chat_reply("", prompt);
      try {
        if (stream.collect(10s) == expected) ++completed;
        else ++bad;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::ChannelBroken) ++broken;
        else ++bad;
      }
      if (expected.rfind(stream.partial(), 0) != 0) ++bad;
      chat->close();
      if (chat->state() != ChatState::Closed) ++bad;
    } catch (const std::exception&) {
      ++bad;
    }
  }

  // Uninterrupted streams reassemble byte-exactly, images included.
  int mismatched = 0;
  auto chat = ChatHandle::open(ChatModelSpec{"mock", {SCOPELOOP_CHAT_WORKER_PATH, "--model-id", "mock"}});
  for (int i = 0; i < 20; ++i) {
    std::vector<std::uint8_t> image(static_cast<std::size_t>(1000 + i * 150000));
    for (auto& b : image) b = static_cast<std::uint8_t>(rng());
    const std::string text = "describe " + std::to_string(i);
    const std::string got = chat->send_prompt({ChatMessage::Role::User, text, image}).collect(20s);
    if (got != mock_chat_reply(std::string(image.begin(), image.end()), text)) ++mismatched;
  }
  chat->close();
  return {bad == 0 && mismatched == 0,
          "100 kill trials: " + std::to_string(broken) + " broken, " + std::to_string(completed) + " completed, " +
              std::to_string(bad) + " bad; 20 streams, " + std::to_string(mismatched) + " mismatched"};
}

// ---------------------------------------------------------------- banding

Outcome color_banding() {
  const std::vector<double> scores{0.85, 0.7, 0.5, 0.4, 0.1};
  const std::vector<ConfidenceBand> expected{ConfidenceBand::High, ConfidenceBand::Medium, ConfidenceBand::Medium,
                                             ConfidenceBand::Low, ConfidenceBand::Low};
  std::string got;
  bool ok = true;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto b = band_for(scores[i]);
    ok = ok && b == expected[i];
    got += std::string(i ? ", " : "") + to_string(b);
  }
  return {ok, got};
}

}  // namespace

int main() {
  ::signal(SIGPIPE, SIG_IGN);
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"tiling coverage", tiling_coverage},
      {"NMS oracle equivalence", nms_oracle},
      {"mean pooling", mean_pooling},
      {"calibration", calibration},
      {"overlap-duplicate collapse", overlap_collapse},
      {"aggregation consistency", aggregation},
      {"real-time budget", realtime_budget},
      {"control-plane liveness", control_liveness},
      {"chat robustness", chat_robustness},
      {"color banding", color_banding},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
