#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "bas/clock.hpp"
#include "bas/detector.hpp"
#include "bas/error.hpp"
#include "bas/fusion.hpp"
#include "bas/geo.hpp"
#include "bas/hash.hpp"
#include "bas/imagery.hpp"
#include "bas/store.hpp"
#include "bas/time.hpp"

// Job orchestration: AOI to tile queue to concurrent detector calls to fused,
// stored detections, with retries, progress and throughput metering.

namespace bas {

struct SearchJob {
  std::string job_id;
  GeoBox aoi;
  std::string class_name;
  std::optional<TimeRange> time_window;
  SensorSource source = SensorSource::Synthetic;
  double inference_gsd_m = 1.2;
  int tile_px = 1250;
  int overlap_px = 100;
  /// Unset means the backend's F1-max threshold, or 0 if it advertises none.
  std::optional<double> score_threshold;
  int worker_count = 1;
  double nms_iou = 0.5;
};

inline void validate(const SearchJob& j) {
  validate(j.aoi);
  if (j.class_name.empty()) throw InvalidArgument("job: empty class name");
  if (j.worker_count < 1) throw InvalidArgument("job: worker_count must be >= 1");
  if (!(j.inference_gsd_m > 0.0)) throw InvalidArgument("job: gsd must be positive");
  if (j.tile_px <= 0) throw InvalidArgument("job: tile_px must be positive");
  if (j.overlap_px < 0 || 2 * j.overlap_px >= j.tile_px)
    throw InvalidArgument("job: need tile_px > 2 * overlap_px >= 0");
  if (j.score_threshold && !(*j.score_threshold >= 0.0 && *j.score_threshold <= 1.0))
    throw InvalidArgument("job: score_threshold must lie in [0, 1]");
  if (!(j.nms_iou > 0.0 && j.nms_iou <= 1.0)) throw InvalidArgument("job: nms_iou must lie in (0, 1]");
}

inline void to_json(nlohmann::json& j, const SearchJob& s) {
  j = {{"job_id", s.job_id},
       {"aoi", s.aoi},
       {"class", s.class_name},
       {"source", to_string(s.source)},
       {"inference_gsd_m", s.inference_gsd_m},
       {"tile_px", s.tile_px},
       {"overlap_px", s.overlap_px},
       {"worker_count", s.worker_count},
       {"nms_iou", s.nms_iou}};
  if (s.time_window)
    j["time_window"] = {{"from", to_rfc3339(s.time_window->begin)},
                        {"to", to_rfc3339(s.time_window->end)}};
  if (s.score_threshold) j["score_threshold"] = *s.score_threshold;
}

/// Missing fields take SearchJob defaults. `aoi` may be a GeoBox object or a
/// [lon_min, lat_min, lon_max, lat_max] array.
inline void from_json(const nlohmann::json& j, SearchJob& s) {
  s = SearchJob{};
  s.job_id = j.value("job_id", "");
  const auto& a = j.at("aoi");
  if (a.is_array()) {
    if (a.size() != 4) throw InvalidArgument("aoi array must have 4 numbers");
    s.aoi = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>()};
  } else {
    s.aoi = a.get<GeoBox>();
  }
  s.class_name = j.at("class").get<std::string>();
  if (j.contains("source")) s.source = parse_sensor_source(j.at("source").get<std::string>());
  s.inference_gsd_m = j.value("inference_gsd_m", s.inference_gsd_m);
  s.tile_px = j.value("tile_px", s.tile_px);
  s.overlap_px = j.value("overlap_px", s.overlap_px);
  s.worker_count = j.value("worker_count", s.worker_count);
  s.nms_iou = j.value("nms_iou", s.nms_iou);
  if (j.contains("score_threshold") && !j.at("score_threshold").is_null())
    s.score_threshold = j.at("score_threshold").get<double>();
  if (j.contains("time_window") && !j.at("time_window").is_null()) {
    const auto& w = j.at("time_window");
    s.time_window = TimeRange{parse_rfc3339(w.at("from").get<std::string>()),
                              parse_rfc3339(w.at("to").get<std::string>())};
  }
}

// ---------------------------------------------------------------------------
// Status

enum class JobState { Queued, Running, Complete, Failed };

inline std::string_view to_string(JobState s) noexcept {
  switch (s) {
    case JobState::Queued: return "QUEUED";
    case JobState::Running: return "RUNNING";
    case JobState::Complete: return "COMPLETE";
    case JobState::Failed: return "FAILED";
  }
  return "?";
}

struct JobStatus {
  JobState state = JobState::Queued;
  std::size_t tiles_total = 0;
  std::size_t tiles_done = 0;
  std::size_t tiles_failed = 0;
  std::size_t tiles_no_coverage = 0;
  double area_done_km2 = 0.0;
  Seconds elapsed{0};
  double rate_km2_per_sec = 0.0;
  std::string error;
};

inline void to_json(nlohmann::json& j, const JobStatus& s) {
  j = {{"state", to_string(s.state)},
       {"tiles_total", s.tiles_total},
       {"tiles_done", s.tiles_done},
       {"tiles_failed", s.tiles_failed},
       {"tiles_no_coverage", s.tiles_no_coverage},
       {"area_done_km2", s.area_done_km2},
       {"elapsed_s", s.elapsed.count()},
       {"rate_km2_per_sec", s.rate_km2_per_sec}};
  if (!s.error.empty()) j["error"] = s.error;
}

/// Live, thread-safe job status. Counters only grow.
class JobProgress {
 public:
  explicit JobProgress(Clock& clock = steady_clock()) : clock_(&clock) {}

  JobStatus snapshot() const {
    std::lock_guard lock(mu_);
    JobStatus s = status_;
    if (s.state == JobState::Running) s.elapsed = clock_->now() - started_;
    s.rate_km2_per_sec = s.elapsed.count() > 0.0 ? s.area_done_km2 / s.elapsed.count() : 0.0;
    return s;
  }

  void start(std::size_t total, std::size_t no_coverage) {
    std::lock_guard lock(mu_);
    started_ = clock_->now();
    status_.state = JobState::Running;
    status_.tiles_total = total;
    status_.tiles_no_coverage = no_coverage;
  }

  /// Returns the new tiles_done.
  std::size_t tile_done(double area_km2) {
    std::lock_guard lock(mu_);
    status_.area_done_km2 += area_km2;
    return ++status_.tiles_done;
  }

  void tile_failed() {
    std::lock_guard lock(mu_);
    ++status_.tiles_failed;
  }

  void finish(JobState state, std::string error = {}) {
    std::lock_guard lock(mu_);
    if (status_.state == JobState::Running) status_.elapsed = clock_->now() - started_;
    status_.state = state;
    status_.error = std::move(error);
  }

  /// For failures before the tile grid exists.
  void set_totals(std::size_t total, std::size_t no_coverage) {
    std::lock_guard lock(mu_);
    status_.tiles_total = total;
    status_.tiles_no_coverage = no_coverage;
  }

 private:
  Clock* clock_;
  mutable std::mutex mu_;
  JobStatus status_;
  Seconds started_{0};
};

// ---------------------------------------------------------------------------
// Planning

struct TileAssignment {
  Tile tile;
  std::optional<SceneRef> scene;  // empty means NO_COVERAGE
};

struct JobPlan {
  TileGrid grid;
  std::vector<TileAssignment> assignments;  // row-major, aligned with grid.tiles
  std::size_t covered = 0;
};

inline TimeRange all_time() {
  return {Timestamp{std::chrono::seconds{-(1LL << 40)}}, Timestamp{std::chrono::seconds{1LL << 40}}};
}

/// Tiles the AOI and pairs each tile with the latest scene of the job's
/// source whose footprint overlaps it inside the time window (ties: larger
/// scene id). Throws NoCoverage when no tile has a scene.
inline JobPlan plan_job(const SearchJob& job, const SceneCatalog& catalog) {
  validate(job);
  JobPlan plan;
  plan.grid = tile_aoi(job.aoi, job.inference_gsd_m, job.tile_px, job.overlap_px);
  auto scenes = catalog.query(job.aoi, job.time_window.value_or(all_time()), job.source);
  std::sort(scenes.begin(), scenes.end(), [](const SceneRef& a, const SceneRef& b) {
    if (a.captured_at != b.captured_at) return a.captured_at > b.captured_at;
    return a.scene_id > b.scene_id;
  });
  plan.assignments.reserve(plan.grid.tiles.size());
  for (const Tile& t : plan.grid.tiles) {
    TileAssignment a{t, std::nullopt};
    for (const SceneRef& s : scenes)
      if (s.footprint.overlaps(t.geo)) {
        a.scene = s;
        ++plan.covered;
        break;
      }
    plan.assignments.push_back(std::move(a));
  }
  if (plan.covered == 0)
    throw NoCoverage("no scene covers any tile of AOI " + to_string(job.aoi));
  return plan;
}

// ---------------------------------------------------------------------------
// Execution

struct RetryPolicy {
  int max_retries = 3;
  Seconds base_backoff{0.5};
  double multiplier = 2.0;

  Seconds backoff(int attempt) const {
    return base_backoff * std::pow(multiplier, static_cast<double>(attempt));
  }
};

struct RunOptions {
  Clock* clock = nullptr;  // steady clock when null
  RetryPolicy retry;
  DetectionStore* store = nullptr;
  JobProgress* progress = nullptr;
  /// A progress event every this many finished tiles (0 disables).
  std::size_t progress_every = 100;
  /// Receives progress events; logged as NDJSON when unset.
  std::function<void(const nlohmann::json&)> on_progress;
};

struct JobResult {
  std::vector<GeoDetection> detections;  // fused, thresholded, score-ordered
  JobStatus status;
  double score_threshold = 0.0;
  std::vector<std::string> failed_tiles;
  std::vector<std::string> no_coverage_tiles;
  std::vector<std::string> diagnostics;
};

inline void to_json(nlohmann::json& j, const JobResult& r) {
  j = {{"status", r.status},
       {"score_threshold", r.score_threshold},
       {"detections", r.detections.size()},
       {"failed_tiles", r.failed_tiles},
       {"no_coverage_tiles", r.no_coverage_tiles},
       {"diagnostics", r.diagnostics}};
}

namespace detail {

inline std::vector<RawDetection> detect_with_retry(DetectorBackend& backend, const Tile& tile,
                                                   const SceneRef& scene, const RetryPolicy& rp,
                                                   Clock& clock) {
  for (int attempt = 0;; ++attempt) {
    try {
      return backend.detect(tile, scene);
    } catch (const RetryableError& e) {
      if (attempt >= rp.max_retries) throw;
      spdlog::debug("tile {}: attempt {} failed ({}); retrying", tile.tile_id, attempt + 1, e.what());
      clock.sleep_for(rp.backoff(attempt));
    }
  }
}

}  // namespace detail

/// Runs a planned job. Workers pull tiles from a shared queue; every tile's
/// detections are gathered in grid order before fusion, so the result does
/// not depend on worker count or scheduling.
inline JobResult run_job(const SearchJob& job, const JobPlan& plan, DetectorBackend& backend,
                         const RunOptions& opt = {}) {
  Clock& clock = opt.clock ? *opt.clock : steady_clock();
  JobProgress local(clock);
  JobProgress& progress = opt.progress ? *opt.progress : local;
  JobResult result;

  const std::size_t n = plan.assignments.size();
  for (const auto& a : plan.assignments)
    if (!a.scene) result.no_coverage_tiles.push_back(a.tile.tile_id);
  progress.start(n, result.no_coverage_tiles.size());

  auto fail = [&](const std::string& why) {
    result.diagnostics.push_back(why);
    progress.finish(JobState::Failed, why);
    result.status = progress.snapshot();
    spdlog::error("job {} failed: {}", job.job_id, why);
    return result;
  };

  DetectorCapabilities caps;
  try {
    caps = backend.capabilities();
  } catch (const std::exception& e) {
    return fail(std::string("backend unavailable: ") + e.what());
  }
  if (job.tile_px > caps.max_tile_px)
    return fail("tile_px " + std::to_string(job.tile_px) + " exceeds backend max_tile_px " +
                std::to_string(caps.max_tile_px));
  result.score_threshold = job.score_threshold.value_or(caps.f1_max_threshold.value_or(0.0));

  std::vector<std::vector<GeoDetection>> per_tile(n);
  std::vector<std::string> errors(n);
  std::vector<char> failed(n, 0);
  std::atomic<std::size_t> next{0};

  auto emit = [&](std::size_t done) {
    if (opt.progress_every == 0 || done % opt.progress_every != 0) return;
    const JobStatus s = progress.snapshot();
    nlohmann::json ev{{"job_id", job.job_id},
                      {"tiles_done", s.tiles_done},
                      {"rate_km2_per_sec", s.rate_km2_per_sec}};
    if (opt.on_progress)
      opt.on_progress(ev);
    else
      spdlog::info("{}", ev.dump());
  };

  auto worker = [&] {
    ClockParticipant guard(clock);
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const TileAssignment& a = plan.assignments[i];
      if (!a.scene) continue;
      try {
        auto raw = detail::detect_with_retry(backend, a.tile, *a.scene, opt.retry, clock);
        per_tile[i] = register_detections(a.tile, raw, *a.scene);
        emit(progress.tile_done(tile_area_km2(a.tile)));
      } catch (const std::exception& e) {
        failed[i] = 1;
        errors[i] = e.what();
        progress.tile_failed();
      }
    }
  };

  const int workers = std::max(1, job.worker_count);
  clock.enter(workers);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < n; ++i)
    if (failed[i]) {
      result.failed_tiles.push_back(plan.assignments[i].tile.tile_id);
      result.diagnostics.push_back(plan.assignments[i].tile.tile_id + ": " + errors[i]);
    }

  std::vector<std::vector<GeoDetection>> groups;
  groups.reserve(n);
  for (auto& g : per_tile) {
    std::vector<GeoDetection> keep;
    for (auto& d : g)
      if (d.class_name == job.class_name) keep.push_back(std::move(d));
    groups.push_back(std::move(keep));
  }
  for (auto& d : merge_detections(groups, job.nms_iou))
    if (d.score >= result.score_threshold) result.detections.push_back(std::move(d));

  const std::size_t covered = plan.covered;
  if (covered > 0 && result.failed_tiles.size() == covered) {
    return fail("every covered tile failed; first error: " + result.diagnostics.front());
  }
  if (opt.store) {
    try {
      opt.store->insert(result.detections);
    } catch (const std::exception& e) {
      return fail(std::string("store write failed: ") + e.what());
    }
  }
  progress.finish(JobState::Complete);
  result.status = progress.snapshot();
  if (!result.failed_tiles.empty())
    spdlog::warn("job {} complete with {} failed tiles (coverage gaps)", job.job_id,
                 result.failed_tiles.size());
  return result;
}

/// Plans and runs; planning failures (including NO_COVERAGE) give a FAILED
/// result rather than an exception.
inline JobResult run_job(const SearchJob& job, const SceneCatalog& catalog,
                         DetectorBackend& backend, const RunOptions& opt = {}) {
  JobPlan plan;
  try {
    plan = plan_job(job, catalog);
  } catch (const NoCoverage& e) {
    JobResult r;
    Clock& clock = opt.clock ? *opt.clock : steady_clock();
    JobProgress local(clock);
    JobProgress& progress = opt.progress ? *opt.progress : local;
    const auto grid = tile_aoi(job.aoi, job.inference_gsd_m, job.tile_px, job.overlap_px);
    progress.set_totals(grid.tiles.size(), grid.tiles.size());
    progress.finish(JobState::Failed, std::string("NO_COVERAGE: ") + e.what());
    for (const auto& t : grid.tiles) r.no_coverage_tiles.push_back(t.tile_id);
    r.diagnostics.push_back(e.what());
    r.status = progress.snapshot();
    return r;
  }
  return run_job(job, plan, backend, opt);
}

// ---------------------------------------------------------------------------
// Throughput benchmark

/// Per-tile latency: uniform in [mean - spread, mean + spread], drawn from a
/// hash of the tile id so it does not depend on scheduling.
struct LatencyModel {
  Seconds mean{0.134};
  Seconds spread{0.0};
  std::uint64_t seed = 0;

  Seconds for_tile(const Tile& t) const {
    if (spread.count() <= 0.0) return mean;
    const double u = static_cast<double>(hash_values(seed, hash_string(t.tile_id)) >> 11) * 0x1.0p-53;
    return mean + spread * (2.0 * u - 1.0);
  }
};

/// Wraps a backend, sleeping on `clock` before each call.
class LatencyBackend : public DetectorBackend {
 public:
  LatencyBackend(DetectorBackend& inner, LatencyModel latency, Clock& clock)
      : inner_(inner), latency_(latency), clock_(clock) {}
  DetectorCapabilities capabilities() override { return inner_.capabilities(); }
  std::vector<RawDetection> detect(const Tile& tile, const SceneRef& scene) override {
    clock_.sleep_for(latency_.for_tile(tile));
    return inner_.detect(tile, scene);
  }

 private:
  DetectorBackend& inner_;
  LatencyModel latency_;
  Clock& clock_;
};

struct BenchGeometry {
  double gsd_m = 1.2;
  int tile_px = 1250;
  int overlap_px = 0;
};

struct ThroughputReport {
  std::vector<int> worker_counts;
  std::vector<double> rates_km2_per_sec;
  std::vector<double> pixels_per_sec;
  /// rate_n * n0 / (n * rate_n0), relative to the first entry.
  std::vector<double> scaling_efficiency;
  std::vector<double> elapsed_s;
  std::size_t tiles = 0;
};

inline void to_json(nlohmann::json& j, const ThroughputReport& r) {
  j = {{"worker_counts", r.worker_counts},
       {"rates_km2_per_sec", r.rates_km2_per_sec},
       {"pixels_per_sec", r.pixels_per_sec},
       {"scaling_efficiency", r.scaling_efficiency},
       {"elapsed_s", r.elapsed_s},
       {"tiles", r.tiles}};
}

/// Single always-available scene over `aoi`, for dry runs.
class StaticCatalog : public SceneCatalog {
 public:
  explicit StaticCatalog(std::vector<SceneRef> scenes) : scenes_(std::move(scenes)) {}
  static StaticCatalog covering(const GeoBox& aoi, SensorSource source = SensorSource::Synthetic,
                                double gsd_m = 1.2, Timestamp at = make_time(2019, 6, 1)) {
    SceneRef s;
    s.scene_id = std::string(to_string(source)) + "-static";
    s.source = source;
    s.footprint = aoi;
    s.captured_at = at;
    s.gsd_m = gsd_m;
    s.image_uri = "synthetic://" + s.scene_id;
    return StaticCatalog({s});
  }
  std::vector<SceneRef> query(const GeoBox& aoi, const TimeRange& window,
                              SensorSource source) const override {
    std::vector<SceneRef> out;
    for (const auto& s : scenes_)
      if (s.source == source && window.contains(s.captured_at) && s.footprint.overlaps(aoi))
        out.push_back(s);
    return out;
  }

 private:
  std::vector<SceneRef> scenes_;
};

/// Runs the AOI once per worker count against a null detector with injected
/// latency, timing on `clock`.
inline ThroughputReport benchmark(const std::vector<int>& worker_counts, const LatencyModel& latency,
                                  const GeoBox& aoi, const BenchGeometry& geom,
                                  Clock& clock = steady_clock()) {
  if (worker_counts.empty()) throw InvalidArgument("benchmark: no worker counts");
  NullBackend null({"object"}, geom.gsd_m);
  LatencyBackend backend(null, latency, clock);
  const auto catalog = StaticCatalog::covering(aoi, SensorSource::Synthetic, geom.gsd_m);
  SearchJob job;
  job.aoi = aoi;
  job.class_name = "object";
  job.inference_gsd_m = geom.gsd_m;
  job.tile_px = geom.tile_px;
  job.overlap_px = geom.overlap_px;
  job.score_threshold = 0.0;
  const JobPlan plan = plan_job(job, catalog);

  ThroughputReport rep;
  rep.tiles = plan.assignments.size();
  const double px_per_tile = double(geom.tile_px) * double(geom.tile_px);
  for (int w : worker_counts) {
    if (w < 1) throw InvalidArgument("benchmark: worker counts must be >= 1");
    job.worker_count = w;
    job.job_id = "bench-" + std::to_string(w);
    RunOptions opt;
    opt.clock = &clock;
    opt.progress_every = 0;
    const JobResult r = run_job(job, plan, backend, opt);
    const double secs = r.status.elapsed.count();
    rep.worker_counts.push_back(w);
    rep.elapsed_s.push_back(secs);
    rep.rates_km2_per_sec.push_back(r.status.rate_km2_per_sec);
    rep.pixels_per_sec.push_back(secs > 0.0 ? double(r.status.tiles_done) * px_per_tile / secs : 0.0);
  }
  for (std::size_t i = 0; i < rep.worker_counts.size(); ++i)
    rep.scaling_efficiency.push_back(rep.rates_km2_per_sec[i] * rep.worker_counts[0] /
                                     (rep.worker_counts[i] * rep.rates_km2_per_sec[0]));
  return rep;
}

// ---------------------------------------------------------------------------
// Watch-box sweep

struct EpochResult {
  TimeRange window;
  std::vector<GeoDetection> detections;  // centre inside the box
  JobStatus status;
};

/// One job per epoch over `box`. Epochs must be non-overlapping and
/// ascending. When `store` and `watch_id` are given, detections and epochs
/// are recorded for event derivation (epoch timestamp = window begin).
inline std::vector<EpochResult> watch_box_sweep(const GeoBox& box, const std::string& class_name,
                                                const std::vector<TimeRange>& epochs,
                                                const SceneCatalog& catalog,
                                                DetectorBackend& backend, SearchJob templ = {},
                                                DetectionStore* store = nullptr,
                                                const std::string& watch_id = {},
                                                const RunOptions& opt = {}) {
  for (std::size_t k = 0; k < epochs.size(); ++k) {
    if (epochs[k].empty()) throw InvalidArgument("watch_box_sweep: empty epoch");
    if (k > 0 && epochs[k].begin < epochs[k - 1].end)
      throw InvalidArgument("watch_box_sweep: epochs must be ascending and non-overlapping");
  }
  std::vector<EpochResult> out;
  for (std::size_t k = 0; k < epochs.size(); ++k) {
    SearchJob job = templ;
    job.aoi = box;
    job.class_name = class_name;
    job.time_window = epochs[k];
    if (job.job_id.empty()) job.job_id = "watch";
    job.job_id += "-e" + std::to_string(k);
    RunOptions o = opt;
    o.store = nullptr;
    o.progress = nullptr;
    JobResult r = run_job(job, plan_job(job, catalog), backend, o);
    if (r.status.state == JobState::Failed)
      throw Error("watch_box_sweep: epoch " + std::to_string(k) + " failed: " + r.status.error);
    EpochResult e{epochs[k], {}, r.status};
    for (auto& d : r.detections)
      if (box.contains(d.geo.center())) e.detections.push_back(std::move(d));
    if (store) {
      store->insert(e.detections);
      if (!watch_id.empty()) {
        std::vector<std::string> ids;
        for (const auto& d : e.detections) ids.push_back(d.detection_id);
        store->record_epoch(watch_id, epochs[k].begin, std::move(ids));
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace bas
