#pragma once

#include <atomic>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "bas/detector.hpp"
#include "bas/error.hpp"
#include "bas/eval.hpp"
#include "bas/geo.hpp"
#include "bas/imagery.hpp"
#include "bas/search.hpp"
#include "bas/store.hpp"
#include "bas/time.hpp"

// HTTP API over search, store and eval. Every route lives in one table that
// drives dispatch, the contract document and response checking.

namespace bas {

/// Error returned to API clients. `code` is one of api_error_codes().
class ApiError : public Error {
 public:
  ApiError(int status, std::string code, const std::string& message, bool retryable = false)
      : Error(message), status_(status), code_(std::move(code)), retryable_(retryable) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  bool retryable() const noexcept { return retryable_; }
  nlohmann::json body() const {
    return {{"error", {{"code", code_}, {"message", what()}, {"retryable", retryable_}}}};
  }

 private:
  int status_;
  std::string code_;
  bool retryable_;
};

inline const std::vector<std::string>& api_error_codes() {
  static const std::vector<std::string> codes{
      "bad_request",     "aoi_invalid", "unknown_class",       "invalid_query",
      "dataset_error",   "job_not_found", "watch_not_found",   "not_found",
      "conflict",        "backend_unavailable", "internal"};
  return codes;
}

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Expected top-level field of a success response: name and JSON type
/// ("string", "number", "integer", "boolean", "array", "object").
struct FieldSpec {
  std::string name;
  std::string type;
};

struct Route {
  std::string method;
  std::string pattern;  // path template, {name} for parameters
  std::string summary;
  int success_status = 200;
  std::vector<FieldSpec> request_fields;   // required body fields
  std::vector<FieldSpec> response_fields;  // required response fields
  std::vector<std::string> query_params;
  std::function<ApiResponse(const ApiRequest&, const std::vector<std::string>&)> handler;
  std::regex re;
};

namespace detail {

inline bool json_type_is(const nlohmann::json& v, const std::string& t) {
  if (t == "string") return v.is_string();
  if (t == "number") return v.is_number();
  if (t == "integer") return v.is_number_integer();
  if (t == "boolean") return v.is_boolean();
  if (t == "array") return v.is_array();
  if (t == "object") return v.is_object();
  return false;
}

inline std::regex route_regex(const std::string& pattern) {
  static const std::regex param(R"(\{[a-z_]+\})");
  return std::regex("^" + std::regex_replace(pattern, param, "([^/]+)") + "$");
}

inline double parse_number(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || p != e || s.empty())
    throw ApiError(400, "invalid_query", what + ": '" + s + "' is not a number");
  return v;
}

inline std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    throw ApiError(400, "invalid_query", what + ": '" + s + "' is not a non-negative integer");
  return v;
}

inline GeoBox parse_bbox(const std::string& s, const char* code = "invalid_query") {
  std::vector<double> v;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto part = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    v.push_back(parse_number(part, "bbox"));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (v.size() != 4) throw ApiError(400, code, "bbox needs 4 comma-separated numbers");
  GeoBox b{v[0], v[1], v[2], v[3]};
  if (!is_valid(b)) throw ApiError(400, code, "bbox " + s + " is not a valid box");
  return b;
}

inline GeoBox box_from_json(const nlohmann::json& j) {
  if (j.is_array()) {
    if (j.size() != 4) throw InvalidArgument("box array must have 4 numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  }
  return j.get<GeoBox>();
}

}  // namespace detail

struct ServiceOptions {
  /// Page size when `limit` is absent, and the largest accepted.
  std::size_t default_limit = 100;
  std::size_t max_limit = 10000;
  /// Default worker count for submitted jobs.
  int default_workers = 1;
};

class Service {
 public:
  Service(std::shared_ptr<DetectorBackend> backend, std::shared_ptr<SceneCatalog> catalog,
          std::unique_ptr<DetectionStore> store = std::make_unique<DetectionStore>(),
          ServiceOptions opt = {})
      : backend_(std::move(backend)),
        catalog_(std::move(catalog)),
        store_(std::move(store)),
        opt_(opt) {
    build_routes();
  }

  ~Service() { drain(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Waits for every running job.
  void drain() {
    std::vector<std::shared_ptr<JobEntry>> jobs;
    {
      std::shared_lock lock(jobs_mu_);
      for (auto& [id, e] : jobs_) jobs.push_back(e);
    }
    for (auto& e : jobs)
      if (e->thread.joinable()) e->thread.join();
  }

  /// Blocks until `job_id` finishes.
  void wait(const std::string& job_id) {
    auto e = entry(job_id);
    std::unique_lock lock(e->mu);
    e->cv.wait(lock, [&] { return e->result.has_value(); });
  }

  DetectionStore& store() noexcept { return *store_; }
  const std::vector<Route>& routes() const noexcept { return routes_; }

  /// Dispatches through the route table. Never throws.
  ApiResponse handle(const ApiRequest& req) {
    try {
      bool path_known = false;
      for (const Route& r : routes_) {
        std::smatch m;
        if (!std::regex_match(req.path, m, r.re)) continue;
        path_known = true;
        if (r.method != req.method) continue;
        std::vector<std::string> params;
        for (std::size_t i = 1; i < m.size(); ++i) params.push_back(m[i].str());
        return r.handler(req, params);
      }
      if (path_known) throw ApiError(405, "bad_request", "method " + req.method + " not allowed");
      throw ApiError(404, "not_found", "no route for " + req.method + " " + req.path);
    } catch (const ApiError& e) {
      return {e.status(), e.body()};
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      return {500, ApiError(500, "internal", e.what()).body()};
    }
  }

  /// Serves every route on `server`.
  void mount(httplib::Server& server) {
    auto fwd = [this](const httplib::Request& req, httplib::Response& res) {
      ApiRequest r{req.method, req.path, {}, req.body};
      for (const auto& [k, v] : req.params) r.query.emplace(k, v);
      const ApiResponse out = handle(r);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    };
    server.Get(R"(/.*)", fwd);
    server.Post(R"(/.*)", fwd);
    server.Put(R"(/.*)", fwd);
    server.Delete(R"(/.*)", fwd);
  }

  /// Contract document generated from the route table.
  nlohmann::json contract() const {
    nlohmann::json paths = nlohmann::json::object();
    for (const Route& r : routes_) {
      nlohmann::json op{{"summary", r.summary}, {"success_status", r.success_status}};
      auto fields = [](const std::vector<FieldSpec>& fs) {
        nlohmann::json o = nlohmann::json::object();
        for (const auto& f : fs) o[f.name] = f.type;
        return o;
      };
      op["request_required"] = fields(r.request_fields);
      op["response_required"] = fields(r.response_fields);
      op["query"] = r.query_params;
      paths[r.pattern][r.method] = op;
    }
    return {{"title", "broad area search API"},
            {"error_codes", api_error_codes()},
            {"error_body", {{"error", {{"code", "string"}, {"message", "string"}, {"retryable", "boolean"}}}}},
            {"paths", paths}};
  }

  /// Contract violations of `res` for the route serving `method path`.
  std::vector<std::string> check_response(const std::string& method, const std::string& path,
                                          const ApiResponse& res) const {
    std::vector<std::string> out;
    for (const Route& r : routes_) {
      if (r.method != method || !std::regex_match(path, r.re)) continue;
      if (res.status >= 400) {
        const auto& e = res.body.contains("error") ? res.body["error"] : nlohmann::json();
        if (!e.is_object() || !e.contains("code") || !e["code"].is_string())
          out.push_back("error body lacks error.code");
        else if (std::find(api_error_codes().begin(), api_error_codes().end(),
                           e["code"].get<std::string>()) == api_error_codes().end())
          out.push_back("undocumented error code " + e["code"].get<std::string>());
        return out;
      }
      if (res.status != r.success_status)
        out.push_back("status " + std::to_string(res.status) + ", contract says " +
                      std::to_string(r.success_status));
      for (const auto& f : r.response_fields) {
        if (!res.body.contains(f.name))
          out.push_back("missing field " + f.name);
        else if (!detail::json_type_is(res.body[f.name], f.type))
          out.push_back("field " + f.name + " is not " + f.type);
      }
      return out;
    }
    out.push_back("no route for " + method + " " + path);
    return out;
  }

  // Handlers, callable without HTTP ------------------------------------------

  ApiResponse submit_search(const nlohmann::json& body) {
    SearchJob job;
    try {
      if (!body.is_object()) throw InvalidArgument("body must be a JSON object");
      SearchJob parsed = body.get<SearchJob>();
      if (!body.contains("worker_count")) parsed.worker_count = opt_.default_workers;
      job = std::move(parsed);
    } catch (const std::exception& e) {
      throw ApiError(400, "bad_request", e.what());
    }
    if (!is_valid(job.aoi)) {
      try {
        validate(job.aoi);
      } catch (const std::exception& e) {
        throw ApiError(400, "aoi_invalid", e.what());
      }
    }
    if (job.aoi.width_deg() > kGeodesyWindowDeg || job.aoi.height_deg() > kGeodesyWindowDeg) {
      ApiError err(400, "aoi_invalid",
                   "AOI " + to_string(job.aoi) + " exceeds the 5-degree geodesy window; split it");
      auto b = err.body();
      b["error"]["suggestions"] = split_aoi(job.aoi);
      return {400, b};
    }
    require_class(job.class_name);
    try {
      validate(job);
    } catch (const std::exception& e) {
      throw ApiError(400, "bad_request", e.what());
    }

    auto e = std::make_shared<JobEntry>();
    {
      std::unique_lock lock(jobs_mu_);
      char id[32];
      std::snprintf(id, sizeof id, "job-%06zu", ++job_seq_);
      job.job_id = id;
      e->job = job;
      jobs_[job.job_id] = e;
    }
    e->thread = std::thread([this, e] {
      RunOptions o;
      o.store = store_.get();
      o.progress = &e->progress;
      JobResult r;
      try {
        r = run_job(e->job, *catalog_, *backend_, o);
      } catch (const std::exception& ex) {
        e->progress.finish(JobState::Failed, ex.what());
        r.status = e->progress.snapshot();
        r.diagnostics.push_back(ex.what());
      }
      std::lock_guard lock(e->mu);
      e->result = std::move(r);
      e->cv.notify_all();
    });
    return {202, {{"job_id", job.job_id}, {"state", "QUEUED"}}};
  }

  ApiResponse get_job(const std::string& id) {
    auto e = entry(id);
    nlohmann::json j{{"job_id", id}, {"job", e->job}};
    std::lock_guard lock(e->mu);
    if (e->result) {
      j["status"] = e->result->status;
      j["score_threshold"] = e->result->score_threshold;
      j["detections"] = e->result->detections.size();
      j["failed_tiles"] = e->result->failed_tiles;
      j["no_coverage_tiles"] = e->result->no_coverage_tiles.size();
      j["diagnostics"] = e->result->diagnostics;
    } else {
      j["status"] = e->progress.snapshot();
    }
    return {200, j};
  }

  ApiResponse job_detections(const std::string& id, const std::map<std::string, std::string>& q) {
    auto e = entry(id);
    auto [limit, offset] = paging(q);
    std::lock_guard lock(e->mu);
    nlohmann::json items = nlohmann::json::array();
    std::size_t total = 0;
    std::string state = std::string(to_string(e->progress.snapshot().state));
    if (e->result) {
      const auto& d = e->result->detections;
      total = d.size();
      for (std::size_t i = offset; i < d.size() && i < offset + limit; ++i) items.push_back(d[i]);
      state = std::string(to_string(e->result->status.state));
    }
    return {200, {{"job_id", id}, {"state", state}, {"total", total}, {"limit", limit},
                  {"offset", offset}, {"items", items}}};
  }

  ApiResponse query_detections(const std::map<std::string, std::string>& q) {
    DetectionQuery dq;
    dq.bbox = {-180.0, -90.0, 180.0, 90.0};
    if (auto it = q.find("bbox"); it != q.end()) dq.bbox = detail::parse_bbox(it->second);
    if (auto it = q.find("class"); it != q.end() && !it->second.empty()) dq.class_name = it->second;
    std::optional<Timestamp> from, to;
    try {
      if (auto it = q.find("from"); it != q.end() && !it->second.empty()) from = parse_rfc3339(it->second);
      if (auto it = q.find("to"); it != q.end() && !it->second.empty()) to = parse_rfc3339(it->second);
    } catch (const std::exception& e) {
      throw ApiError(400, "invalid_query", e.what());
    }
    if (from || to) dq.window = TimeRange{from.value_or(all_time().begin), to.value_or(all_time().end)};
    if (auto it = q.find("min_score"); it != q.end() && !it->second.empty())
      dq.min_score = detail::parse_number(it->second, "min_score");
    auto [limit, offset] = paging(q);
    const auto all = store_->query(dq);
    nlohmann::json items = nlohmann::json::array();
    for (std::size_t i = offset; i < all.size() && i < offset + limit; ++i) items.push_back(all[i]);
    return {200, {{"total", all.size()}, {"limit", limit}, {"offset", offset}, {"items", items}}};
  }

  ApiResponse create_watch(const nlohmann::json& body) {
    WatchBox w;
    try {
      if (!body.is_object()) throw InvalidArgument("body must be a JSON object");
      w.geo = detail::box_from_json(body.contains("geo") ? body.at("geo") : body.at("box"));
      w.class_name = body.at("class").get<std::string>();
      w.match_iou = body.value("match_iou", w.match_iou);
      w.match_max_center_dist_m = body.value("match_max_center_dist_m", w.match_max_center_dist_m);
      w.created_at = body.contains("created_at")
                         ? parse_rfc3339(body.at("created_at").get<std::string>())
                         : std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
    } catch (const std::exception& e) {
      throw ApiError(400, "bad_request", e.what());
    }
    if (!is_valid(w.geo)) throw ApiError(400, "aoi_invalid", "watch box " + to_string(w.geo) + " is invalid");
    require_class(w.class_name);
    {
      std::lock_guard lock(watch_mu_);
      if (body.contains("watch_id")) {
        w.watch_id = body.at("watch_id").get<std::string>();
      } else {
        do {
          char id[32];
          std::snprintf(id, sizeof id, "watch-%04zu", ++watch_seq_);
          w.watch_id = id;
        } while (store_->watch(w.watch_id));
      }
      try {
        validate(w);
      } catch (const std::exception& e) {
        throw ApiError(400, "bad_request", e.what());
      }
      if (store_->watch(w.watch_id)) throw ApiError(409, "conflict", "watch " + w.watch_id + " exists");
      store_->add_watch(w);
    }
    nlohmann::json j = w;
    return {201, j};
  }

  ApiResponse list_watches() {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& w : store_->watches()) items.push_back(w);
    return {200, {{"items", items}}};
  }

  ApiResponse watch_events(const std::string& id) {
    try {
      nlohmann::json ev = nlohmann::json::array();
      for (const auto& e : store_->events(id)) ev.push_back(e);
      return {200, {{"watch_id", id}, {"events", ev}}};
    } catch (const NotFound& e) {
      throw ApiError(404, "watch_not_found", e.what());
    }
  }

  /// Runs one job per requested epoch over the watch box and records the
  /// results, in the request order.
  ApiResponse sweep_watch(const std::string& id, const nlohmann::json& body) {
    auto w = store_->watch(id);
    if (!w) throw ApiError(404, "watch_not_found", "unknown watch box " + id);
    std::vector<TimeRange> epochs;
    SearchJob templ;
    try {
      for (const auto& e : body.at("epochs"))
        epochs.push_back({parse_rfc3339(e.at("from").get<std::string>()),
                          parse_rfc3339(e.at("to").get<std::string>())});
      if (body.contains("source")) templ.source = parse_sensor_source(body.at("source").get<std::string>());
      templ.inference_gsd_m = body.value("inference_gsd_m", templ.inference_gsd_m);
      templ.tile_px = body.value("tile_px", templ.tile_px);
      templ.overlap_px = body.value("overlap_px", templ.overlap_px);
      if (body.contains("score_threshold")) templ.score_threshold = body.at("score_threshold").get<double>();
    } catch (const std::exception& e) {
      throw ApiError(400, "bad_request", e.what());
    }
    templ.job_id = id;
    std::vector<EpochResult> res;
    try {
      std::lock_guard lock(watch_mu_);
      res = watch_box_sweep(w->geo, w->class_name, epochs, *catalog_, *backend_, templ,
                            store_.get(), id);
    } catch (const NoCoverage& e) {
      throw ApiError(400, "bad_request", std::string("NO_COVERAGE: ") + e.what());
    } catch (const InvalidArgument& e) {
      throw ApiError(400, "bad_request", e.what());
    }
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& r : res) counts.push_back(r.detections.size());
    return {200, {{"watch_id", id}, {"epochs", res.size()}, {"counts", counts}}};
  }

  /// Body: {"dataset": path, "iou_threshold": x, and one predictions source:
  /// "predictions" (inline array), "predictions_path" (NDJSON), "job_id", or
  /// "oracle" ({p_detect, fp_rate_per_km2, jitter_px, seed})}. Optional
  /// "class" restricts the evaluation to one class.
  ApiResponse evaluate(const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("dataset") || !body["dataset"].is_string())
      throw ApiError(400, "bad_request", "evaluate needs a dataset path");
    double iou_t = kDefaultIou;
    try {
      iou_t = body.value("iou_threshold", kDefaultIou);
    } catch (const std::exception& e) {
      throw ApiError(400, "bad_request", e.what());
    }
    if (!(iou_t > 0.0 && iou_t <= 1.0)) throw ApiError(400, "bad_request", "iou_threshold must lie in (0, 1]");
    const std::string cls = body.value("class", "");

    LabeledDataset ds;
    try {
      ds = load_dataset(body["dataset"].get<std::string>());
    } catch (const std::exception& e) {
      throw ApiError(400, "dataset_error", e.what());
    }

    MetricsReport rep;
    if (body.contains("oracle")) {
      OracleParams p;
      try {
        const auto& o = body["oracle"];
        p.p_detect = o.value("p_detect", p.p_detect);
        p.fp_rate_per_km2 = o.value("fp_rate_per_km2", p.fp_rate_per_km2);
        p.jitter_px = o.value("jitter_px", p.jitter_px);
        p.seed = o.value("seed", p.seed);
        validate(p);
      } catch (const std::exception& e) {
        throw ApiError(400, "bad_request", e.what());
      }
      OracleBackend oracle(world_from_dataset(ds, p.seed), p);
      BlindTestOptions bo;
      bo.class_name = cls;
      rep = blind_test(oracle, ds, iou_t, {}, bo);
    } else {
      std::vector<GeoDetection> dets;
      try {
        if (body.contains("predictions")) {
          dets = body["predictions"].get<std::vector<GeoDetection>>();
        } else if (body.contains("predictions_path")) {
          dets = read_ndjson(body["predictions_path"].get<std::string>());
        } else if (body.contains("job_id")) {
          auto e = entry(body["job_id"].get<std::string>());
          std::lock_guard lock(e->mu);
          if (!e->result) throw ApiError(409, "conflict", "job has not finished");
          dets = e->result->detections;
        } else {
          throw InvalidArgument("no predictions source given");
        }
      } catch (const ApiError&) {
        throw;
      } catch (const std::exception& e) {
        throw ApiError(400, "bad_request", e.what());
      }
      auto preds = to_predictions(dets);
      auto truths = to_truths(ds);
      if (!cls.empty()) {
        std::erase_if(preds, [&](const auto& p) { return p.class_name != cls; });
        std::erase_if(truths, [&](const auto& t) { return t.class_name != cls; });
      }
      rep = bas::evaluate(preds, truths, iou_t);
    }
    nlohmann::json j = rep;
    return {200, j};
  }

  ApiResponse capabilities() {
    try {
      nlohmann::json j = backend_->capabilities();
      return {200, j};
    } catch (const std::exception& e) {
      throw ApiError(503, "backend_unavailable", e.what(), true);
    }
  }

  ApiResponse health() {
    std::size_t n = 0;
    {
      std::shared_lock lock(jobs_mu_);
      n = jobs_.size();
    }
    return {200, {{"status", "ok"}, {"store_size", store_->size()}, {"jobs", n}}};
  }

  /// Reads an NDJSON detection file, naming the first bad line.
  static std::vector<GeoDetection> read_ndjson(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open " + path);
    std::vector<GeoDetection> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(f, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        out.push_back(nlohmann::json::parse(line).get<GeoDetection>());
      } catch (const std::exception& e) {
        throw FormatError(path + ":" + std::to_string(n) + ": " + e.what(), n);
      }
    }
    return out;
  }

 private:
  struct JobEntry {
    SearchJob job;
    JobProgress progress;
    std::mutex mu;
    std::condition_variable cv;
    std::optional<JobResult> result;
    std::thread thread;
  };

  std::shared_ptr<JobEntry> entry(const std::string& id) const {
    std::shared_lock lock(jobs_mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw ApiError(404, "job_not_found", "unknown job " + id);
    return it->second;
  }

  void require_class(const std::string& cls) {
    DetectorCapabilities caps;
    try {
      caps = backend_->capabilities();
    } catch (const std::exception& e) {
      throw ApiError(503, "backend_unavailable", e.what(), true);
    }
    if (!caps.supports(cls)) {
      std::string known;
      for (const auto& c : caps.classes) known += (known.empty() ? "" : ", ") + c;
      throw ApiError(400, "unknown_class", "class '" + cls + "' not offered by the backend [" + known + "]");
    }
  }

  std::pair<std::size_t, std::size_t> paging(const std::map<std::string, std::string>& q) const {
    std::size_t limit = opt_.default_limit, offset = 0;
    if (auto it = q.find("limit"); it != q.end()) limit = detail::parse_count(it->second, "limit");
    if (auto it = q.find("offset"); it != q.end()) offset = detail::parse_count(it->second, "offset");
    if (limit > opt_.max_limit)
      throw ApiError(400, "invalid_query", "limit exceeds " + std::to_string(opt_.max_limit));
    return {limit, offset};
  }

  static nlohmann::json parse_body(const ApiRequest& r) {
    auto j = nlohmann::json::parse(r.body.empty() ? "{}" : r.body, nullptr, false);
    if (j.is_discarded()) throw ApiError(400, "bad_request", "request body is not JSON");
    return j;
  }

  void add(Route r) {
    r.re = detail::route_regex(r.pattern);
    routes_.push_back(std::move(r));
  }

  void build_routes() {
    using P = std::vector<std::string>;
    add({"POST", "/api/jobs", "Submit a search job", 202,
         {{"aoi", "object"}, {"class", "string"}},
         {{"job_id", "string"}, {"state", "string"}}, {},
         [this](const ApiRequest& r, const P&) { return submit_search(parse_body(r)); }, {}});
    add({"GET", "/api/jobs/{id}", "Job status", 200, {},
         {{"job_id", "string"}, {"job", "object"}, {"status", "object"}}, {},
         [this](const ApiRequest&, const P& p) { return get_job(p[0]); }, {}});
    add({"GET", "/api/jobs/{id}/detections", "Fused detections of a job", 200, {},
         {{"job_id", "string"}, {"state", "string"}, {"total", "integer"}, {"items", "array"}},
         {"limit", "offset"},
         [this](const ApiRequest& r, const P& p) { return job_detections(p[0], r.query); }, {}});
    add({"GET", "/api/detections", "Query stored detections", 200, {},
         {{"total", "integer"}, {"limit", "integer"}, {"offset", "integer"}, {"items", "array"}},
         {"bbox", "class", "from", "to", "min_score", "limit", "offset"},
         [this](const ApiRequest& r, const P&) { return query_detections(r.query); }, {}});
    add({"POST", "/api/watchboxes", "Create a watch box", 201,
         {{"geo", "object"}, {"class", "string"}},
         {{"watch_id", "string"}, {"geo", "object"}, {"class", "string"}}, {},
         [this](const ApiRequest& r, const P&) { return create_watch(parse_body(r)); }, {}});
    add({"GET", "/api/watchboxes", "List watch boxes", 200, {}, {{"items", "array"}}, {},
         [this](const ApiRequest&, const P&) { return list_watches(); }, {}});
    add({"GET", "/api/watchboxes/{id}/events", "Arrival, departure and count events", 200, {},
         {{"watch_id", "string"}, {"events", "array"}}, {},
         [this](const ApiRequest&, const P& p) { return watch_events(p[0]); }, {}});
    add({"POST", "/api/watchboxes/{id}/epochs", "Search the watch box once per epoch", 200,
         {{"epochs", "array"}},
         {{"watch_id", "string"}, {"epochs", "integer"}, {"counts", "array"}}, {},
         [this](const ApiRequest& r, const P& p) { return sweep_watch(p[0], parse_body(r)); }, {}});
    add({"POST", "/api/evaluate", "Evaluate predictions against a labeled dataset", 200,
         {{"dataset", "string"}},
         {{"counts", "object"}, {"metrics", "object"}, {"curve", "array"},
          {"ap_per_class", "object"}, {"map_score", "number"}, {"iou_threshold", "number"},
          {"f1_max_threshold", "number"}},
         {}, [this](const ApiRequest& r, const P&) { return evaluate(parse_body(r)); }, {}});
    add({"GET", "/api/capabilities", "Detector capabilities", 200, {},
         {{"classes", "array"}, {"max_tile_px", "integer"}, {"preferred_gsd_m", "number"}}, {},
         [this](const ApiRequest&, const P&) { return capabilities(); }, {}});
    add({"GET", "/api/health", "Liveness", 200, {},
         {{"status", "string"}, {"store_size", "integer"}, {"jobs", "integer"}}, {},
         [this](const ApiRequest&, const P&) { return health(); }, {}});
    add({"GET", "/api/contract", "This document", 200, {},
         {{"paths", "object"}, {"error_codes", "array"}}, {},
         [this](const ApiRequest&, const P&) { return ApiResponse{200, contract()}; }, {}});
  }

  std::shared_ptr<DetectorBackend> backend_;
  std::shared_ptr<SceneCatalog> catalog_;
  std::unique_ptr<DetectionStore> store_;
  ServiceOptions opt_;
  std::vector<Route> routes_;

  mutable std::shared_mutex jobs_mu_;
  std::map<std::string, std::shared_ptr<JobEntry>> jobs_;
  std::size_t job_seq_ = 0;

  std::mutex watch_mu_;
  std::size_t watch_seq_ = 0;
};

}  // namespace bas
