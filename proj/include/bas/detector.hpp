#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "bas/error.hpp"
#include "bas/geo.hpp"
#include "bas/hash.hpp"
#include "bas/imagery.hpp"
#include "bas/time.hpp"

namespace bas {

struct RawDetection {
  PixelBox box;
  std::string class_name;
  double score = 0.0;
  friend bool operator==(const RawDetection&, const RawDetection&) = default;
};

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
};

/// Statistical stand-in for a trained model.
struct OracleParams {
  double p_detect = 0.9;
  double fp_rate_per_km2 = 0.0;
  double jitter_px = 0.0;
  BetaParams tp_score{8.0, 2.0};
  BetaParams fp_score{2.0, 5.0};
  std::uint64_t seed = 0;
  /// Side length of synthesized false-positive boxes.
  double fp_box_m = 90.0;
};

inline void validate(const OracleParams& p) {
  if (!(p.p_detect >= 0.0 && p.p_detect <= 1.0))
    throw InvalidArgument("oracle: p_detect must lie in [0, 1]");
  if (!(p.fp_rate_per_km2 >= 0.0) || !(p.jitter_px >= 0.0) || !(p.fp_box_m > 0.0))
    throw InvalidArgument("oracle: rates, sizes and jitter must be non-negative");
  if (!(p.tp_score.alpha > 0 && p.tp_score.beta > 0 && p.fp_score.alpha > 0 &&
        p.fp_score.beta > 0))
    throw InvalidArgument("oracle: beta parameters must be positive");
}

inline constexpr int kUnboundedTilePx = std::numeric_limits<std::int32_t>::max();

struct DetectorCapabilities {
  std::vector<std::string> classes;
  int max_tile_px = kUnboundedTilePx;
  double preferred_gsd_m = 1.2;
  /// Operating threshold that maximizes F1 on the backend's validation data.
  std::optional<double> f1_max_threshold;

  bool supports(std::string_view cls) const {
    return std::find(classes.begin(), classes.end(), cls) != classes.end();
  }
};

inline void to_json(nlohmann::json& j, const DetectorCapabilities& c) {
  j = {{"classes", c.classes}, {"max_tile_px", c.max_tile_px},
       {"preferred_gsd_m", c.preferred_gsd_m}};
  if (c.f1_max_threshold) j["f1_max_threshold"] = *c.f1_max_threshold;
}

/// Strict parse of a capabilities document; unknown fields are ignored.
inline DetectorCapabilities parse_capabilities(const nlohmann::json& j) {
  DetectorCapabilities c;
  try {
    if (!j.is_object()) throw ProtocolError("capabilities: not a JSON object");
    const auto& cls = j.at("classes");
    if (!cls.is_array() || cls.empty()) throw ProtocolError("capabilities: empty class list");
    for (const auto& v : cls) c.classes.push_back(v.get<std::string>());
    if (!j.at("max_tile_px").is_number_integer())
      throw ProtocolError("capabilities: max_tile_px must be an integer");
    c.max_tile_px = j.at("max_tile_px").get<int>();
    c.preferred_gsd_m = j.at("preferred_gsd_m").get<double>();
    if (auto it = j.find("f1_max_threshold"); it != j.end() && it->is_number())
      c.f1_max_threshold = it->get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("capabilities: ") + e.what());
  }
  if (c.max_tile_px <= 0 || !(c.preferred_gsd_m > 0.0))
    throw ProtocolError("capabilities: non-positive max_tile_px or gsd");
  return c;
}

// ---------------------------------------------------------------------------
// Oracle detector

namespace detail {

inline double sample_beta(std::mt19937_64& rng, const BetaParams& p) {
  const double x = std::gamma_distribution<double>(p.alpha, 1.0)(rng);
  const double y = std::gamma_distribution<double>(p.beta, 1.0)(rng);
  const double s = x + y;
  return s > 0.0 ? std::clamp(x / s, 0.0, 1.0) : 0.5;
}

inline bool in_core(const GeoBox& core, LonLat c) noexcept {
  // Half-open on the east and south edges so neighbouring cores never share a point.
  return c.lon >= core.lon_min && c.lon < core.lon_max && c.lat > core.lat_min &&
         c.lat <= core.lat_max;
}

inline std::uint64_t tile_seed(const SyntheticWorld& world, const OracleParams& p,
                               const Tile& tile) {
  return hash_values(world.seed, p.seed, static_cast<std::int64_t>(tile.grid_row),
                     static_cast<std::int64_t>(tile.grid_col), hash_double(tile.gsd_m),
                     hash_double(tile.geo.lon_min), hash_double(tile.geo.lat_max));
}

inline bool object_detected(const SyntheticWorld& world, const OracleParams& p,
                            const GroundTruthObject& obj, std::optional<Timestamp> at) {
  const std::uint64_t h = hash_values(world.seed, p.seed, hash_string(obj.object_id),
                                      at ? at->time_since_epoch().count() : 0);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < p.p_detect;
}

template <class ObjectRange>
std::vector<RawDetection> oracle_detect_over(const Tile& tile, const SyntheticWorld& world,
                                             const OracleParams& params,
                                             std::optional<Timestamp> at,
                                             const ObjectRange& candidates) {
  std::vector<RawDetection> out;
  std::mt19937_64 rng(tile_seed(world, params, tile));
  std::normal_distribution<double> jitter(0.0, 1.0);
  const double w = tile.width_px, h = tile.height_px;

  for (const GroundTruthObject* obj : candidates) {
    if (at && !obj->present_at(*at)) continue;
    const LonLat c = obj->geo.center();
    // The owning tile reports every detected object; other tiles that see the
    // object in full report a duplicate for fusion to remove.
    const bool owner = in_core(tile.core, c);
    if (!owner && !tile.geo.contains(obj->geo)) continue;
    if (!object_detected(world, params, *obj, at)) continue;
    PixelBox b = geo_to_pixel(tile, obj->geo);
    if (params.jitter_px > 0.0) {
      b.x_min += params.jitter_px * jitter(rng);
      b.y_min += params.jitter_px * jitter(rng);
      b.x_max += params.jitter_px * jitter(rng);
      b.y_max += params.jitter_px * jitter(rng);
      if (b.x_min > b.x_max) std::swap(b.x_min, b.x_max);
      if (b.y_min > b.y_max) std::swap(b.y_min, b.y_max);
    }
    const double score = sample_beta(rng, params.tp_score);
    b = clip(b, w, h);
    if (!is_valid(b)) continue;
    out.push_back({b, obj->class_name, score});
  }

  const double fp_mean = params.fp_rate_per_km2 * tile_area_km2(tile);
  if (fp_mean > 0.0) {
    const auto n = std::poisson_distribution<std::int64_t>(fp_mean)(rng);
    const double side = std::min({params.fp_box_m / tile.gsd_m, w, h});
    std::uniform_real_distribution<double> ux(0.0, w - side), uy(0.0, h - side);
    const std::string cls = world.objects.empty() ? std::string("object")
                                                  : world.objects.front().class_name;
    for (std::int64_t i = 0; i < n; ++i) {
      const double x = ux(rng), y = uy(rng);
      const double score = sample_beta(rng, params.fp_score);
      out.push_back({{x, y, x + side, y + side}, cls, score});
    }
  }
  return out;
}

}  // namespace detail

/// Synthetic detections for `tile`. Ground-truth objects whose centre lies in
/// the tile's ownership cell are reported with probability p_detect, boxes
/// jittered per edge and clipped to the tile; false positives follow
/// Poisson(fp_rate * tile area). When `at` is given only objects present at
/// that instant are visible. Deterministic for fixed inputs.
inline std::vector<RawDetection> oracle_detect(const Tile& tile, const SyntheticWorld& world,
                                               const OracleParams& params,
                                               std::optional<Timestamp> at = std::nullopt) {
  validate(params);
  std::vector<const GroundTruthObject*> candidates;
  candidates.reserve(world.objects.size());
  for (const auto& o : world.objects)
    if (o.geo.intersects(tile.geo)) candidates.push_back(&o);
  return detail::oracle_detect_over(tile, world, params, at, candidates);
}

// ---------------------------------------------------------------------------
// Backend contract

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual DetectorCapabilities capabilities() = 0;
  /// Must be safe to call concurrently.
  virtual std::vector<RawDetection> detect(const Tile& tile, const SceneRef& scene) = 0;
};

/// Oracle detector over a fixed world, with a coarse bucket index so large
/// grids do not scan every object per tile.
class OracleBackend : public DetectorBackend {
 public:
  OracleBackend(SyntheticWorld world, OracleParams params, double preferred_gsd_m = 1.2,
                std::optional<double> f1_max_threshold = std::nullopt)
      : world_(std::move(world)), params_(params) {
    validate(params_);
    caps_.classes = {world_.objects.empty() ? std::string("object")
                                            : world_.objects.front().class_name};
    for (const auto& o : world_.objects)
      if (!caps_.supports(o.class_name)) caps_.classes.push_back(o.class_name);
    caps_.max_tile_px = kUnboundedTilePx;
    caps_.preferred_gsd_m = preferred_gsd_m;
    caps_.f1_max_threshold = f1_max_threshold;
    for (std::size_t i = 0; i < world_.objects.size(); ++i) {
      const GeoBox& g = world_.objects[i].geo;
      for (auto cy = cell(g.lat_min); cy <= cell(g.lat_max); ++cy)
        for (auto cx = cell(g.lon_min); cx <= cell(g.lon_max); ++cx)
          buckets_[key(cx, cy)].push_back(i);
    }
  }

  /// Overrides the advertised class list, e.g. to add classes the world
  /// does not contain.
  void set_classes(std::vector<std::string> classes) { caps_.classes = std::move(classes); }
  void set_f1_max_threshold(std::optional<double> t) { caps_.f1_max_threshold = t; }

  DetectorCapabilities capabilities() override { return caps_; }

  std::vector<RawDetection> detect(const Tile& tile, const SceneRef& scene) override {
    std::vector<std::size_t> idx;
    for (auto cy = cell(tile.geo.lat_min); cy <= cell(tile.geo.lat_max); ++cy)
      for (auto cx = cell(tile.geo.lon_min); cx <= cell(tile.geo.lon_max); ++cx)
        if (auto it = buckets_.find(key(cx, cy)); it != buckets_.end())
          idx.insert(idx.end(), it->second.begin(), it->second.end());
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    std::vector<const GroundTruthObject*> candidates;
    for (std::size_t i : idx)
      if (world_.objects[i].geo.intersects(tile.geo)) candidates.push_back(&world_.objects[i]);
    // A default (epoch) capture time means "unknown": every object is visible.
    std::optional<Timestamp> at;
    if (scene.captured_at != Timestamp{}) at = scene.captured_at;
    return detail::oracle_detect_over(tile, world_, params_, at, candidates);
  }

  const SyntheticWorld& world() const noexcept { return world_; }
  const OracleParams& params() const noexcept { return params_; }

 private:
  static constexpr double kCellDeg = 0.05;
  static std::int64_t cell(double v) { return static_cast<std::int64_t>(std::floor(v / kCellDeg)); }
  static std::uint64_t key(std::int64_t x, std::int64_t y) {
    return (static_cast<std::uint64_t>(x) << 32) ^ static_cast<std::uint32_t>(y);
  }

  SyntheticWorld world_;
  OracleParams params_;
  DetectorCapabilities caps_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets_;
};

/// Returns nothing. Used to measure scheduling overhead.
class NullBackend : public DetectorBackend {
 public:
  explicit NullBackend(std::vector<std::string> classes = {"object"}, double gsd = 1.2) {
    caps_.classes = std::move(classes);
    caps_.preferred_gsd_m = gsd;
  }
  DetectorCapabilities capabilities() override { return caps_; }
  std::vector<RawDetection> detect(const Tile&, const SceneRef&) override { return {}; }

 private:
  DetectorCapabilities caps_;
};

// ---------------------------------------------------------------------------
// Wire protocol

/// HTTP endpoint, e.g. "http://127.0.0.1:8081".
struct Endpoint {
  std::string base_url;
};

namespace detail {

inline std::string excerpt(const std::string& body, std::size_t n = 200) {
  return body.size() <= n ? body : body.substr(0, n) + "...";
}

inline std::unique_ptr<httplib::Client> make_client(const Endpoint& ep, Seconds timeout) {
  auto cli = std::make_unique<httplib::Client>(ep.base_url);
  if (!cli->is_valid()) throw InvalidArgument("bad detector endpoint '" + ep.base_url + "'");
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  cli->set_connection_timeout(us);
  cli->set_read_timeout(us);
  cli->set_write_timeout(us);
  return cli;
}

inline void check_status(const httplib::Result& res, const std::string& what) {
  if (!res)
    throw RetryableError(what + ": transport failure (" + httplib::to_string(res.error()) + ")");
  const int st = res->status;
  if (st == 429 || st >= 500)
    throw RetryableError(what + ": backend returned HTTP " + std::to_string(st));
  if (st != 200) {
    spdlog::warn("{}: HTTP {} body: {}", what, st, excerpt(res->body));
    throw ProtocolError(what + ": backend returned HTTP " + std::to_string(st));
  }
}

}  // namespace detail

/// The request body. `captured_at`, `grid` and `core` are optional extras a
/// protocol-minimal backend ignores.
inline nlohmann::json infer_request(const Tile& tile, const std::string& image_uri,
                                    std::optional<Timestamp> captured_at = std::nullopt) {
  auto box = [](const GeoBox& b) {
    return nlohmann::json{{"lon_min", b.lon_min}, {"lat_min", b.lat_min},
                          {"lon_max", b.lon_max}, {"lat_max", b.lat_max}};
  };
  nlohmann::json j{{"tile_id", tile.tile_id},
                   {"image_uri", image_uri},
                   {"width_px", tile.width_px},
                   {"height_px", tile.height_px},
                   {"gsd_m", tile.gsd_m},
                   {"geo", box(tile.geo)},
                   {"grid", {tile.grid_row, tile.grid_col}},
                   {"core", box(tile.core)}};
  if (captured_at) j["captured_at"] = to_rfc3339(*captured_at);
  return j;
}

/// Validates an /infer response body against the RawDetection invariants.
inline std::vector<RawDetection> parse_infer_response(const std::string& body, const Tile& tile,
                                                      const DetectorCapabilities* caps) {
  auto fail = [&](const std::string& why) -> std::vector<RawDetection> {
    spdlog::warn("infer response for tile {} rejected: {}; payload: {}", tile.tile_id, why,
                 detail::excerpt(body));
    throw ProtocolError("infer: " + why);
  };
  nlohmann::json doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded()) return fail("response is not valid JSON");
  if (!doc.is_object() || !doc.contains("detections") || !doc["detections"].is_array())
    return fail("response lacks a detections array");
  std::vector<RawDetection> out;
  for (const auto& d : doc["detections"]) {
    if (!d.is_object()) return fail("detection is not an object");
    const auto bp = d.find("box_px");
    const auto cl = d.find("class");
    const auto sc = d.find("score");
    if (bp == d.end() || !bp->is_array() || bp->size() != 4) return fail("bad box_px");
    for (const auto& v : *bp)
      if (!v.is_number()) return fail("non-numeric box_px");
    if (cl == d.end() || !cl->is_string()) return fail("missing class");
    if (sc == d.end() || !sc->is_number()) return fail("missing score");
    RawDetection r{{(*bp)[0].get<double>(), (*bp)[1].get<double>(), (*bp)[2].get<double>(),
                    (*bp)[3].get<double>()},
                   cl->get<std::string>(),
                   sc->get<double>()};
    if (!(r.score >= 0.0 && r.score <= 1.0))
      return fail("score " + std::to_string(r.score) + " outside [0, 1]");
    if (!is_valid(r.box) || r.box.x_max > tile.width_px || r.box.y_max > tile.height_px)
      return fail("box outside tile bounds");
    if (caps && !caps->supports(r.class_name)) return fail("unknown class '" + r.class_name + "'");
    out.push_back(std::move(r));
  }
  return out;
}

inline DetectorCapabilities fetch_capabilities(const Endpoint& ep, Seconds timeout = Seconds{5}) {
  auto cli = detail::make_client(ep, timeout);
  auto res = cli->Get("/capabilities");
  detail::check_status(res, "capabilities");
  nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
  if (doc.is_discarded()) {
    spdlog::warn("capabilities payload is not JSON: {}", detail::excerpt(res->body));
    throw ProtocolError("capabilities: response is not valid JSON");
  }
  return parse_capabilities(doc);
}

/// One /infer round trip.
inline std::vector<RawDetection> remote_detect(const Tile& tile, const std::string& image_uri,
                                               const Endpoint& ep, Seconds timeout,
                                               const DetectorCapabilities* caps = nullptr,
                                               std::optional<Timestamp> captured_at = std::nullopt) {
  if (caps && (tile.width_px > caps->max_tile_px || tile.height_px > caps->max_tile_px))
    throw InvalidArgument("tile " + tile.tile_id + " exceeds backend max_tile_px");
  auto cli = detail::make_client(ep, timeout);
  auto res = cli->Post("/infer", infer_request(tile, image_uri, captured_at).dump(), "application/json");
  detail::check_status(res, "infer");
  return parse_infer_response(res->body, tile, caps);
}

/// Detector process reached over HTTP. Capabilities are fetched once and
/// cached.
class RemoteBackend : public DetectorBackend {
 public:
  explicit RemoteBackend(Endpoint ep, Seconds timeout = Seconds{30})
      : ep_(std::move(ep)), timeout_(timeout) {}

  DetectorCapabilities capabilities() override {
    std::lock_guard lock(mu_);
    if (!caps_) caps_ = fetch_capabilities(ep_, timeout_);
    return *caps_;
  }

  std::vector<RawDetection> detect(const Tile& tile, const SceneRef& scene) override {
    const DetectorCapabilities caps = capabilities();
    return remote_detect(tile, scene.image_uri, ep_, timeout_, &caps, scene.captured_at);
  }

  const Endpoint& endpoint() const noexcept { return ep_; }

 private:
  Endpoint ep_;
  Seconds timeout_;
  std::mutex mu_;
  std::optional<DetectorCapabilities> caps_;
};

/// Serves `backend` over the detector wire protocol on `server`. Grid indices
/// come from the optional `grid` field, else from tile ids of the form
/// produced by make_tile_id.
inline void mount_detector_routes(httplib::Server& server, DetectorBackend& backend) {
  server.Get("/capabilities", [&backend](const httplib::Request&, httplib::Response& res) {
    nlohmann::json j = backend.capabilities();
    res.set_content(j.dump(), "application/json");
  });
  server.Post("/infer", [&backend](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json in = nlohmann::json::parse(req.body, nullptr, false);
    try {
      if (in.is_discarded()) throw InvalidArgument("body is not JSON");
      Tile t;
      t.tile_id = in.at("tile_id").get<std::string>();
      t.width_px = in.at("width_px").get<int>();
      t.height_px = in.at("height_px").get<int>();
      t.gsd_m = in.at("gsd_m").get<double>();
      const auto& g = in.at("geo");
      t.geo = {g.at("lon_min").get<double>(), g.at("lat_min").get<double>(),
               g.at("lon_max").get<double>(), g.at("lat_max").get<double>()};
      t.core = t.geo;
      if (auto c = in.find("core"); c != in.end())
        t.core = {c->at("lon_min").get<double>(), c->at("lat_min").get<double>(),
                  c->at("lon_max").get<double>(), c->at("lat_max").get<double>()};
      if (auto g2 = in.find("grid"); g2 != in.end() && g2->is_array() && g2->size() == 2) {
        t.grid_row = (*g2)[0].get<int>();
        t.grid_col = (*g2)[1].get<int>();
      } else {
        unsigned h = 0;
        int r = 0, c = 0;
        if (std::sscanf(t.tile_id.c_str(), "%8x-%d-%d", &h, &r, &c) == 3) {
          t.grid_row = r;
          t.grid_col = c;
        }
      }
      validate(t);
      SceneRef scene;
      scene.image_uri = in.value("image_uri", "");
      scene.footprint = t.geo;
      scene.gsd_m = t.gsd_m;
      if (auto ts = in.find("captured_at"); ts != in.end() && ts->is_string())
        scene.captured_at = parse_rfc3339(ts->get<std::string>());
      nlohmann::json dets = nlohmann::json::array();
      for (const auto& d : backend.detect(t, scene))
        dets.push_back({{"box_px", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
                        {"class", d.class_name},
                        {"score", d.score}});
      res.set_content(nlohmann::json{{"detections", dets}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

}  // namespace bas
