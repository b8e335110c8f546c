#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bas/detector.hpp"
#include "bas/geo.hpp"
#include "bas/imagery.hpp"
#include "bas/time.hpp"

namespace bas {

/// A geo-registered detection with its provenance.
struct GeoDetection {
  std::string detection_id;
  std::string class_name;
  double score = 0.0;
  GeoBox geo;
  std::string tile_id;
  std::string scene_id;
  Timestamp captured_at{};
  std::string sensor;
  friend bool operator==(const GeoDetection&, const GeoDetection&) = default;
};

inline void to_json(nlohmann::json& j, const GeoBox& b) {
  j = {{"lon_min", b.lon_min}, {"lat_min", b.lat_min}, {"lon_max", b.lon_max},
       {"lat_max", b.lat_max}};
}

inline void from_json(const nlohmann::json& j, GeoBox& b) {
  b.lon_min = j.at("lon_min").get<double>();
  b.lat_min = j.at("lat_min").get<double>();
  b.lon_max = j.at("lon_max").get<double>();
  b.lat_max = j.at("lat_max").get<double>();
}

inline void to_json(nlohmann::json& j, const GeoDetection& d) {
  j = {{"detection_id", d.detection_id},
       {"class", d.class_name},
       {"score", d.score},
       {"geo", d.geo},
       {"tile_id", d.tile_id},
       {"scene_id", d.scene_id},
       {"captured_at", to_rfc3339(d.captured_at)},
       {"sensor", d.sensor}};
}

inline void from_json(const nlohmann::json& j, GeoDetection& d) {
  d.detection_id = j.at("detection_id").get<std::string>();
  d.class_name = j.at("class").get<std::string>();
  d.score = j.at("score").get<double>();
  d.geo = j.at("geo").get<GeoBox>();
  d.tile_id = j.value("tile_id", "");
  d.scene_id = j.value("scene_id", "");
  d.captured_at = parse_rfc3339(j.at("captured_at").get<std::string>());
  d.sensor = j.value("sensor", "");
}

inline void validate(const GeoDetection& d) {
  if (d.detection_id.empty()) throw InvalidArgument("detection without an id");
  if (!(d.score >= 0.0 && d.score <= 1.0))
    throw InvalidArgument("detection " + d.detection_id + ": score outside [0, 1]");
  if (!is_valid(d.geo)) throw InvalidArgument("detection " + d.detection_id + ": invalid geo box");
}

/// Maps pixel detections on `tile` to geodetic boxes. Ids are
/// `<scene_id>/<tile_id>/<index>`, so they are stable across runs.
inline std::vector<GeoDetection> register_detections(const Tile& tile,
                                                     std::span<const RawDetection> raw,
                                                     const SceneRef& scene) {
  std::vector<GeoDetection> out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    char idx[24];
    std::snprintf(idx, sizeof idx, "%04zu", i);
    GeoDetection d;
    d.detection_id = scene.scene_id + "/" + tile.tile_id + "/" + idx;
    d.class_name = raw[i].class_name;
    d.score = raw[i].score;
    d.geo = pixel_to_geo(tile, raw[i].box);
    d.tile_id = tile.tile_id;
    d.scene_id = scene.scene_id;
    d.captured_at = scene.captured_at;
    d.sensor = std::string(to_string(scene.source));
    out.push_back(std::move(d));
  }
  return out;
}

/// Orders by score descending, ties by detection id.
inline bool score_order(const GeoDetection& a, const GeoDetection& b) noexcept {
  if (a.score != b.score) return a.score > b.score;
  return a.detection_id < b.detection_id;
}

/// Class-wise greedy non-maximum suppression across tile groups. A detection
/// survives iff its IoU with every already-kept detection of its class is
/// below `iou_threshold`. Output is sorted by score descending.
inline std::vector<GeoDetection> merge_detections(std::span<const std::vector<GeoDetection>> groups,
                                                  double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw InvalidArgument("merge_detections: iou threshold must lie in (0, 1]");
  std::vector<const GeoDetection*> all;
  for (const auto& g : groups)
    for (const auto& d : g) all.push_back(&d);
  std::sort(all.begin(), all.end(),
            [](const GeoDetection* a, const GeoDetection* b) { return score_order(*a, *b); });

  // Kept boxes bucketed per class on a coarse grid; a candidate is only
  // compared against kept boxes in the cells it touches plus the few kept
  // boxes too large to bucket.
  constexpr double kCell = 0.02;
  constexpr long long kMaxCells = 64;
  auto cell = [](double v) { return static_cast<long long>(std::floor(v / kCell)); };
  struct ClassIndex {
    std::map<std::pair<long long, long long>, std::vector<const GeoDetection*>> cells;
    std::vector<const GeoDetection*> large;
    std::vector<const GeoDetection*> all;
  };
  std::map<std::string, ClassIndex> kept;

  std::vector<GeoDetection> out;
  for (const GeoDetection* d : all) {
    ClassIndex& ix = kept[d->class_name];
    const long long x0 = cell(d->geo.lon_min), x1 = cell(d->geo.lon_max);
    const long long y0 = cell(d->geo.lat_min), y1 = cell(d->geo.lat_max);
    const bool large = (x1 - x0 + 1) * (y1 - y0 + 1) > kMaxCells;
    auto suppressed_by = [&](const std::vector<const GeoDetection*>& v) {
      return std::any_of(v.begin(), v.end(), [&](const GeoDetection* o) {
        return iou(o->geo, d->geo) >= iou_threshold;
      });
    };
    bool keep = !suppressed_by(ix.large);
    if (keep && large) {
      keep = !suppressed_by(ix.all);
    } else {
      for (long long y = y0; y <= y1 && keep; ++y)
        for (long long x = x0; x <= x1 && keep; ++x)
          if (auto it = ix.cells.find({x, y}); it != ix.cells.end())
            keep = !suppressed_by(it->second);
    }
    if (!keep) continue;
    ix.all.push_back(d);
    if (large) {
      ix.large.push_back(d);
    } else {
      for (long long y = y0; y <= y1; ++y)
        for (long long x = x0; x <= x1; ++x) ix.cells[{x, y}].push_back(d);
    }
    out.push_back(*d);
  }
  return out;
}

inline std::vector<GeoDetection> merge_detections(const std::vector<GeoDetection>& flat,
                                                  double iou_threshold) {
  return merge_detections(std::span<const std::vector<GeoDetection>>(&flat, 1), iou_threshold);
}

}  // namespace bas
