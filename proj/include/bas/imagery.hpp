#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bas/error.hpp"
#include "bas/geo.hpp"
#include "bas/hash.hpp"
#include "bas/time.hpp"

namespace bas {

// ---------------------------------------------------------------------------
// Scenes

enum class SensorSource { HighRes, LowRes, Synthetic };

inline std::string_view to_string(SensorSource s) noexcept {
  switch (s) {
    case SensorSource::HighRes: return "HIGH_RES";
    case SensorSource::LowRes: return "LOW_RES";
    case SensorSource::Synthetic: return "SYNTHETIC";
  }
  return "SYNTHETIC";
}

inline SensorSource parse_sensor_source(std::string_view s) {
  if (s == "HIGH_RES") return SensorSource::HighRes;
  if (s == "LOW_RES") return SensorSource::LowRes;
  if (s == "SYNTHETIC") return SensorSource::Synthetic;
  throw InvalidArgument("unknown sensor source '" + std::string(s) + "'");
}

/// Scene metadata. Pixels are never decoded; `image_uri` is handed to
/// detector backends untouched.
struct SceneRef {
  std::string scene_id;
  SensorSource source = SensorSource::Synthetic;
  GeoBox footprint;
  Timestamp captured_at{};
  double gsd_m = 1.0;
  std::string image_uri;
};

inline void validate(const SceneRef& s) {
  validate(s.footprint);
  if (!(s.gsd_m > 0.0)) throw InvalidArgument("scene " + s.scene_id + ": gsd must be positive");
  if (s.source == SensorSource::HighRes && s.gsd_m > 1.0)
    throw InvalidArgument("scene " + s.scene_id + ": HIGH_RES scenes need gsd <= 1 m");
  if (s.source == SensorSource::LowRes && s.gsd_m < 5.0)
    throw InvalidArgument("scene " + s.scene_id + ": LOW_RES scenes need gsd >= 5 m");
}

// ---------------------------------------------------------------------------
// Synthetic world

struct GroundTruthObject {
  std::string object_id;
  std::string class_name;
  GeoBox geo;
  Timestamp present_from{};
  Timestamp present_until{};

  bool present_at(Timestamp t) const noexcept { return present_from <= t && t < present_until; }
};

/// Object lifetimes. A non-positive mean makes every object permanent over
/// [start, end).
struct LifetimeModel {
  Timestamp start = make_time(2019, 1, 1);
  Timestamp end = make_time(2020, 1, 1);
  double mean_lifetime_days = 0.0;
};

struct ObjectSizeModel {
  double min_m = 60.0;
  double max_m = 120.0;
};

struct SyntheticWorld {
  std::uint64_t seed = 0;
  GeoBox region;
  std::vector<GroundTruthObject> objects;
  double revisit_days = 6.0;
};

/// Poisson(density * area) objects placed uniformly in `region`, each fully
/// inside it. Pure function of its arguments.
inline SyntheticWorld generate_world(std::uint64_t seed, const GeoBox& region,
                                     const std::string& class_name, double density_per_km2,
                                     const LifetimeModel& lifetime = {},
                                     const ObjectSizeModel& size = {}) {
  validate(region);
  if (!(density_per_km2 >= 0.0)) throw InvalidArgument("generate_world: negative density");
  if (!(size.min_m > 0.0) || size.max_m < size.min_m)
    throw InvalidArgument("generate_world: bad object size range");
  if (lifetime.end <= lifetime.start) throw InvalidArgument("generate_world: empty lifetime span");

  SyntheticWorld world;
  world.seed = seed;
  world.region = region;

  std::mt19937_64 rng(hash_values(seed, hash_string(class_name), 0x77u));
  const double mean = density_per_km2 * aoi_area_km2(region);
  if (mean <= 0.0) return world;
  const auto count = std::poisson_distribution<std::int64_t>(mean)(rng);

  const double kx = kMetersPerDegree * std::cos(deg2rad(region.center().lat));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double span_s =
      std::chrono::duration<double>(lifetime.end - lifetime.start).count();

  world.objects.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const double side_m = size.min_m + (size.max_m - size.min_m) * unit(rng);
    const double half_lon = std::min(side_m * 0.5 / kx, region.width_deg() * 0.5);
    const double half_lat = std::min(side_m * 0.5 / kMetersPerDegree, region.height_deg() * 0.5);
    const double clon =
        region.lon_min + half_lon + (region.width_deg() - 2 * half_lon) * unit(rng);
    const double clat =
        region.lat_min + half_lat + (region.height_deg() - 2 * half_lat) * unit(rng);

    GroundTruthObject obj;
    char id[32];
    std::snprintf(id, sizeof id, "obj-%06lld", static_cast<long long>(i));
    obj.object_id = id;
    obj.class_name = class_name;
    obj.geo = {clon - half_lon, clat - half_lat, clon + half_lon, clat + half_lat};
    if (lifetime.mean_lifetime_days > 0.0) {
      // Births spread over one mean lifetime before the span so that the
      // start of the span is not empty.
      const double pre_s = lifetime.mean_lifetime_days * 86400.0;
      const double born = -pre_s + (span_s + pre_s) * unit(rng);
      const double life = std::max(
          1.0, std::exponential_distribution<double>(1.0 / pre_s)(rng));
      obj.present_from = lifetime.start + std::chrono::seconds(static_cast<long long>(born));
      obj.present_until = obj.present_from + std::chrono::seconds(static_cast<long long>(life));
    } else {
      obj.present_from = lifetime.start;
      obj.present_until = lifetime.end;
    }
    world.objects.push_back(std::move(obj));
  }
  return world;
}

// ---------------------------------------------------------------------------
// Scene catalog

class SceneCatalog {
 public:
  virtual ~SceneCatalog() = default;
  /// Scenes of `source` captured inside `window` whose footprint overlaps
  /// `aoi`, ascending by capture time.
  virtual std::vector<SceneRef> query(const GeoBox& aoi, const TimeRange& window,
                                      SensorSource source) const = 0;
};

/// Revisit interval in days; each gap is drawn uniformly from [min, max].
struct RevisitModel {
  double min_days = 6.0;
  double max_days = 6.0;
};

struct CatalogStream {
  SensorSource source = SensorSource::Synthetic;
  double gsd_m = 1.2;
  GeoBox coverage;
  RevisitModel revisit;
};

/// Deterministic synthetic catalog: each stream emits one scene per revisit
/// interval starting at `epoch`, up to `horizon`.
class SyntheticCatalog : public SceneCatalog {
 public:
  SyntheticCatalog(std::uint64_t seed, Timestamp epoch, Timestamp horizon,
                   std::vector<CatalogStream> streams)
      : epoch_(epoch) {
    for (std::size_t si = 0; si < streams.size(); ++si) {
      const CatalogStream& st = streams[si];
      validate(st.coverage);
      if (!(st.revisit.min_days > 0.0) || st.revisit.max_days < st.revisit.min_days)
        throw InvalidArgument("catalog: bad revisit model");
      std::mt19937_64 rng(hash_values(seed, si, 0x5ce9u));
      std::uniform_real_distribution<double> gap(st.revisit.min_days, st.revisit.max_days);
      Timestamp t = epoch;
      for (int k = 0; t < horizon; ++k) {
        SceneRef s;
        const auto ymd = std::chrono::year_month_day{std::chrono::floor<std::chrono::days>(t)};
        char id[64];
        std::snprintf(id, sizeof id, "%s-%u-%04d%02u%02u-%04d",
                      std::string(to_string(st.source)).c_str(), static_cast<unsigned>(si),
                      int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()), k);
        s.scene_id = id;
        s.source = st.source;
        s.footprint = st.coverage;
        s.captured_at = t;
        s.gsd_m = st.gsd_m;
        s.image_uri = "synthetic://" + s.scene_id;
        validate(s);
        scenes_.push_back(std::move(s));
        const double g = st.revisit.min_days == st.revisit.max_days ? st.revisit.min_days
                                                                    : gap(rng);
        t += days(g);
      }
    }
    std::stable_sort(scenes_.begin(), scenes_.end(), [](const SceneRef& a, const SceneRef& b) {
      return a.captured_at < b.captured_at;
    });
  }

  /// One stream per sensor class over the world region at the world's revisit.
  static SyntheticCatalog for_world(const SyntheticWorld& world, Timestamp epoch,
                                    Timestamp horizon) {
    const RevisitModel rv{world.revisit_days, world.revisit_days};
    return SyntheticCatalog(world.seed, epoch, horizon,
                            {{SensorSource::Synthetic, 1.2, world.region, rv},
                             {SensorSource::HighRes, 0.3, world.region, rv},
                             {SensorSource::LowRes, 10.0, world.region, rv}});
  }

  std::vector<SceneRef> query(const GeoBox& aoi, const TimeRange& window,
                              SensorSource source) const override {
    std::vector<SceneRef> out;
    if (window.empty() || window.end <= epoch_) return out;
    for (const SceneRef& s : scenes_) {
      if (s.source == source && window.contains(s.captured_at) && s.footprint.overlaps(aoi))
        out.push_back(s);
    }
    return out;
  }

  const std::vector<SceneRef>& scenes() const noexcept { return scenes_; }

 private:
  Timestamp epoch_;
  std::vector<SceneRef> scenes_;
};

// ---------------------------------------------------------------------------
// Labeled datasets

struct Label {
  std::string class_name;
  GeoBox geo;
  friend bool operator==(const Label&, const Label&) = default;
};

struct LabeledImage {
  std::string image_id;
  std::string region_name;
  GeoBox footprint;
  std::optional<Timestamp> captured_at;
  std::vector<Label> labels;
  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

struct LabeledDataset {
  std::vector<LabeledImage> images;
  std::map<std::string, double> curation_hours;

  /// Region names in first-appearance order.
  std::vector<std::string> regions() const {
    std::vector<std::string> out;
    for (const auto& im : images)
      if (std::find(out.begin(), out.end(), im.region_name) == out.end())
        out.push_back(im.region_name);
    return out;
  }
  std::size_t image_count(std::string_view region) const {
    return static_cast<std::size_t>(std::count_if(
        images.begin(), images.end(), [&](const auto& im) { return im.region_name == region; }));
  }
  std::size_t label_count() const {
    std::size_t n = 0;
    for (const auto& im : images) n += im.labels.size();
    return n;
  }
  std::size_t label_count(std::string_view region) const {
    std::size_t n = 0;
    for (const auto& im : images)
      if (im.region_name == region) n += im.labels.size();
    return n;
  }
  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

namespace detail {

inline nlohmann::json rectangle_geometry(const GeoBox& b) {
  using nlohmann::json;
  return json{{"type", "Polygon"},
              {"coordinates",
               json::array({json::array({json::array({b.lon_min, b.lat_min}),
                                         json::array({b.lon_max, b.lat_min}),
                                         json::array({b.lon_max, b.lat_max}),
                                         json::array({b.lon_min, b.lat_max}),
                                         json::array({b.lon_min, b.lat_min})})})}};
}

inline GeoBox parse_rectangle(const nlohmann::json& geom, std::size_t feature) {
  auto fail = [&](const std::string& why) -> GeoBox {
    throw FormatError("feature " + std::to_string(feature) + ": " + why, feature);
  };
  if (!geom.is_object() || geom.value("type", "") != "Polygon") return fail("geometry is not a Polygon");
  const auto& coords = geom.at("coordinates");
  if (!coords.is_array() || coords.empty() || !coords[0].is_array())
    return fail("polygon has no exterior ring");
  const auto& ring = coords[0];
  if (ring.size() != 5 && ring.size() != 4) return fail("polygon is not a rectangle");
  double lo_x = 1e300, lo_y = 1e300, hi_x = -1e300, hi_y = -1e300;
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : ring) {
    if (!p.is_array() || p.size() < 2 || !p[0].is_number() || !p[1].is_number())
      return fail("bad coordinate");
    const double x = p[0].get<double>(), y = p[1].get<double>();
    pts.emplace_back(x, y);
    lo_x = std::min(lo_x, x);
    lo_y = std::min(lo_y, y);
    hi_x = std::max(hi_x, x);
    hi_y = std::max(hi_y, y);
  }
  for (const auto& [x, y] : pts)
    if ((x != lo_x && x != hi_x) || (y != lo_y && y != hi_y))
      return fail("polygon is not an axis-aligned rectangle");
  GeoBox b{lo_x, lo_y, hi_x, hi_y};
  if (!is_valid(b)) return fail("degenerate or out-of-range rectangle " + to_string(b));
  return b;
}

}  // namespace detail

inline nlohmann::json dataset_to_geojson(const LabeledDataset& ds) {
  using nlohmann::json;
  json features = json::array();
  for (const auto& im : ds.images) {
    json props{{"role", "footprint"}, {"image_id", im.image_id}, {"region", im.region_name}};
    if (im.captured_at) props["captured_at"] = to_rfc3339(*im.captured_at);
    features.push_back(json{{"type", "Feature"},
                            {"geometry", detail::rectangle_geometry(im.footprint)},
                            {"properties", std::move(props)}});
    for (const auto& l : im.labels) {
      json lp{{"class", l.class_name}, {"image_id", im.image_id}, {"region", im.region_name}};
      if (im.captured_at) lp["captured_at"] = to_rfc3339(*im.captured_at);
      features.push_back(json{{"type", "Feature"},
                              {"geometry", detail::rectangle_geometry(l.geo)},
                              {"properties", std::move(lp)}});
    }
  }
  json out{{"type", "FeatureCollection"}, {"features", std::move(features)}};
  if (!ds.curation_hours.empty()) out["metadata"] = {{"curation_hours", ds.curation_hours}};
  return out;
}

/// Parses a dataset FeatureCollection. Each Feature is a rectangle with
/// properties {class, image_id, region, captured_at}. Features whose `role` is
/// "footprint" declare an image's extent; images without one take the
/// bounding box of their labels.
inline LabeledDataset dataset_from_geojson(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection")
    throw FormatError("dataset is not a GeoJSON FeatureCollection");
  const auto it = doc.find("features");
  if (it == doc.end() || !it->is_array()) throw FormatError("FeatureCollection lacks features");

  LabeledDataset ds;
  std::map<std::string, std::size_t> index;
  std::map<std::string, bool> has_footprint;
  std::vector<std::pair<std::size_t, std::size_t>> label_origin;  // (image, feature no)
  auto image_for = [&](const std::string& id, const std::string& region,
                       std::size_t feature) -> LabeledImage& {
    auto [pos, inserted] = index.try_emplace(id, ds.images.size());
    if (inserted) {
      LabeledImage im;
      im.image_id = id;
      im.region_name = region;
      ds.images.push_back(std::move(im));
    } else if (ds.images[pos->second].region_name != region) {
      throw FormatError("feature " + std::to_string(feature) + ": image " + id +
                            " appears in two regions",
                        feature);
    }
    return ds.images[pos->second];
  };

  std::size_t n = 0;
  for (const auto& f : *it) {
    ++n;
    try {
      if (!f.is_object() || f.value("type", "") != "Feature")
        throw FormatError("feature " + std::to_string(n) + ": not a Feature", n);
      const auto& props = f.at("properties");
      const std::string image_id = props.at("image_id").get<std::string>();
      const std::string region = props.at("region").get<std::string>();
      const GeoBox box = detail::parse_rectangle(f.at("geometry"), n);
      LabeledImage& im = image_for(image_id, region, n);
      if (auto ca = props.find("captured_at"); ca != props.end() && ca->is_string()) {
        const Timestamp t = parse_rfc3339(ca->get<std::string>());
        if (im.captured_at && *im.captured_at != t)
          throw FormatError("feature " + std::to_string(n) + ": conflicting captured_at for " +
                                image_id,
                            n);
        im.captured_at = t;
      }
      if (props.value("role", "label") == "footprint") {
        if (has_footprint[image_id])
          throw FormatError("feature " + std::to_string(n) + ": duplicate footprint for " +
                                image_id,
                            n);
        has_footprint[image_id] = true;
        im.footprint = box;
      } else {
        im.labels.push_back({props.at("class").get<std::string>(), box});
        label_origin.emplace_back(index[image_id], n);
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("feature " + std::to_string(n) + ": " + e.what(), n);
    }
  }

  std::vector<std::size_t> per_image(ds.images.size(), 0);
  for (const auto& [img, feature] : label_origin) {
    LabeledImage& im = ds.images[img];
    const Label& l = im.labels[per_image[img]++];
    if (has_footprint[im.image_id]) {
      if (!im.footprint.contains(l.geo))
        throw ValidationError("feature " + std::to_string(feature) + ": label " +
                              to_string(l.geo) + " lies outside the footprint of image " +
                              im.image_id);
    } else if (per_image[img] == 1) {
      im.footprint = l.geo;
    } else {
      im.footprint = {std::min(im.footprint.lon_min, l.geo.lon_min),
                      std::min(im.footprint.lat_min, l.geo.lat_min),
                      std::max(im.footprint.lon_max, l.geo.lon_max),
                      std::max(im.footprint.lat_max, l.geo.lat_max)};
    }
  }

  if (auto md = doc.find("metadata"); md != doc.end() && md->is_object()) {
    if (auto ch = md->find("curation_hours"); ch != md->end() && ch->is_object())
      for (const auto& [k, v] : ch->items())
        if (v.is_number()) ds.curation_hours[k] = v.get<double>();
  }
  return ds;
}

inline LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("dataset " + path + ": " + e.what());
  }
  return dataset_from_geojson(doc);
}

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset " + path);
  out << dataset_to_geojson(ds).dump() << '\n';
  if (!out) throw Error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Reference fixtures

struct RegionCuration {
  std::string name;
  std::size_t images;
  std::size_t objects;
  double curation_hours;
  LonLat anchor;  // southwest corner of the synthetic image mosaic
};

/// Curation counts of the multi-region fracking-well training set.
inline const std::vector<RegionCuration>& well_curation_table() {
  static const std::vector<RegionCuration> table{
      {"Pennsylvania", 1031, 1521, 110, {-78.5, 40.5}},
      {"New Mexico", 463, 2801, 62, {-104.5, 32.0}},
      {"Canada", 1603, 5986, 82, {-118.5, 54.5}},
      {"Russia", 1422, 1906, 150, {72.0, 61.0}},
  };
  return table;
}

/// Held-out blind-test region: 54 images, 44 wells.
inline RegionCuration north_dakota_blind_region() {
  return {"North Dakota", 54, 44, 0.0, {-103.5, 47.5}};
}

/// Builds a dataset with the given per-region image and object counts. Images
/// are 1.5 km squares laid out in a mosaic; objects are spread round-robin
/// over images so counts are preserved exactly.
inline LabeledDataset make_curated_dataset(const std::vector<RegionCuration>& regions,
                                           const std::string& class_name = "fracking_well",
                                           std::uint64_t seed = 1) {
  LabeledDataset ds;
  constexpr double kImageM = 1500.0;
  constexpr double kObjectM = 90.0;
  for (const auto& rc : regions) {
    ds.curation_hours[rc.name] = rc.curation_hours;
    const double dlat = kImageM / kMetersPerDegree, olat = kObjectM / kMetersPerDegree;
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(double(rc.images))));
    std::mt19937_64 rng(hash_values(seed, hash_string(rc.name)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t first = ds.images.size();
    for (std::size_t i = 0; i < rc.images; ++i) {
      LabeledImage im;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%05zu", rc.name.c_str(), i);
      im.image_id = id;
      std::replace(im.image_id.begin(), im.image_id.end(), ' ', '_');
      im.region_name = rc.name;
      // Longitude spans use the row's own latitude so every image is square.
      const double lat0 = rc.anchor.lat + (i / cols) * dlat * 1.01;
      const double dlon = kImageM / (kMetersPerDegree * std::cos(deg2rad(lat0 + dlat / 2)));
      const double lon0 = rc.anchor.lon + (i % cols) * dlon * 1.01;
      im.footprint = {lon0, lat0, lon0 + dlon, lat0 + dlat};
      im.captured_at = make_time(2019, 6, 1) + days(double(i % 180));
      ds.images.push_back(std::move(im));
    }
    for (std::size_t k = 0; k < rc.objects && rc.images > 0; ++k) {
      LabeledImage& im = ds.images[first + k % rc.images];
      // Objects in one image sit on a 4x4 lattice of slots, jittered inside.
      const std::size_t slot = (k / rc.images) % 16;
      const double cell_lon = im.footprint.width_deg() / 4, cell_lat = im.footprint.height_deg() / 4;
      const double olon = kObjectM / (kMetersPerDegree * std::cos(deg2rad(im.footprint.center().lat)));
      const double x0 = im.footprint.lon_min + (slot % 4) * cell_lon;
      const double y0 = im.footprint.lat_min + (slot / 4) * cell_lat;
      const double lon = x0 + (cell_lon - olon) * unit(rng);
      const double lat = y0 + (cell_lat - olat) * unit(rng);
      im.labels.push_back({class_name, {lon, lat, lon + olon, lat + olat}});
    }
  }
  return ds;
}

inline LabeledDataset well_curation_dataset() { return make_curated_dataset(well_curation_table()); }

}  // namespace bas
