#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "bas/error.hpp"
#include "bas/hash.hpp"

// Geodesy, rectangle algebra and the AOI -> tile grid decomposition.
//
// The earth is a sphere of radius kEarthRadiusM. Metric quantities use a local
// equirectangular projection about an origin, valid inside a window of
// kGeodesyWindowDeg degrees.

namespace bas {

inline constexpr double kEarthRadiusM = 6'371'008.8;
inline constexpr double kMetersPerDegree = kEarthRadiusM * std::numbers::pi / 180.0;
inline constexpr double kGeodesyWindowDeg = 5.0;

inline double deg2rad(double d) noexcept { return d * std::numbers::pi / 180.0; }

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
};

struct LocalPoint {
  double east_m = 0.0;
  double north_m = 0.0;
};

/// Geodetic rectangle, WGS-84 degrees. Anti-meridian crossings are not
/// representable.
struct GeoBox {
  double lon_min = 0.0;
  double lat_min = 0.0;
  double lon_max = 0.0;
  double lat_max = 0.0;

  double width_deg() const noexcept { return lon_max - lon_min; }
  double height_deg() const noexcept { return lat_max - lat_min; }
  LonLat center() const noexcept {
    return {(lon_min + lon_max) * 0.5, (lat_min + lat_max) * 0.5};
  }
  bool contains(LonLat p) const noexcept {
    return p.lon >= lon_min && p.lon <= lon_max && p.lat >= lat_min && p.lat <= lat_max;
  }
  bool contains(const GeoBox& o) const noexcept {
    return o.lon_min >= lon_min && o.lon_max <= lon_max && o.lat_min >= lat_min &&
           o.lat_max <= lat_max;
  }
  /// Closed-set intersection: touching edges count.
  bool intersects(const GeoBox& o) const noexcept {
    return lon_min <= o.lon_max && o.lon_min <= lon_max && lat_min <= o.lat_max &&
           o.lat_min <= lat_max;
  }
  /// Intersection with positive area.
  bool overlaps(const GeoBox& o) const noexcept {
    return lon_min < o.lon_max && o.lon_min < lon_max && lat_min < o.lat_max &&
           o.lat_min < lat_max;
  }
  friend bool operator==(const GeoBox&, const GeoBox&) = default;
};

/// Pixel rectangle: x east, y south, origin at the tile's northwest corner.
struct PixelBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

inline bool is_valid(const GeoBox& b) noexcept {
  return std::isfinite(b.lon_min) && std::isfinite(b.lat_min) && std::isfinite(b.lon_max) &&
         std::isfinite(b.lat_max) && b.lon_min < b.lon_max && b.lat_min < b.lat_max &&
         b.lon_min >= -180.0 && b.lon_max <= 180.0 && b.lat_min >= -90.0 && b.lat_max <= 90.0;
}

inline bool is_valid(const PixelBox& b) noexcept {
  return std::isfinite(b.x_min) && std::isfinite(b.y_min) && std::isfinite(b.x_max) &&
         std::isfinite(b.y_max) && b.x_min < b.x_max && b.y_min < b.y_max && b.x_min >= 0.0 &&
         b.y_min >= 0.0;
}

inline std::string to_string(const GeoBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g", b.lon_min, b.lat_min, b.lon_max,
                b.lat_max);
  return buf;
}

inline void validate(const GeoBox& b) {
  if (!is_valid(b)) {
    if (b.lon_min > b.lon_max)
      throw InvalidArgument("geo box " + to_string(b) +
                            " crosses the anti-meridian; split it at 180 degrees");
    throw InvalidArgument("invalid geo box " + to_string(b));
  }
}

inline void validate(const PixelBox& b) {
  if (!is_valid(b)) throw InvalidArgument("invalid pixel box");
}

namespace detail {

inline double rect_iou(double ax0, double ay0, double ax1, double ay1, double bx0, double by0,
                       double bx1, double by1) noexcept {
  const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

}  // namespace detail

inline double iou(const PixelBox& a, const PixelBox& b) noexcept {
  return detail::rect_iou(a.x_min, a.y_min, a.x_max, a.y_max, b.x_min, b.y_min, b.x_max,
                          b.y_max);
}

/// Overlap measured in the local metric projection about the midpoint of both
/// boxes.
inline double iou(const GeoBox& a, const GeoBox& b) noexcept {
  const double mid_lat =
      (std::min(a.lat_min, b.lat_min) + std::max(a.lat_max, b.lat_max)) * 0.5;
  const double kx = kMetersPerDegree * std::cos(deg2rad(mid_lat));
  const double ky = kMetersPerDegree;
  return detail::rect_iou(a.lon_min * kx, a.lat_min * ky, a.lon_max * kx, a.lat_max * ky,
                          b.lon_min * kx, b.lat_min * ky, b.lon_max * kx, b.lat_max * ky);
}

using AnyBox = std::variant<PixelBox, GeoBox>;

/// Frame-checked IoU; mixing pixel and geodetic rectangles is an error.
inline double iou(const AnyBox& a, const AnyBox& b) {
  if (a.index() != b.index())
    throw InvalidArgument("iou: rectangles are in different coordinate frames");
  if (const auto* pa = std::get_if<PixelBox>(&a)) return iou(*pa, std::get<PixelBox>(b));
  return iou(std::get<GeoBox>(a), std::get<GeoBox>(b));
}

inline LocalPoint local_meters(LonLat point, LonLat origin) {
  const double dlon = point.lon - origin.lon;
  const double dlat = point.lat - origin.lat;
  if (!(std::abs(dlon) < kGeodesyWindowDeg) || !(std::abs(dlat) < kGeodesyWindowDeg))
    throw OutOfRange("local_meters: point is outside the 5-degree window around the origin");
  return {dlon * kMetersPerDegree * std::cos(deg2rad(origin.lat)), dlat * kMetersPerDegree};
}

inline LonLat from_local_meters(LocalPoint p, LonLat origin) {
  const double kx = kMetersPerDegree * std::cos(deg2rad(origin.lat));
  LonLat out{origin.lon + p.east_m / kx, origin.lat + p.north_m / kMetersPerDegree};
  if (!(std::abs(out.lon - origin.lon) < kGeodesyWindowDeg) ||
      !(std::abs(out.lat - origin.lat) < kGeodesyWindowDeg))
    throw OutOfRange("from_local_meters: offset leaves the 5-degree window");
  return out;
}

/// Equirectangular distance at the mean latitude. No window restriction.
inline double distance_m(LonLat a, LonLat b) noexcept {
  const double kx = kMetersPerDegree * std::cos(deg2rad((a.lat + b.lat) * 0.5));
  return std::hypot((b.lon - a.lon) * kx, (b.lat - a.lat) * kMetersPerDegree);
}

inline double aoi_area_km2(const GeoBox& aoi) noexcept {
  const double h = aoi.height_deg() * kMetersPerDegree;
  const double w = aoi.width_deg() * kMetersPerDegree * std::cos(deg2rad(aoi.center().lat));
  return w * h / 1e6;
}

/// One fixed-size unit of inference work.
struct Tile {
  std::string tile_id;
  int grid_row = 0;
  int grid_col = 0;
  GeoBox geo;
  /// Exclusive ownership cell. Cores of a grid partition the covered area;
  /// for a standalone tile this equals `geo`.
  GeoBox core;
  int width_px = 0;
  int height_px = 0;
  double gsd_m = 0.0;
};

struct TileGrid {
  GeoBox aoi;
  int rows = 0;
  int cols = 0;
  int tile_px = 0;
  int overlap_px = 0;
  double gsd_m = 0.0;
  std::vector<Tile> tiles;  // row-major
};

inline double tile_area_km2(const Tile& t) noexcept {
  return (t.width_px * t.gsd_m) * (t.height_px * t.gsd_m) / 1e6;
}

inline void validate(const Tile& t) {
  validate(t.geo);
  if (t.width_px <= 0 || t.height_px <= 0 || !(t.gsd_m > 0.0))
    throw InvalidArgument("tile " + t.tile_id + " has non-positive dimensions");
}

/// Thrown when an AOI exceeds the geodesy window; carries a tiling of the AOI
/// into pieces that fit.
class SplitRequired : public InvalidArgument {
 public:
  SplitRequired(const std::string& what, std::vector<GeoBox> suggestions)
      : InvalidArgument(what), suggestions_(std::move(suggestions)) {}
  const std::vector<GeoBox>& suggestions() const noexcept { return suggestions_; }

 private:
  std::vector<GeoBox> suggestions_;
};

inline std::vector<GeoBox> split_aoi(const GeoBox& aoi, double max_span_deg = kGeodesyWindowDeg) {
  const int nx = std::max(1, static_cast<int>(std::ceil(aoi.width_deg() / max_span_deg)));
  const int ny = std::max(1, static_cast<int>(std::ceil(aoi.height_deg() / max_span_deg)));
  std::vector<GeoBox> out;
  out.reserve(static_cast<std::size_t>(nx) * ny);
  for (int r = 0; r < ny; ++r) {
    for (int c = 0; c < nx; ++c) {
      const double w = aoi.width_deg();
      const double h = aoi.height_deg();
      out.push_back({aoi.lon_min + w * c / nx,
                     r + 1 == ny ? aoi.lat_min : aoi.lat_max - h * (r + 1) / ny,
                     c + 1 == nx ? aoi.lon_max : aoi.lon_min + w * (c + 1) / nx,
                     aoi.lat_max - h * r / ny});
    }
  }
  return out;
}

namespace detail {

// Number of steps needed so that `count * step + overlap >= extent`, at least 1.
inline int cover_count(double extent_m, double step_m, double overlap_m) {
  const double n = (extent_m - overlap_m) / step_m;
  return std::max(1, static_cast<int>(std::ceil(n - 1e-9)));
}

inline std::uint64_t grid_hash(const GeoBox& aoi, double gsd_m, int tile_px, int overlap_px) {
  return hash_values(hash_double(aoi.lon_min), hash_double(aoi.lat_min), hash_double(aoi.lon_max),
                     hash_double(aoi.lat_max), hash_double(gsd_m), tile_px, overlap_px);
}

}  // namespace detail

inline std::string make_tile_id(std::uint64_t grid_hash, int row, int col) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%08x-%d-%d", static_cast<unsigned>(grid_hash & 0xffffffffu),
                row, col);
  return buf;
}

/// Decomposes an AOI into a row-major grid of equally sized tiles anchored at
/// the AOI's northwest corner. The last row and column may overhang the AOI.
inline TileGrid tile_aoi(const GeoBox& aoi, double gsd_m, int tile_px, int overlap_px) {
  validate(aoi);
  if (!(gsd_m > 0.0)) throw InvalidArgument("tile_aoi: gsd must be positive");
  if (overlap_px < 0 || tile_px <= 2 * overlap_px)
    throw InvalidArgument("tile_aoi: need tile_px > 2 * overlap_px >= 0");
  if (aoi.width_deg() > kGeodesyWindowDeg || aoi.height_deg() > kGeodesyWindowDeg)
    throw SplitRequired("AOI " + to_string(aoi) + " exceeds the 5-degree geodesy window",
                        split_aoi(aoi));

  const LonLat origin = aoi.center();
  const double width_m = aoi.width_deg() * kMetersPerDegree * std::cos(deg2rad(origin.lat));
  const double height_m = aoi.height_deg() * kMetersPerDegree;
  const double size_m = tile_px * gsd_m;
  const double overlap_m = overlap_px * gsd_m;
  const double step_m = size_m - overlap_m;

  TileGrid grid;
  grid.aoi = aoi;
  grid.cols = detail::cover_count(width_m, step_m, overlap_m);
  grid.rows = detail::cover_count(height_m, step_m, overlap_m);
  grid.tile_px = tile_px;
  grid.overlap_px = overlap_px;
  grid.gsd_m = gsd_m;
  grid.tiles.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);

  const std::uint64_t gh = detail::grid_hash(aoi, gsd_m, tile_px, overlap_px);
  const double west0 = -width_m * 0.5;
  const double north0 = height_m * 0.5;
  auto to_box = [&](double west, double south, double east, double north) {
    const LonLat sw = from_local_meters({west, south}, origin);
    const LonLat ne = from_local_meters({east, north}, origin);
    return GeoBox{sw.lon, sw.lat, ne.lon, ne.lat};
  };

  for (int r = 0; r < grid.rows; ++r) {
    const double north = north0 - r * step_m;
    const double south = north - size_m;
    const double core_north = r == 0 ? north : north0 - r * step_m - overlap_m * 0.5;
    const double core_south =
        r + 1 == grid.rows ? south : north0 - (r + 1) * step_m - overlap_m * 0.5;
    for (int c = 0; c < grid.cols; ++c) {
      const double west = west0 + c * step_m;
      const double east = west + size_m;
      const double core_west = c == 0 ? west : west0 + c * step_m + overlap_m * 0.5;
      const double core_east =
          c + 1 == grid.cols ? east : west0 + (c + 1) * step_m + overlap_m * 0.5;
      Tile t;
      t.tile_id = make_tile_id(gh, r, c);
      t.grid_row = r;
      t.grid_col = c;
      t.geo = to_box(west, south, east, north);
      t.core = to_box(core_west, core_south, core_east, core_north);
      t.width_px = tile_px;
      t.height_px = tile_px;
      t.gsd_m = gsd_m;
      if (!is_valid(t.geo))
        throw InvalidArgument("tile_aoi: grid overhangs a pole or the anti-meridian");
      grid.tiles.push_back(std::move(t));
    }
  }
  return grid;
}

/// A single tile whose footprint is exactly `footprint`.
inline Tile standalone_tile(std::string tile_id, const GeoBox& footprint, int width_px,
                            int height_px, double gsd_m) {
  Tile t{std::move(tile_id), 0, 0, footprint, footprint, width_px, height_px, gsd_m};
  validate(t);
  return t;
}

/// Maps a pixel rectangle on `tile` to geodetic coordinates. The NW corner of
/// the tile is (lon_min, lat_max); +x runs east and +y south.
inline GeoBox pixel_to_geo(const Tile& tile, const PixelBox& box) {
  constexpr double kEps = 1e-9;
  if (!is_valid(box) || box.x_max > tile.width_px + kEps || box.y_max > tile.height_px + kEps)
    throw InvalidArgument("pixel_to_geo: box outside tile " + tile.tile_id);
  const double sx = tile.geo.width_deg() / tile.width_px;
  const double sy = tile.geo.height_deg() / tile.height_px;
  return {tile.geo.lon_min + box.x_min * sx, tile.geo.lat_max - box.y_max * sy,
          tile.geo.lon_min + box.x_max * sx, tile.geo.lat_max - box.y_min * sy};
}

/// Inverse of pixel_to_geo. The result is not clipped to the tile.
inline PixelBox geo_to_pixel(const Tile& tile, const GeoBox& geo) noexcept {
  const double sx = tile.width_px / tile.geo.width_deg();
  const double sy = tile.height_px / tile.geo.height_deg();
  return {(geo.lon_min - tile.geo.lon_min) * sx, (tile.geo.lat_max - geo.lat_max) * sy,
          (geo.lon_max - tile.geo.lon_min) * sx, (tile.geo.lat_max - geo.lat_min) * sy};
}

inline PixelBox clip(const PixelBox& b, double width, double height) noexcept {
  return {std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height),
          std::clamp(b.x_max, 0.0, width), std::clamp(b.y_max, 0.0, height)};
}

}  // namespace bas
