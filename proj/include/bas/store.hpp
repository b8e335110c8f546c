#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "bas/error.hpp"
#include "bas/fusion.hpp"
#include "bas/geo.hpp"
#include "bas/time.hpp"

// Detection database: append-only NDJSON log, grid spatial index, watch-box
// registry and arrival / departure / count events.

namespace bas {

// ---------------------------------------------------------------------------
// Watch boxes

struct WatchBox {
  std::string watch_id;
  GeoBox geo;
  std::string class_name;
  Timestamp created_at{};
  double match_iou = 0.1;
  double match_max_center_dist_m = 50.0;
  friend bool operator==(const WatchBox&, const WatchBox&) = default;
};

inline void validate(const WatchBox& w) {
  if (w.watch_id.empty()) throw InvalidArgument("watch box without an id");
  validate(w.geo);
  if (w.class_name.empty()) throw InvalidArgument("watch box " + w.watch_id + ": empty class");
  if (!(w.match_iou > 0.0 && w.match_iou <= 1.0))
    throw InvalidArgument("watch box " + w.watch_id + ": match_iou must lie in (0, 1]");
  if (!(w.match_max_center_dist_m > 0.0))
    throw InvalidArgument("watch box " + w.watch_id + ": match distance must be positive");
}

inline void to_json(nlohmann::json& j, const WatchBox& w) {
  j = {{"watch_id", w.watch_id},
       {"geo", w.geo},
       {"class", w.class_name},
       {"created_at", to_rfc3339(w.created_at)},
       {"match_iou", w.match_iou},
       {"match_max_center_dist_m", w.match_max_center_dist_m}};
}

inline void from_json(const nlohmann::json& j, WatchBox& w) {
  w.watch_id = j.at("watch_id").get<std::string>();
  w.geo = j.at("geo").get<GeoBox>();
  w.class_name = j.at("class").get<std::string>();
  w.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
  w.match_iou = j.value("match_iou", 0.1);
  w.match_max_center_dist_m = j.value("match_max_center_dist_m", 50.0);
}

enum class WatchEventKind { Arrival, Departure, Count };

inline std::string_view to_string(WatchEventKind k) noexcept {
  switch (k) {
    case WatchEventKind::Arrival: return "ARRIVAL";
    case WatchEventKind::Departure: return "DEPARTURE";
    case WatchEventKind::Count: return "COUNT";
  }
  return "?";
}

struct WatchEvent {
  std::string watch_id;
  WatchEventKind kind = WatchEventKind::Count;
  Timestamp epoch{};
  std::optional<std::string> detection_ref;
  std::optional<std::size_t> count;
  friend bool operator==(const WatchEvent&, const WatchEvent&) = default;
};

inline void to_json(nlohmann::json& j, const WatchEvent& e) {
  j = {{"watch_id", e.watch_id}, {"kind", to_string(e.kind)}, {"epoch", to_rfc3339(e.epoch)}};
  if (e.detection_ref) j["detection_ref"] = *e.detection_ref;
  if (e.count) j["count"] = *e.count;
}

/// One observation of a watch box.
struct WatchEpoch {
  Timestamp epoch{};
  std::vector<GeoDetection> detections;
};

namespace detail {

inline bool watch_match(const WatchBox& w, const GeoDetection& a, const GeoDetection& b,
                        double& iou_out, double& dist_out) {
  iou_out = iou(a.geo, b.geo);
  dist_out = distance_m(a.geo.center(), b.geo.center());
  return iou_out >= w.match_iou || dist_out <= w.match_max_center_dist_m;
}

}  // namespace detail

/// Events for `watch` over `epochs` (strictly ascending). Detections count
/// when their class matches and their centre lies inside the box. The first
/// epoch yields only its COUNT; later epochs yield DEPARTUREs, ARRIVALs and a
/// COUNT. Epoch-to-epoch pairing is greedy: qualifying pairs (IoU >=
/// match_iou or centre distance <= match_max_center_dist_m) are taken by
/// descending IoU, then ascending distance, then detection id.
inline std::vector<WatchEvent> derive_watch_events(const WatchBox& watch,
                                                   std::span<const WatchEpoch> epochs) {
  for (std::size_t k = 1; k < epochs.size(); ++k)
    if (!(epochs[k - 1].epoch < epochs[k].epoch))
      throw InvalidArgument("derive_watch_events: epochs must be strictly ascending");

  std::vector<WatchEvent> out;
  std::vector<const GeoDetection*> prev;
  for (std::size_t k = 0; k < epochs.size(); ++k) {
    std::vector<const GeoDetection*> cur;
    for (const auto& d : epochs[k].detections)
      if (d.class_name == watch.class_name && watch.geo.contains(d.geo.center()))
        cur.push_back(&d);
    std::sort(cur.begin(), cur.end(), [](const GeoDetection* a, const GeoDetection* b) {
      return a->detection_id < b->detection_id;
    });

    const Timestamp t = epochs[k].epoch;
    if (k > 0) {
      struct Pair {
        double iou, dist;
        std::size_t p, c;
      };
      std::vector<Pair> pairs;
      for (std::size_t p = 0; p < prev.size(); ++p)
        for (std::size_t c = 0; c < cur.size(); ++c) {
          double v = 0.0, dm = 0.0;
          if (detail::watch_match(watch, *prev[p], *cur[c], v, dm)) pairs.push_back({v, dm, p, c});
        }
      std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.p != b.p) return a.p < b.p;
        return a.c < b.c;
      });
      std::vector<char> pm(prev.size(), 0), cm(cur.size(), 0);
      for (const Pair& pr : pairs) {
        if (pm[pr.p] || cm[pr.c]) continue;
        pm[pr.p] = cm[pr.c] = 1;
      }
      for (std::size_t p = 0; p < prev.size(); ++p)
        if (!pm[p])
          out.push_back({watch.watch_id, WatchEventKind::Departure, t, prev[p]->detection_id, {}});
      for (std::size_t c = 0; c < cur.size(); ++c)
        if (!cm[c])
          out.push_back({watch.watch_id, WatchEventKind::Arrival, t, cur[c]->detection_id, {}});
    }
    out.push_back({watch.watch_id, WatchEventKind::Count, t, {}, cur.size()});
    prev = std::move(cur);
  }
  return out;
}

inline std::vector<WatchEvent> derive_watch_events(const WatchBox& watch,
                                                   const std::vector<WatchEpoch>& epochs) {
  return derive_watch_events(watch, std::span<const WatchEpoch>(epochs));
}

// ---------------------------------------------------------------------------
// Detection store

struct DetectionQuery {
  GeoBox bbox;
  std::optional<std::string> class_name;
  std::optional<TimeRange> window;
  std::optional<double> min_score;
};

/// True when `d` satisfies `q`. Boxes match on closed intersection.
inline bool matches(const DetectionQuery& q, const GeoDetection& d) noexcept {
  if (!d.geo.intersects(q.bbox)) return false;
  if (q.class_name && d.class_name != *q.class_name) return false;
  if (q.window && !q.window->contains(d.captured_at)) return false;
  if (q.min_score && d.score < *q.min_score) return false;
  return true;
}

/// Stored epoch of a watch box: detection ids observed at `epoch`.
struct WatchEpochRecord {
  std::string watch_id;
  Timestamp epoch{};
  std::vector<std::string> detection_ids;
};

class DetectionStore;

/// Outcome of a tolerant load: everything before the first bad line.
struct Recovery;

class DetectionStore {
 public:
  DetectionStore() = default;

  /// Opens (creating if needed) an append-only log at `path`; existing
  /// records are replayed.
  explicit DetectionStore(std::filesystem::path path) {
    if (std::filesystem::exists(path)) load_into(*this, path, /*strict=*/true, nullptr);
    path_ = std::move(path);
  }

  DetectionStore(const DetectionStore& o) {
    std::shared_lock lock(o.mu_);
    copy_from(o);
  }
  DetectionStore& operator=(const DetectionStore& o) {
    if (this != &o) {
      std::unique_lock a(mu_, std::defer_lock);
      std::shared_lock b(o.mu_, std::defer_lock);
      std::lock(a, b);
      copy_from(o);
    }
    return *this;
  }
  DetectionStore(DetectionStore&& o) noexcept { move_from(std::move(o)); }
  DetectionStore& operator=(DetectionStore&& o) noexcept {
    if (this != &o) move_from(std::move(o));
    return *this;
  }

  const std::optional<std::filesystem::path>& path() const noexcept { return path_; }

  /// Appends new detections as one atomic batch. Ids already stored (or
  /// repeated within the batch) are skipped. Returns the number added.
  std::size_t insert(std::span<const GeoDetection> dets) {
    for (const auto& d : dets) validate(d);
    std::unique_lock lock(mu_);
    std::vector<const GeoDetection*> fresh;
    std::unordered_set<std::string> seen;
    for (const auto& d : dets)
      if (!by_id_.count(d.detection_id) && seen.insert(d.detection_id).second)
        fresh.push_back(&d);
    if (fresh.empty()) return 0;
    if (path_) {
      std::string buf;
      for (const auto* d : fresh) buf += nlohmann::json(*d).dump() + "\n";
      append_log(buf);
    }
    for (const auto* d : fresh) add_unlocked(*d);
    return fresh.size();
  }

  std::size_t insert(const std::vector<GeoDetection>& dets) {
    return insert(std::span<const GeoDetection>(dets));
  }

  /// Stored detections matching `q`, score descending, ties by id.
  std::vector<GeoDetection> query(const DetectionQuery& q) const {
    validate(q.bbox);
    std::shared_lock lock(mu_);
    std::vector<std::uint32_t> cand(large_);
    const auto x0 = cell(q.bbox.lon_min), x1 = cell(q.bbox.lon_max);
    const auto y0 = cell(q.bbox.lat_min), y1 = cell(q.bbox.lat_max);
    const double span = double(x1 - x0 + 1) * double(y1 - y0 + 1);
    if (span > double(cells_.size())) {
      for (const auto& [k, v] : cells_) {
        const auto [cx, cy] = unkey(k);
        if (cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1) cand.insert(cand.end(), v.begin(), v.end());
      }
    } else {
      for (auto y = y0; y <= y1; ++y)
        for (auto x = x0; x <= x1; ++x)
          if (auto it = cells_.find(key(x, y)); it != cells_.end())
            cand.insert(cand.end(), it->second.begin(), it->second.end());
    }
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    std::vector<GeoDetection> out;
    for (auto i : cand)
      if (matches(q, dets_[i])) out.push_back(dets_[i]);
    std::sort(out.begin(), out.end(), score_order);
    return out;
  }

  std::optional<GeoDetection> find(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return dets_[it->second];
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return dets_.size();
  }

  /// Every detection in insertion order.
  std::vector<GeoDetection> all() const {
    std::shared_lock lock(mu_);
    return dets_;
  }

  // Watch boxes -------------------------------------------------------------

  void add_watch(const WatchBox& w) {
    validate(w);
    std::unique_lock lock(mu_);
    if (watches_.count(w.watch_id))
      throw InvalidArgument("watch box " + w.watch_id + " already exists");
    if (path_) {
      nlohmann::json j = w;
      j["record"] = "watchbox";
      append_log(j.dump() + "\n");
    }
    watches_[w.watch_id] = w;
    watch_order_.push_back(w.watch_id);
  }

  std::vector<WatchBox> watches() const {
    std::shared_lock lock(mu_);
    std::vector<WatchBox> out;
    for (const auto& id : watch_order_) out.push_back(watches_.at(id));
    return out;
  }

  std::optional<WatchBox> watch(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = watches_.find(id);
    if (it == watches_.end()) return std::nullopt;
    return it->second;
  }

  /// Records that `detection_ids` (already stored) were observed by the
  /// watch at `epoch`. Epochs per watch must be strictly ascending.
  void record_epoch(const std::string& watch_id, Timestamp epoch,
                    std::vector<std::string> detection_ids) {
    std::unique_lock lock(mu_);
    if (!watches_.count(watch_id)) throw NotFound("unknown watch box " + watch_id);
    auto& eps = epochs_[watch_id];
    if (!eps.empty() && !(eps.back().epoch < epoch))
      throw InvalidArgument("watch " + watch_id + ": epochs must be strictly ascending");
    for (const auto& id : detection_ids)
      if (!by_id_.count(id)) throw InvalidArgument("watch epoch references unknown detection " + id);
    WatchEpochRecord rec{watch_id, epoch, std::move(detection_ids)};
    if (path_) append_log(epoch_json(rec).dump() + "\n");
    eps.push_back(std::move(rec));
  }

  std::vector<WatchEpochRecord> epochs(const std::string& watch_id) const {
    std::shared_lock lock(mu_);
    if (!watches_.count(watch_id)) throw NotFound("unknown watch box " + watch_id);
    auto it = epochs_.find(watch_id);
    return it == epochs_.end() ? std::vector<WatchEpochRecord>{} : it->second;
  }

  /// Events derived from the stored epochs of a watch box.
  std::vector<WatchEvent> events(const std::string& watch_id) const {
    std::shared_lock lock(mu_);
    auto w = watches_.find(watch_id);
    if (w == watches_.end()) throw NotFound("unknown watch box " + watch_id);
    std::vector<WatchEpoch> eps;
    if (auto it = epochs_.find(watch_id); it != epochs_.end()) {
      for (const auto& r : it->second) {
        WatchEpoch e{r.epoch, {}};
        for (const auto& id : r.detection_ids) e.detections.push_back(dets_[by_id_.at(id)]);
        eps.push_back(std::move(e));
      }
    }
    return derive_watch_events(w->second, eps);
  }

  // Persistence -------------------------------------------------------------

  /// Writes every record to `path` (replacing it atomically).
  void persist(const std::filesystem::path& path) const {
    std::shared_lock lock(mu_);
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw Error("persist: cannot open " + tmp);
      write_records(f);
      f.flush();
      if (!f) throw Error("persist: write to " + tmp + " failed");
    }
    std::filesystem::rename(tmp, path);
  }

  /// Strict load; throws FormatError naming the first bad line.
  static DetectionStore restore(const std::filesystem::path& path) {
    DetectionStore s;
    load_into(s, path, /*strict=*/true, nullptr);
    return s;
  }

  static Recovery recover(const std::filesystem::path& path);

 private:
  static constexpr double kCellDeg = 0.01;
  static constexpr double kMaxCells = 256;

  static std::int64_t cell(double v) noexcept {
    return static_cast<std::int64_t>(std::floor(v / kCellDeg));
  }
  static std::uint64_t key(std::int64_t x, std::int64_t y) noexcept {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)) << 32) |
           static_cast<std::uint32_t>(y);
  }
  static std::pair<std::int64_t, std::int64_t> unkey(std::uint64_t k) noexcept {
    return {static_cast<std::int32_t>(k >> 32), static_cast<std::int32_t>(k & 0xffffffffu)};
  }

  static nlohmann::json epoch_json(const WatchEpochRecord& r) {
    return {{"record", "watch_epoch"},
            {"watch_id", r.watch_id},
            {"epoch", to_rfc3339(r.epoch)},
            {"detection_ids", r.detection_ids}};
  }

  void add_unlocked(const GeoDetection& d) {
    const auto i = static_cast<std::uint32_t>(dets_.size());
    dets_.push_back(d);
    by_id_[d.detection_id] = i;
    const auto x0 = cell(d.geo.lon_min), x1 = cell(d.geo.lon_max);
    const auto y0 = cell(d.geo.lat_min), y1 = cell(d.geo.lat_max);
    if (double(x1 - x0 + 1) * double(y1 - y0 + 1) > kMaxCells) {
      large_.push_back(i);
      return;
    }
    for (auto y = y0; y <= y1; ++y)
      for (auto x = x0; x <= x1; ++x) cells_[key(x, y)].push_back(i);
  }

  void append_log(const std::string& buf) {
    std::FILE* f = std::fopen(path_->c_str(), "ab");
    if (!f) throw Error("store: cannot open log " + path_->string());
    const bool ok = std::fwrite(buf.data(), 1, buf.size(), f) == buf.size() && std::fflush(f) == 0;
    std::fclose(f);
    if (!ok) throw Error("store: write to " + path_->string() + " failed");
  }

  void write_records(std::ostream& os) const {
    // Watch boxes first, then detections, then epochs: every reference
    // points backwards, so any prefix replays cleanly.
    for (const auto& id : watch_order_) {
      nlohmann::json j = watches_.at(id);
      j["record"] = "watchbox";
      os << j.dump() << '\n';
    }
    for (const auto& d : dets_) os << nlohmann::json(d).dump() << '\n';
    for (const auto& id : watch_order_)
      if (auto it = epochs_.find(id); it != epochs_.end())
        for (const auto& r : it->second) os << epoch_json(r).dump() << '\n';
  }

  // Replays `path` into `s` (which has no log attached). Strict mode throws
  // on the first bad line; otherwise stops there and reports it.
  static void load_into(DetectionStore& s, const std::filesystem::path& path, bool strict,
                        std::optional<FormatError>* first_error) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("restore: cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        s.replay_line(line);
      } catch (const std::exception& e) {
        FormatError err(path.string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        if (strict) throw err;
        if (first_error) *first_error = err;
        return;
      }
    }
  }

  void replay_line(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw FormatError("record is not an object");
    const std::string kind = j.value("record", "detection");
    if (kind == "detection") {
      GeoDetection d = j.get<GeoDetection>();
      validate(d);
      if (!by_id_.count(d.detection_id)) add_unlocked(d);
    } else if (kind == "watchbox") {
      WatchBox w = j.get<WatchBox>();
      validate(w);
      if (watches_.count(w.watch_id)) throw FormatError("duplicate watch box " + w.watch_id);
      watches_[w.watch_id] = w;
      watch_order_.push_back(w.watch_id);
    } else if (kind == "watch_epoch") {
      WatchEpochRecord r{j.at("watch_id").get<std::string>(),
                         parse_rfc3339(j.at("epoch").get<std::string>()),
                         j.at("detection_ids").get<std::vector<std::string>>()};
      if (!watches_.count(r.watch_id)) throw FormatError("epoch for unknown watch " + r.watch_id);
      for (const auto& id : r.detection_ids)
        if (!by_id_.count(id)) throw FormatError("epoch references unknown detection " + id);
      auto& eps = epochs_[r.watch_id];
      if (!eps.empty() && !(eps.back().epoch < r.epoch))
        throw FormatError("watch epochs out of order for " + r.watch_id);
      eps.push_back(std::move(r));
    } else {
      throw FormatError("unknown record type '" + kind + "'");
    }
  }

  void copy_from(const DetectionStore& o) {
    path_ = o.path_;
    dets_ = o.dets_;
    by_id_ = o.by_id_;
    cells_ = o.cells_;
    large_ = o.large_;
    watches_ = o.watches_;
    watch_order_ = o.watch_order_;
    epochs_ = o.epochs_;
  }
  void move_from(DetectionStore&& o) {
    path_ = std::move(o.path_);
    dets_ = std::move(o.dets_);
    by_id_ = std::move(o.by_id_);
    cells_ = std::move(o.cells_);
    large_ = std::move(o.large_);
    watches_ = std::move(o.watches_);
    watch_order_ = std::move(o.watch_order_);
    epochs_ = std::move(o.epochs_);
  }

  mutable std::shared_mutex mu_;
  std::optional<std::filesystem::path> path_;
  std::vector<GeoDetection> dets_;
  std::unordered_map<std::string, std::uint32_t> by_id_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
  std::vector<std::uint32_t> large_;
  std::map<std::string, WatchBox> watches_;
  std::vector<std::string> watch_order_;
  std::map<std::string, std::vector<WatchEpochRecord>> epochs_;
};

struct Recovery {
  DetectionStore store;
  /// Set when loading stopped early.
  std::optional<FormatError> error;
};

/// Tolerant load: keeps every record before the first bad line.
inline Recovery DetectionStore::recover(const std::filesystem::path& path) {
  Recovery r;
  load_into(r.store, path, /*strict=*/false, &r.error);
  return r;
}

}  // namespace bas
