#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bas/detector.hpp"
#include "bas/error.hpp"
#include "bas/fusion.hpp"
#include "bas/geo.hpp"
#include "bas/hash.hpp"
#include "bas/imagery.hpp"

// Detection accuracy: one-to-one matching, precision / recall / F1,
// precision-recall curves, average precision and operating-point selection.
// Matching is generic over the box type; anything with an `iou(a, b)` found by
// ADL works (PixelBox and GeoBox in practice).

namespace bas {

inline constexpr double kDefaultIou = 0.5;
/// Relaxed localization preset for blob-like targets whose extents are
/// ambiguous to label.
inline constexpr double kRelaxedLocalizationIou = 0.2;

template <class Box>
struct Prediction {
  std::string id;
  std::string class_name;
  double score = 0.0;
  Box box;
};

template <class Box>
struct Truth {
  std::string class_name;
  Box box;
};

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  friend bool operator==(const MatchCounts&, const MatchCounts&) = default;
};

enum class MatchLabel { TruePositive, FalsePositive, BelowThreshold };

struct MatchResult {
  MatchCounts counts;
  std::vector<MatchLabel> labels;                    // per prediction, input order
  std::vector<std::optional<std::size_t>> matched;   // truth index per prediction
};

namespace detail {

template <class Box>
std::vector<std::size_t> score_rank(std::span<const Prediction<Box>> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
    return preds[a].id < preds[b].id;
  });
  return order;
}

// Best unmatched same-class truth for `p`, or none if below the IoU bar.
// Ties go to the lower truth index.
template <class Box>
std::optional<std::size_t> best_truth(const Prediction<Box>& p, std::span<const Truth<Box>> truths,
                                      const std::vector<char>& taken, double iou_threshold) {
  std::optional<std::size_t> best;
  double best_iou = -1.0;
  for (std::size_t t = 0; t < truths.size(); ++t) {
    if (taken[t] || truths[t].class_name != p.class_name) continue;
    const double v = iou(p.box, truths[t].box);
    if (v >= iou_threshold && v > best_iou) {
      best_iou = v;
      best = t;
    }
  }
  return best;
}

}  // namespace detail

/// Greedy one-to-one matching. Predictions scoring below `score_threshold`
/// are ignored; the rest are visited by descending score (ties by id) and
/// claim the unmatched same-class truth of highest IoU, if that IoU reaches
/// `iou_threshold`.
template <class Box>
MatchResult match_detections(std::span<const Prediction<Box>> preds,
                             std::span<const Truth<Box>> truths, double iou_threshold,
                             double score_threshold = 0.0) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw InvalidArgument("match_detections: iou threshold must lie in (0, 1]");
  MatchResult r;
  r.labels.assign(preds.size(), MatchLabel::BelowThreshold);
  r.matched.assign(preds.size(), std::nullopt);
  std::vector<char> taken(truths.size(), 0);
  for (std::size_t i : detail::score_rank(preds)) {
    if (preds[i].score < score_threshold) continue;
    if (auto t = detail::best_truth(preds[i], truths, taken, iou_threshold)) {
      taken[*t] = 1;
      r.matched[i] = t;
      r.labels[i] = MatchLabel::TruePositive;
      ++r.counts.tp;
    } else {
      r.labels[i] = MatchLabel::FalsePositive;
      ++r.counts.fp;
    }
  }
  r.counts.fn = truths.size() - r.counts.tp;
  return r;
}

template <class Box>
MatchResult match_detections(const std::vector<Prediction<Box>>& preds,
                             const std::vector<Truth<Box>>& truths, double iou_threshold,
                             double score_threshold = 0.0) {
  return match_detections(std::span<const Prediction<Box>>(preds),
                          std::span<const Truth<Box>>(truths), iou_threshold, score_threshold);
}

/// Precision, recall and F1. When TP+FP = 0 precision is taken as 1, when
/// TP+FN = 0 recall is taken as 1, and F1 is 0 if both are 0; the flags
/// record when a convention was applied.
struct Metrics {
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;
  bool precision_vacuous = false;
  bool recall_vacuous = false;
};

inline double f1_of(double p, double r) noexcept { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline Metrics compute_metrics(const MatchCounts& c) noexcept {
  Metrics m;
  m.precision_vacuous = c.tp + c.fp == 0;
  m.recall_vacuous = c.tp + c.fn == 0;
  m.precision = m.precision_vacuous ? 1.0 : double(c.tp) / double(c.tp + c.fp);
  m.recall = m.recall_vacuous ? 1.0 : double(c.tp) / double(c.tp + c.fn);
  m.f1 = f1_of(m.precision, m.recall);
  return m;
}

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

/// One point per distinct prediction score, thresholds descending. Greedy
/// matching of a score prefix does not depend on lower-scored predictions,
/// so a single pass yields every point.
template <class Box>
std::vector<PRPoint> pr_curve(std::span<const Prediction<Box>> preds,
                              std::span<const Truth<Box>> truths, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw InvalidArgument("pr_curve: iou threshold must lie in (0, 1]");
  std::vector<PRPoint> curve;
  const auto order = detail::score_rank(preds);
  std::vector<char> taken(truths.size(), 0);
  MatchCounts c;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& p = preds[order[k]];
    if (auto t = detail::best_truth(p, truths, taken, iou_threshold)) {
      taken[*t] = 1;
      ++c.tp;
    } else {
      ++c.fp;
    }
    const bool group_end = k + 1 == order.size() || preds[order[k + 1]].score != p.score;
    if (group_end) {
      c.fn = truths.size() - c.tp;
      const Metrics m = compute_metrics(c);
      curve.push_back({p.score, m.precision, m.recall});
    }
  }
  return curve;
}

template <class Box>
std::vector<PRPoint> pr_curve(const std::vector<Prediction<Box>>& preds,
                              const std::vector<Truth<Box>>& truths, double iou_threshold) {
  return pr_curve(std::span<const Prediction<Box>>(preds), std::span<const Truth<Box>>(truths),
                  iou_threshold);
}

/// All-point interpolated AP: sum over curve points of the recall increment
/// times the precision envelope (best precision at any recall >= r_i), r_0 = 0.
inline double average_precision(std::span<const PRPoint> curve) noexcept {
  if (curve.empty()) return 0.0;
  std::vector<double> envelope(curve.size());
  double best = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    best = std::max(best, curve[i].precision);
    envelope[i] = best;
  }
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_r) * envelope[i];
    prev_r = curve[i].recall;
  }
  return ap;
}

inline double mean_average_precision(const std::map<std::string, double>& ap_per_class) {
  if (ap_per_class.empty()) throw InvalidArgument("mean_average_precision: no classes");
  double s = 0.0;
  for (const auto& [k, v] : ap_per_class) s += v;
  return s / double(ap_per_class.size());
}

struct OperatingPoint {
  double threshold = 0.0;
  Metrics metrics;
};

/// Curve point of maximum F1; ties resolve to the higher threshold.
inline OperatingPoint f1_max_threshold(std::span<const PRPoint> curve) {
  if (curve.empty()) throw InvalidArgument("f1_max_threshold: empty curve");
  std::size_t best = 0;
  double best_f1 = -1.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const double f = f1_of(curve[i].precision, curve[i].recall);
    if (f > best_f1 || (f == best_f1 && curve[i].threshold > curve[best].threshold)) {
      best_f1 = f;
      best = i;
    }
  }
  OperatingPoint op;
  op.threshold = curve[best].threshold;
  op.metrics.precision = curve[best].precision;
  op.metrics.recall = curve[best].recall;
  op.metrics.f1 = best_f1;
  return op;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
  MatchCounts counts;
  Metrics metrics;
  std::vector<PRPoint> curve;
  std::map<std::string, double> ap_per_class;
  double map_score = 0.0;
  double iou_threshold = kDefaultIou;
  double f1_max_threshold = 0.0;
  /// Counts over every prediction, before the operating threshold.
  MatchCounts counts_all;
};

/// Full report: per-class AP, mAP, the pooled curve, and counts at the F1-max
/// operating threshold of the pooled curve.
template <class Box>
MetricsReport evaluate(std::span<const Prediction<Box>> preds, std::span<const Truth<Box>> truths,
                       double iou_threshold) {
  MetricsReport rep;
  rep.iou_threshold = iou_threshold;
  rep.curve = pr_curve(preds, truths, iou_threshold);

  std::set<std::string> classes;
  for (const auto& t : truths) classes.insert(t.class_name);
  for (const auto& p : preds) classes.insert(p.class_name);
  for (const auto& cls : classes) {
    std::vector<Prediction<Box>> cp;
    std::vector<Truth<Box>> ct;
    for (const auto& p : preds)
      if (p.class_name == cls) cp.push_back(p);
    for (const auto& t : truths)
      if (t.class_name == cls) ct.push_back(t);
    rep.ap_per_class[cls] = average_precision(pr_curve(
        std::span<const Prediction<Box>>(cp), std::span<const Truth<Box>>(ct), iou_threshold));
  }
  rep.map_score = rep.ap_per_class.empty() ? 0.0 : mean_average_precision(rep.ap_per_class);

  rep.counts_all = match_detections(preds, truths, iou_threshold, 0.0).counts;
  if (rep.curve.empty()) {
    rep.f1_max_threshold = 1.0;
    rep.counts = rep.counts_all;
  } else {
    rep.f1_max_threshold = f1_max_threshold(rep.curve).threshold;
    rep.counts = match_detections(preds, truths, iou_threshold, rep.f1_max_threshold).counts;
  }
  rep.metrics = compute_metrics(rep.counts);
  return rep;
}

template <class Box>
MetricsReport evaluate(const std::vector<Prediction<Box>>& preds,
                       const std::vector<Truth<Box>>& truths, double iou_threshold) {
  return evaluate(std::span<const Prediction<Box>>(preds), std::span<const Truth<Box>>(truths),
                  iou_threshold);
}

inline std::vector<Prediction<GeoBox>> to_predictions(std::span<const GeoDetection> dets) {
  std::vector<Prediction<GeoBox>> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back({d.detection_id, d.class_name, d.score, d.geo});
  return out;
}

inline std::vector<Truth<GeoBox>> to_truths(const LabeledDataset& ds) {
  std::vector<Truth<GeoBox>> out;
  for (const auto& im : ds.images)
    for (const auto& l : im.labels) out.push_back({l.class_name, l.geo});
  return out;
}

inline void to_json(nlohmann::json& j, const MatchCounts& c) {
  j = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
}

inline void to_json(nlohmann::json& j, const Metrics& m) {
  j = {{"precision", m.precision},
       {"recall", m.recall},
       {"f1", m.f1},
       {"precision_vacuous", m.precision_vacuous},
       {"recall_vacuous", m.recall_vacuous}};
}

inline void to_json(nlohmann::json& j, const PRPoint& p) {
  j = {{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}};
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"counts", r.counts},
       {"counts_all", r.counts_all},
       {"metrics", r.metrics},
       {"curve", r.curve},
       {"ap_per_class", r.ap_per_class},
       {"map_score", r.map_score},
       {"iou_threshold", r.iou_threshold},
       {"f1_max_threshold", r.f1_max_threshold}};
}

/// Tab-separated PR points, one per line, for plotting.
inline std::string curve_table(std::span<const PRPoint> curve) {
  std::string out = "threshold\tprecision\trecall\n";
  char buf[96];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.6f\t%.6f\n", p.threshold, p.precision, p.recall);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified splitting

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::array<double, 3> ratios{0.7, 0.2, 0.1};
  std::uint64_t seed = 0;
  /// region -> {train, validation, test} image counts
  std::map<std::string, std::array<std::size_t, 3>> per_region;
  std::vector<std::string> warnings;
};

/// Largest-remainder apportionment of `n` over `ratios`. Equal remainders go
/// to the earlier part.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int k = 0; k < 3; ++k) {
    const double q = double(n) * ratios[k];
    out[k] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[k] = q - double(out[k]);
    used += out[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t i = 0; used < n; ++i, ++used) ++out[order[i % 3]];
  return out;
}

namespace detail {

// Can every remaining row deficit be met by distinct allowed columns, with
// column k taking exactly col_need[k] rows? Bipartite matching over column
// slots.
inline bool rounding_feasible(const std::vector<std::size_t>& row_need,
                              const std::array<std::size_t, 3>& col_need,
                              const std::vector<std::array<bool, 3>>& allowed) {
  std::size_t total_rows = 0, total_cols = 0;
  for (auto r : row_need) total_rows += r;
  for (auto c : col_need) total_cols += c;
  if (total_rows != total_cols) return false;
  // Each row needs at most one ceiling per column, so expand rows into units.
  std::vector<std::size_t> units;
  for (std::size_t r = 0; r < row_need.size(); ++r)
    for (std::size_t u = 0; u < row_need[r]; ++u) units.push_back(r);
  std::vector<int> slot_col;
  for (int k = 0; k < 3; ++k)
    for (std::size_t u = 0; u < col_need[k]; ++u) slot_col.push_back(k);
  std::vector<long> slot_owner(slot_col.size(), -1);
  auto can_use = [&](std::size_t unit, std::size_t slot) {
    const std::size_t r = units[unit];
    if (!allowed[r][slot_col[slot]]) return false;
    // A row may not take two slots of the same column.
    for (std::size_t s2 = 0; s2 < slot_col.size(); ++s2)
      if (s2 != slot && slot_col[s2] == slot_col[slot] && slot_owner[s2] >= 0 &&
          units[slot_owner[s2]] == r)
        return false;
    return true;
  };
  std::function<bool(std::size_t, std::vector<char>&)> augment =
      [&](std::size_t unit, std::vector<char>& seen) {
        for (std::size_t s = 0; s < slot_col.size(); ++s) {
          if (seen[s] || !can_use(unit, s)) continue;
          seen[s] = 1;
          if (slot_owner[s] < 0 || augment(static_cast<std::size_t>(slot_owner[s]), seen)) {
            slot_owner[s] = static_cast<long>(unit);
            return true;
          }
        }
        return false;
      };
  for (std::size_t u = 0; u < units.size(); ++u) {
    std::vector<char> seen(slot_col.size(), 0);
    if (!augment(u, seen)) return false;
  }
  return true;
}

}  // namespace detail

/// Per-region seeded shuffle and partition. Every region/part count is the
/// floor or ceiling of its exact share, each region's counts sum to its size,
/// and the part totals equal the largest-remainder apportionment of the whole
/// dataset. Ceilings go first to the smallest parts, then to the largest
/// remainder, then to the largest region.
inline DatasetSplit stratified_split(const LabeledDataset& ds, std::array<double, 3> ratios,
                                     std::uint64_t seed) {
  for (double r : ratios)
    if (!(r > 0.0)) throw InvalidArgument("stratified_split: ratios must be positive");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw InvalidArgument("stratified_split: ratios must sum to 1");

  DatasetSplit split;
  split.ratios = ratios;
  split.seed = seed;
  const auto regions = ds.regions();

  std::map<std::string, std::vector<std::string>> ids;
  for (const auto& im : ds.images) ids[im.region_name].push_back(im.image_id);

  const std::size_t nr = regions.size();
  std::vector<std::array<std::size_t, 3>> floors(nr);
  std::vector<std::array<double, 3>> frac(nr);
  std::vector<std::array<bool, 3>> allowed(nr);
  std::vector<std::size_t> row_need(nr);
  std::array<std::size_t, 3> col_floor{};
  for (std::size_t r = 0; r < nr; ++r) {
    const std::size_t n = ids[regions[r]].size();
    if (n < 3)
      split.warnings.push_back("region '" + regions[r] + "' has " + std::to_string(n) +
                               " images; some split parts will be empty");
    std::size_t used = 0;
    for (int k = 0; k < 3; ++k) {
      const double e = double(n) * ratios[k];
      floors[r][k] = static_cast<std::size_t>(std::floor(e + 1e-9));
      frac[r][k] = std::max(0.0, e - double(floors[r][k]));
      allowed[r][k] = frac[r][k] > 1e-9;
      used += floors[r][k];
      col_floor[k] += floors[r][k];
    }
    row_need[r] = n - used;
  }
  const auto target = apportion(ds.images.size(), ratios);
  std::array<std::size_t, 3> col_need{};
  for (int k = 0; k < 3; ++k) col_need[k] = target[k] - std::min(target[k], col_floor[k]);

  std::vector<std::array<std::size_t, 3>> counts = floors;
  std::array<int, 3> parts{0, 1, 2};
  std::stable_sort(parts.begin(), parts.end(), [&](int a, int b) { return ratios[a] < ratios[b]; });
  bool ok = detail::rounding_feasible(row_need, col_need, allowed);
  for (int k : parts) {
    if (!ok) break;
    std::vector<std::size_t> cand;
    for (std::size_t r = 0; r < nr; ++r)
      if (row_need[r] > 0 && allowed[r][k]) cand.push_back(r);
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
      if (std::abs(frac[a][k] - frac[b][k]) > 1e-9) return frac[a][k] > frac[b][k];
      return ids[regions[a]].size() > ids[regions[b]].size();
    });
    while (col_need[k] > 0) {
      bool placed = false;
      for (std::size_t r : cand) {
        if (row_need[r] == 0 || !allowed[r][k]) continue;
        auto rn = row_need;
        auto cn = col_need;
        auto al = allowed;
        --rn[r];
        --cn[k];
        al[r][k] = false;
        if (!detail::rounding_feasible(rn, cn, al)) continue;
        row_need = rn;
        col_need = cn;
        allowed = al;
        ++counts[r][k];
        placed = true;
        break;
      }
      if (!placed) {
        ok = false;
        break;
      }
    }
  }
  if (!ok) {
    // Not reachable for ratios that apportion cleanly; fall back to
    // independent per-region rounding.
    for (std::size_t r = 0; r < nr; ++r) counts[r] = apportion(ids[regions[r]].size(), ratios);
  }

  for (std::size_t ri = 0; ri < nr; ++ri) {
    const auto& r = regions[ri];
    auto& v = ids[r];
    std::sort(v.begin(), v.end());
    std::mt19937_64 rng(hash_values(seed, hash_string(r)));
    std::shuffle(v.begin(), v.end(), rng);
    const auto& c = counts[ri];
    split.per_region[r] = c;
    auto it = v.begin();
    split.train.insert(split.train.end(), it, it + c[0]);
    it += c[0];
    split.validation.insert(split.validation.end(), it, it + c[1]);
    it += c[1];
    split.test.insert(split.test.end(), it, it + c[2]);
  }
  return split;
}

inline void to_json(nlohmann::json& j, const DatasetSplit& s) {
  j = {{"ratios", s.ratios},
       {"seed", s.seed},
       {"counts", {{"train", s.train.size()}, {"validation", s.validation.size()},
                   {"test", s.test.size()}}},
       {"per_region", s.per_region},
       {"train", s.train},
       {"validation", s.validation},
       {"test", s.test},
       {"warnings", s.warnings}};
}

// ---------------------------------------------------------------------------
// Blind test

struct BlindTestOptions {
  double gsd_m = 1.2;
  int tile_px = 1250;
  int overlap_px = 100;
  double nms_iou = 0.5;
  std::string class_name;  // empty: every class
};

/// Builds the oracle's ground truth from a labeled dataset so that a
/// synthetic detector can be blind-tested against it.
inline SyntheticWorld world_from_dataset(const LabeledDataset& ds, std::uint64_t seed) {
  SyntheticWorld w;
  w.seed = seed;
  bool first = true;
  std::size_t n = 0;
  for (const auto& im : ds.images) {
    if (first) {
      w.region = im.footprint;
      first = false;
    }
    w.region = {std::min(w.region.lon_min, im.footprint.lon_min),
                std::min(w.region.lat_min, im.footprint.lat_min),
                std::max(w.region.lon_max, im.footprint.lon_max),
                std::max(w.region.lat_max, im.footprint.lat_max)};
    for (const auto& l : im.labels) {
      GroundTruthObject o;
      char id[32];
      std::snprintf(id, sizeof id, "lbl-%07zu", n++);
      o.object_id = id;
      o.class_name = l.class_name;
      o.geo = l.geo;
      o.present_from = Timestamp::min();
      o.present_until = Timestamp::max();
      w.objects.push_back(std::move(o));
    }
  }
  return w;
}

/// Runs the full tile -> detect -> fuse -> match pipeline over a held-out
/// dataset. Refuses if any held-out region was used for training.
inline MetricsReport blind_test(DetectorBackend& backend, const LabeledDataset& heldout,
                                double iou_threshold,
                                const std::vector<std::string>& training_regions,
                                const BlindTestOptions& opt = {}) {
  if (heldout.images.empty()) throw InvalidArgument("blind_test: held-out dataset is empty");
  for (const auto& r : heldout.regions())
    if (std::find(training_regions.begin(), training_regions.end(), r) != training_regions.end())
      throw InvalidArgument("blind_test: region '" + r + "' was seen in training");

  std::vector<GeoDetection> fused_all;
  for (const auto& im : heldout.images) {
    const TileGrid grid = tile_aoi(im.footprint, opt.gsd_m, opt.tile_px, opt.overlap_px);
    SceneRef scene;
    scene.scene_id = im.image_id;
    scene.source = SensorSource::Synthetic;
    scene.footprint = im.footprint;
    scene.captured_at = im.captured_at.value_or(Timestamp{});
    scene.gsd_m = opt.gsd_m;
    scene.image_uri = "dataset://" + im.image_id;
    std::vector<std::vector<GeoDetection>> groups;
    for (const auto& t : grid.tiles) {
      auto raw = backend.detect(t, scene);
      if (!opt.class_name.empty())
        std::erase_if(raw, [&](const RawDetection& d) { return d.class_name != opt.class_name; });
      groups.push_back(register_detections(t, raw, scene));
    }
    auto fused = merge_detections(std::span<const std::vector<GeoDetection>>(groups), opt.nms_iou);
    fused_all.insert(fused_all.end(), fused.begin(), fused.end());
  }
  auto truths = to_truths(heldout);
  if (!opt.class_name.empty())
    std::erase_if(truths, [&](const auto& t) { return t.class_name != opt.class_name; });
  const auto preds = to_predictions(fused_all);
  return evaluate(std::span<const Prediction<GeoBox>>(preds),
                  std::span<const Truth<GeoBox>>(truths), iou_threshold);
}

}  // namespace bas
