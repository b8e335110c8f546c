#include <catch_amalgamated.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <thread>

#include "bas/store.hpp"

using namespace bas;
using Catch::Approx;

namespace fs = std::filesystem;

namespace {

GeoDetection det(std::string id, double score, GeoBox geo, std::string cls = "well",
                 Timestamp t = make_time(2020, 1, 1)) {
  GeoDetection d;
  d.detection_id = std::move(id);
  d.class_name = std::move(cls);
  d.score = score;
  d.geo = geo;
  d.tile_id = "tile";
  d.scene_id = "scene";
  d.captured_at = t;
  d.sensor = "SYNTHETIC";
  return d;
}

std::vector<GeoDetection> random_dets(std::mt19937_64& rng, std::size_t n, const std::string& prefix = "d") {
  std::uniform_real_distribution<double> lon(-1.0, 1.0), lat(40.0, 41.0), size(0.0002, 0.002), u(0, 1);
  std::uniform_int_distribution<int> cls(0, 2), day(0, 364), huge(0, 999);
  const char* names[] = {"well", "tank", "aircraft"};
  std::vector<GeoDetection> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lon(rng), y = lat(rng);
    // A few boxes span many index cells.
    const double s = huge(rng) == 0 ? 0.5 : size(rng);
    out.push_back(det(prefix + std::to_string(i), std::round(u(rng) * 100) / 100, {x, y, x + s, y + s},
                      names[cls(rng)], make_time(2020, 1, 1) + days(day(rng))));
  }
  return out;
}

std::vector<GeoDetection> scan(const std::vector<GeoDetection>& all, const DetectionQuery& q) {
  std::vector<GeoDetection> out;
  for (const auto& d : all) {
    const bool hit = d.geo.lon_min <= q.bbox.lon_max && q.bbox.lon_min <= d.geo.lon_max &&
                     d.geo.lat_min <= q.bbox.lat_max && q.bbox.lat_min <= d.geo.lat_max &&
                     (!q.class_name || d.class_name == *q.class_name) &&
                     (!q.window || (q.window->begin <= d.captured_at && d.captured_at < q.window->end)) &&
                     (!q.min_score || d.score >= *q.min_score);
    if (hit) out.push_back(d);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.detection_id < b.detection_id;
  });
  return out;
}

DetectionQuery random_query(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lon(-1.1, 1.0), lat(39.9, 41.0), size(0.001, 0.4), u(0, 1);
  std::uniform_int_distribution<int> pick(0, 3);
  DetectionQuery q;
  const double x = lon(rng), y = lat(rng);
  q.bbox = {x, y, x + size(rng), y + size(rng)};
  if (pick(rng) == 0) q.bbox = {-2, 39, 2, 42};
  if (pick(rng) == 0) q.class_name = "tank";
  if (pick(rng) == 0) q.window = TimeRange{make_time(2020, 3, 1), make_time(2020, 6, 1)};
  if (pick(rng) == 0) q.min_score = u(rng);
  return q;
}

DetectionQuery bbox_query(const GeoBox& b) {
  DetectionQuery q;
  q.bbox = b;
  return q;
}

fs::path temp_file(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

// Maximum bipartite matching size by augmenting paths.
std::size_t max_matching(const std::vector<std::vector<int>>& adj, std::size_t right) {
  std::vector<int> match(right, -1);
  std::size_t size = 0;
  for (std::size_t u = 0; u < adj.size(); ++u) {
    std::vector<char> seen(right, 0);
    std::function<bool(int)> aug = [&](int v) {
      for (int w : adj[v]) {
        if (seen[w]) continue;
        seen[w] = 1;
        if (match[w] < 0 || aug(match[w])) {
          match[w] = v;
          return true;
        }
      }
      return false;
    };
    size += aug(int(u));
  }
  return size;
}

}  // namespace

TEST_CASE("insert is idempotent", "[store]") {
  DetectionStore s;
  const std::vector<GeoDetection> three{det("a", 0.9, {0, 0, 0.001, 0.001}), det("b", 0.8, {1, 1, 1.001, 1.001}),
                                        det("c", 0.7, {2, 2, 2.001, 2.001})};
  CHECK(s.insert(three) == 3);
  CHECK(s.insert(three) == 0);
  CHECK(s.size() == 3);
  CHECK(s.insert(std::vector<GeoDetection>{}) == 0);
  const std::vector<GeoDetection> twice{det("d", 0.5, {0, 0, 1, 1}), det("d", 0.5, {0, 0, 1, 1})};
  CHECK(s.insert(twice) == 1);
  CHECK(s.find("d").has_value());
  CHECK_FALSE(s.find("zzz").has_value());

  auto bad = det("e", 1.5, {0, 0, 1, 1});
  CHECK_THROWS_AS(s.insert(std::vector<GeoDetection>{det("f", 0.5, {0, 0, 1, 1}), bad}), InvalidArgument);
  CHECK_FALSE(s.find("f").has_value());
}

TEST_CASE("query examples", "[store]") {
  DetectionStore s;
  std::mt19937_64 rng(1);
  const auto dets = random_dets(rng, 500);
  s.insert(dets);
  CHECK(s.query(bbox_query(GeoBox{-10, 30, 10, 50})).size() == 500);
  CHECK(s.query(bbox_query(GeoBox{50, 10, 51, 11})).empty());
  const auto all = s.query(bbox_query(GeoBox{-10, 30, 10, 50}));
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].score >= all[i].score);
  CHECK_THROWS_AS(s.query(bbox_query(GeoBox{1, 1, 0, 0})), InvalidArgument);
}

TEST_CASE("a demo-sized insert indexes every detection", "[store]") {
  DetectionStore s;
  std::mt19937_64 rng(3200);
  const auto dets = random_dets(rng, 3200);
  CHECK(s.insert(dets) == 3200);
  for (std::size_t i = 0; i < dets.size(); i += 97) {
    const auto hits = s.query(bbox_query(dets[i].geo));
    CHECK(std::any_of(hits.begin(), hits.end(), [&](const auto& d) { return d.detection_id == dets[i].detection_id; }));
  }
}

TEST_CASE("spatial index matches a linear scan", "[store]") {
  std::mt19937_64 rng(100000);
  const auto dets = random_dets(rng, 100000);
  DetectionStore s;
  // Several batches to exercise incremental indexing.
  for (std::size_t i = 0; i < dets.size(); i += 25000)
    s.insert(std::span<const GeoDetection>(dets.data() + i, 25000));
  REQUIRE(s.size() == 100000);
  for (int k = 0; k < 1000; ++k) {
    const auto q = random_query(rng);
    const auto got = s.query(q);
    const auto want = scan(dets, q);
    REQUIRE(got.size() == want.size());
    CHECK(got == want);
  }
}

TEST_CASE("persist and restore round trip", "[store]") {
  SECTION("empty store") {
    const auto p = temp_file("bas_store_empty.ndjson");
    DetectionStore().persist(p);
    CHECK(DetectionStore::restore(p).size() == 0);
    fs::remove(p);
  }
  SECTION("ten thousand detections with watches") {
    std::mt19937_64 rng(10);
    const auto dets = random_dets(rng, 10000);
    DetectionStore s;
    s.insert(dets);
    WatchBox w{"watch-0001", {-0.5, 40.2, 0.5, 40.8}, "well", make_time(2020, 1, 1)};
    s.add_watch(w);
    s.record_epoch("watch-0001", make_time(2020, 2, 1), {dets[0].detection_id, dets[1].detection_id});
    s.record_epoch("watch-0001", make_time(2020, 3, 1), {dets[1].detection_id});
    const auto p = temp_file("bas_store_10k.ndjson");
    s.persist(p);
    const auto r = DetectionStore::restore(p);
    CHECK(r.size() == s.size());
    CHECK(r.all() == s.all());
    CHECK(r.watches() == s.watches());
    CHECK(r.events("watch-0001") == s.events("watch-0001"));
    for (int k = 0; k < 200; ++k) {
      const auto q = random_query(rng);
      CHECK(r.query(q) == s.query(q));
    }
    fs::remove(p);
  }
}

TEST_CASE("append-only log replays on open", "[store]") {
  const auto p = temp_file("bas_store_log.ndjson");
  std::mt19937_64 rng(4);
  const auto dets = random_dets(rng, 50);
  {
    DetectionStore s(p);
    s.insert(std::vector<GeoDetection>(dets.begin(), dets.begin() + 20));
    s.add_watch({"watch-0001", {-1, 40, 1, 41}, "well", make_time(2020, 1, 1)});
    s.insert(std::vector<GeoDetection>(dets.begin() + 20, dets.end()));
    s.insert(dets);  // no-op, nothing appended
  }
  std::size_t lines = 0;
  {
    std::ifstream f(p);
    std::string line;
    while (std::getline(f, line)) ++lines;
  }
  CHECK(lines == 51);
  DetectionStore again(p);
  CHECK(again.size() == 50);
  CHECK(again.watch("watch-0001").has_value());
  again.insert(random_dets(rng, 5, "extra"));
  CHECK(DetectionStore::restore(p).size() == 55);
  fs::remove(p);
}

TEST_CASE("truncated or corrupt files", "[store]") {
  std::mt19937_64 rng(6);
  const auto dets = random_dets(rng, 30);
  DetectionStore s;
  s.insert(dets);
  const auto p = temp_file("bas_store_trunc.ndjson");
  s.persist(p);

  // Cut the file in the middle of record 21.
  std::string body;
  {
    std::ifstream f(p, std::ios::binary);
    body.assign(std::istreambuf_iterator<char>(f), {});
  }
  std::size_t pos = 0;
  for (int i = 0; i < 20; ++i) pos = body.find('\n', pos) + 1;
  {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << body.substr(0, pos + 25);
  }
  try {
    DetectionStore::restore(p);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.record() == 21);
  }
  const auto rec = DetectionStore::recover(p);
  REQUIRE(rec.error.has_value());
  CHECK(rec.error->record() == 21);
  CHECK(rec.store.size() == 20);
  CHECK(rec.store.all() == std::vector<GeoDetection>(dets.begin(), dets.begin() + 20));

  {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << body.substr(0, pos) << R"({"record":"mystery"})" << "\n";
  }
  CHECK_THROWS_AS(DetectionStore::restore(p), FormatError);
  CHECK(DetectionStore::recover(p).error->record() == 21);
  fs::remove(p);
}

TEST_CASE("watch event examples", "[store]") {
  const WatchBox w{"watch-0001", {0, 0, 0.01, 0.01}, "well", {}};
  const Timestamp t1 = make_time(2020, 1, 1), t2 = make_time(2020, 2, 1);
  const auto d1 = det("d1", 0.9, {0.002, 0.002, 0.003, 0.003});

  SECTION("arrival") {
    const auto ev = derive_watch_events(w, std::vector<WatchEpoch>{{t1, {}}, {t2, {d1}}});
    REQUIRE(ev.size() == 3);
    CHECK(ev[0] == WatchEvent{"watch-0001", WatchEventKind::Count, t1, std::nullopt, 0});
    CHECK(ev[1] == WatchEvent{"watch-0001", WatchEventKind::Arrival, t2, std::string("d1"), std::nullopt});
    CHECK(ev[2] == WatchEvent{"watch-0001", WatchEventKind::Count, t2, std::nullopt, 1});
  }
  SECTION("stationary object") {
    auto d1b = d1;
    d1b.detection_id = "d1-later";
    const auto ev = derive_watch_events(w, std::vector<WatchEpoch>{{t1, {d1}}, {t2, {d1b}}});
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].count == 1u);
    CHECK(ev[1].count == 1u);
  }
  SECTION("one leaves, one arrives") {
    // b shifted by 1/19 of its width: IoU 0.9.
    const auto a = det("a", 0.9, {0.001, 0.001, 0.002, 0.002});
    const auto b = det("b", 0.9, {0.005, 0.005, 0.006, 0.006});
    const auto b2 = det("b2", 0.9, {0.005 + 0.001 / 19, 0.005, 0.006 + 0.001 / 19, 0.006});
    const auto c = det("c", 0.9, {0.008, 0.008, 0.009, 0.009});
    REQUIRE(iou(b.geo, b2.geo) == Approx(0.9).epsilon(1e-6));
    const auto ev = derive_watch_events(w, std::vector<WatchEpoch>{{t1, {a, b}}, {t2, {b2, c}}});
    REQUIRE(ev.size() == 4);
    CHECK(ev[0].count == 2u);
    CHECK(ev[1] == WatchEvent{"watch-0001", WatchEventKind::Departure, t2, std::string("a"), std::nullopt});
    CHECK(ev[2] == WatchEvent{"watch-0001", WatchEventKind::Arrival, t2, std::string("c"), std::nullopt});
    CHECK(ev[3].count == 2u);
  }
  SECTION("moved within the distance bound still matches") {
    // 0.0003 deg of latitude is about 33 m; the boxes are disjoint.
    const auto p = det("p", 0.9, {0.002, 0.002, 0.0022, 0.0022});
    const auto q = det("q", 0.9, {0.002, 0.0023, 0.0022, 0.0025});
    REQUIRE(iou(p.geo, q.geo) == 0.0);
    const auto ev = derive_watch_events(w, std::vector<WatchEpoch>{{t1, {p}}, {t2, {q}}});
    CHECK(ev.size() == 2);
  }
  SECTION("outside the box or another class is ignored") {
    const auto out = det("o", 0.9, {0.02, 0.02, 0.021, 0.021});
    const auto other = det("x", 0.9, {0.002, 0.002, 0.003, 0.003}, "tank");
    const auto ev = derive_watch_events(w, std::vector<WatchEpoch>{{t1, {out, other}}});
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].count == 0u);
  }
  SECTION("epochs must ascend") {
    CHECK_THROWS_AS(derive_watch_events(w, std::vector<WatchEpoch>{{t2, {}}, {t1, {}}}), InvalidArgument);
    CHECK_THROWS_AS(derive_watch_events(w, std::vector<WatchEpoch>{{t1, {}}, {t1, {}}}), InvalidArgument);
  }
}

TEST_CASE("watch events conserve counts and match maximally", "[store]") {
  std::mt19937_64 rng(55);
  const WatchBox w{"watch-0009", {0, 0, 0.02, 0.02}, "well", {}};
  std::uniform_real_distribution<double> pos(-0.002, 0.02), jig(-0.0004, 0.0004);
  std::uniform_int_distribution<int> n(0, 12), keep(0, 2);
  for (int it = 0; it < 200; ++it) {
    std::vector<WatchEpoch> epochs;
    std::vector<GeoDetection> prev;
    int id = 0;
    for (int k = 0; k < 5; ++k) {
      WatchEpoch e{make_time(2020, 1, 1) + days(7.0 * k), {}};
      for (const auto& d : prev)
        if (keep(rng)) {
          auto m = d;
          m.detection_id = "d" + std::to_string(id++);
          m.geo.lon_min += jig(rng);
          m.geo.lon_max = m.geo.lon_min + 0.0008;
          e.detections.push_back(m);
        }
      for (int i = n(rng); i > 0; --i) {
        const double x = pos(rng), y = pos(rng);
        e.detections.push_back(det("d" + std::to_string(id++), 0.5, {x, y, x + 0.0008, y + 0.0008},
                                   keep(rng) ? "well" : "tank"));
      }
      prev = e.detections;
      epochs.push_back(std::move(e));
    }
    const auto ev = derive_watch_events(w, epochs);
    std::vector<std::size_t> count;
    std::vector<std::size_t> arr(epochs.size(), 0), dep(epochs.size(), 0);
    std::size_t k = 0;
    for (const auto& e : ev) {
      if (e.kind == WatchEventKind::Count) {
        REQUIRE(e.count.has_value());
        CHECK_FALSE(e.detection_ref.has_value());
        count.push_back(*e.count);
        ++k;
      } else {
        CHECK(e.detection_ref.has_value());
        (e.kind == WatchEventKind::Arrival ? arr : dep)[k]++;
      }
    }
    REQUIRE(count.size() == epochs.size());
    for (std::size_t j = 1; j < count.size(); ++j) {
      CHECK(count[j] == count[j - 1] + arr[j] - dep[j]);

      // Greedy pairs form a maximal matching: at least half the maximum.
      auto inbox = [&](const WatchEpoch& e) {
        std::vector<const GeoDetection*> v;
        for (const auto& d : e.detections)
          if (d.class_name == w.class_name && w.geo.contains(d.geo.center())) v.push_back(&d);
        return v;
      };
      const auto P = inbox(epochs[j - 1]), C = inbox(epochs[j]);
      std::vector<std::vector<int>> adj(P.size());
      for (std::size_t p = 0; p < P.size(); ++p)
        for (std::size_t c = 0; c < C.size(); ++c)
          if (iou(P[p]->geo, C[c]->geo) >= w.match_iou ||
              distance_m(P[p]->geo.center(), C[c]->geo.center()) <= w.match_max_center_dist_m)
            adj[p].push_back(int(c));
      const std::size_t matched = count[j - 1] - dep[j];
      const std::size_t best = max_matching(adj, C.size());
      CHECK(matched <= best);
      CHECK(2 * matched >= best);
    }
  }
}

TEST_CASE("store watch registry", "[store]") {
  DetectionStore s;
  const WatchBox w{"watch-0001", {0, 0, 0.01, 0.01}, "well", make_time(2020, 1, 1)};
  s.add_watch(w);
  CHECK_THROWS_AS(s.add_watch(w), InvalidArgument);
  CHECK(s.watch("watch-0001") == w);
  CHECK_FALSE(s.watch("nope").has_value());
  CHECK_THROWS_AS(s.events("nope"), NotFound);
  CHECK_THROWS_AS(s.record_epoch("nope", make_time(2020, 1, 1), {}), NotFound);
  CHECK_THROWS_AS(s.record_epoch("watch-0001", make_time(2020, 1, 1), {"missing"}), InvalidArgument);
  s.insert(std::vector<GeoDetection>{det("d1", 0.9, {0.002, 0.002, 0.003, 0.003})});
  s.record_epoch("watch-0001", make_time(2020, 1, 1), {});
  s.record_epoch("watch-0001", make_time(2020, 2, 1), {"d1"});
  CHECK_THROWS_AS(s.record_epoch("watch-0001", make_time(2020, 2, 1), {}), InvalidArgument);
  const auto ev = s.events("watch-0001");
  REQUIRE(ev.size() == 3);
  CHECK(ev[1].kind == WatchEventKind::Arrival);
  const nlohmann::json j = ev[1];
  CHECK(j.at("kind") == "ARRIVAL");
  CHECK(j.at("detection_ref") == "d1");

  WatchBox bad = w;
  bad.watch_id = "watch-0002";
  bad.match_iou = 0;
  CHECK_THROWS_AS(s.add_watch(bad), InvalidArgument);
}

TEST_CASE("readers see whole batches", "[store]") {
  DetectionStore s;
  std::mt19937_64 rng(8);
  const auto dets = random_dets(rng, 4000);
  std::atomic<bool> done{false};
  std::atomic<int> torn{0};
  std::thread reader([&] {
    while (!done.load()) {
      const auto n = s.query(bbox_query(GeoBox{-10, 30, 10, 50})).size();
      if (n % 40 != 0) ++torn;
    }
  });
  for (std::size_t i = 0; i < dets.size(); i += 40) s.insert(std::span<const GeoDetection>(dets.data() + i, 40));
  done = true;
  reader.join();
  CHECK(torn.load() == 0);
  CHECK(s.size() == 4000);
}
