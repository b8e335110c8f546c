#include <catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "bas/detector.hpp"
#include "test_support.hpp"

using namespace bas;
using bas::testing::LocalServer;
using Catch::Approx;

namespace {

const GeoBox kRegion{-103.0, 47.0, -102.9, 47.07};

SyntheticWorld small_world(std::uint64_t seed = 5, double density = 5.0) {
  return generate_world(seed, kRegion, "fracking_well", density);
}

OracleParams exact() {
  OracleParams p;
  p.p_detect = 1.0;
  p.fp_rate_per_km2 = 0.0;
  p.jitter_px = 0.0;
  return p;
}

Tile one_tile(const GeoBox& b, int px = 1250) {
  return standalone_tile("t-0-0", b, px, px, 1.2);
}

}  // namespace

TEST_CASE("oracle identity case returns ground-truth projections", "[detector]") {
  const auto world = small_world();
  REQUIRE(world.objects.size() > 20);
  const auto grid = tile_aoi(kRegion, 1.2, 1250, 100);
  for (const Tile& t : grid.tiles) {
    auto got = oracle_detect(t, world, exact());
    // Independent oracle: objects whose centre is in the ownership cell, plus
    // objects fully inside the tile.
    std::vector<RawDetection> want;
    for (const auto& o : world.objects) {
      const LonLat c = o.geo.center();
      const bool own = c.lon >= t.core.lon_min && c.lon < t.core.lon_max && c.lat > t.core.lat_min &&
                       c.lat <= t.core.lat_max;
      if (!own && !t.geo.contains(o.geo)) continue;
      PixelBox b = geo_to_pixel(t, o.geo);
      b = {std::max(0.0, b.x_min), std::max(0.0, b.y_min), std::min(1250.0, b.x_max),
           std::min(1250.0, b.y_max)};
      want.push_back({b, "fracking_well", 0});
    }
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].box.x_min == Approx(want[i].box.x_min).margin(1e-9));
      CHECK(got[i].box.y_min == Approx(want[i].box.y_min).margin(1e-9));
      CHECK(got[i].box.x_max == Approx(want[i].box.x_max).margin(1e-9));
      CHECK(got[i].box.y_max == Approx(want[i].box.y_max).margin(1e-9));
      CHECK(got[i].class_name == "fracking_well");
    }
  }
}

TEST_CASE("every object has exactly one owning tile", "[detector]") {
  const auto world = small_world(9, 20.0);
  const auto grid = tile_aoi(kRegion, 1.2, 1250, 100);
  for (const auto& o : world.objects) {
    int owners = 0;
    for (const auto& t : grid.tiles) owners += detail::in_core(t.core, o.geo.center());
    CHECK(owners == 1);
  }
}

TEST_CASE("oracle with p_detect 0 and no false positives is empty", "[detector]") {
  auto p = exact();
  p.p_detect = 0.0;
  const auto world = small_world();
  for (const Tile& t : tile_aoi(kRegion, 1.2, 1250, 100).tiles) CHECK(oracle_detect(t, world, p).empty());
}

TEST_CASE("oracle is deterministic and order independent", "[detector]") {
  OracleParams p;
  p.p_detect = 0.8;
  p.fp_rate_per_km2 = 1.0;
  p.jitter_px = 3.0;
  p.seed = 17;
  const auto world = small_world();
  const auto grid = tile_aoi(kRegion, 1.2, 1250, 100);
  std::vector<std::vector<RawDetection>> forward, backward(grid.tiles.size());
  for (const auto& t : grid.tiles) forward.push_back(oracle_detect(t, world, p));
  for (std::size_t i = grid.tiles.size(); i-- > 0;) backward[i] = oracle_detect(grid.tiles[i], world, p);
  CHECK(forward == backward);

  OracleBackend backend(world, p);
  SceneRef scene;
  for (std::size_t i = 0; i < grid.tiles.size(); ++i) CHECK(backend.detect(grid.tiles[i], scene) == forward[i]);
}

TEST_CASE("oracle scores and boxes satisfy invariants", "[detector]") {
  OracleParams p;
  p.p_detect = 0.9;
  p.fp_rate_per_km2 = 3.0;
  p.jitter_px = 25.0;
  const auto world = small_world(2, 30.0);
  for (const auto& t : tile_aoi(kRegion, 1.2, 1250, 100).tiles) {
    for (const auto& d : oracle_detect(t, world, p)) {
      CHECK(d.score >= 0.0);
      CHECK(d.score <= 1.0);
      CHECK(is_valid(d.box));
      CHECK(d.box.x_max <= t.width_px);
      CHECK(d.box.y_max <= t.height_px);
    }
  }
}

TEST_CASE("false positive count matches rate times area", "[detector]") {
  OracleParams p;
  p.p_detect = 0.0;
  p.fp_rate_per_km2 = 0.8;
  const SyntheticWorld world = generate_world(1, GeoBox{10, 10, 12, 12}, "object", 0.0);
  // 100 x 100 grid of 1.5 km tiles: 10^4 tiles.
  const GeoBox aoi{10.0, 10.0, 10.0 + 150000.0 / (kMetersPerDegree * std::cos(deg2rad(10.6745))),
                   10.0 + 150000.0 / kMetersPerDegree};
  const auto grid = tile_aoi(aoi, 1.2, 1250, 0);
  REQUIRE(grid.tiles.size() >= 10000);
  double total = 0, expected = 0;
  for (const auto& t : grid.tiles) {
    total += double(oracle_detect(t, world, p).size());
    expected += p.fp_rate_per_km2 * tile_area_km2(t);
  }
  CHECK(std::abs(total / expected - 1.0) < 0.05);
}

TEST_CASE("oracle per-object detection rate tracks p_detect", "[detector]") {
  OracleParams p;
  p.p_detect = 0.9;
  const auto world = generate_world(8, GeoBox{-103.0, 47.0, -102.5, 47.3}, "well", 2.0);
  REQUIRE(world.objects.size() >= 2000);
  std::size_t hit = 0;
  for (const auto& o : world.objects) hit += detail::object_detected(world, p, o, std::nullopt);
  const double rate = double(hit) / world.objects.size();
  CHECK(rate == Approx(0.9).margin(0.03));
}

TEST_CASE("oracle honours object lifetimes when a capture time is known", "[detector]") {
  LifetimeModel lm;
  lm.mean_lifetime_days = 20;
  const auto world = generate_world(4, kRegion, "well", 30.0, lm);
  const Tile t = one_tile(kRegion);
  const Timestamp at = make_time(2019, 6, 1);
  std::size_t present = 0;
  for (const auto& o : world.objects) present += o.present_at(at) && detail::in_core(t.core, o.geo.center());
  CHECK(oracle_detect(t, world, exact(), at).size() == present);
  CHECK(oracle_detect(t, world, exact()).size() == world.objects.size());

  OracleBackend backend(world, exact());
  SceneRef scene;
  scene.captured_at = at;
  CHECK(backend.detect(t, scene).size() == present);
}

TEST_CASE("oracle capabilities", "[detector]") {
  OracleBackend b(small_world(), exact(), 0.5);
  const auto c = b.capabilities();
  CHECK(c.classes == std::vector<std::string>{"fracking_well"});
  CHECK(c.max_tile_px == kUnboundedTilePx);
  CHECK(c.preferred_gsd_m == 0.5);
}

TEST_CASE("oracle params are validated", "[detector]") {
  OracleParams p;
  p.p_detect = 1.5;
  CHECK_THROWS_AS(validate(p), InvalidArgument);
  p.p_detect = 0.5;
  p.jitter_px = -1;
  CHECK_THROWS_AS(validate(p), InvalidArgument);
}

TEST_CASE("remote detect against stub backends", "[detector]") {
  std::string infer_body;
  int infer_status = 200;
  double delay_s = 0.0;
  std::string caps_body =
      R"({"classes":["fracking_well"],"max_tile_px":2048,"preferred_gsd_m":1.2})";
  nlohmann::json last_request;
  LocalServer srv([&](httplib::Server& s) {
    s.Get("/capabilities", [&](const httplib::Request&, httplib::Response& r) {
      r.set_content(caps_body, "application/json");
    });
    s.Post("/infer", [&](const httplib::Request& q, httplib::Response& r) {
      last_request = nlohmann::json::parse(q.body);
      if (delay_s > 0) std::this_thread::sleep_for(Seconds{delay_s});
      r.status = infer_status;
      r.set_content(infer_body, "application/json");
    });
  });
  const Endpoint ep{srv.url()};
  const Tile t = one_tile(kRegion);

  SECTION("two fixed boxes") {
    infer_body = R"({"detections":[
      {"box_px":[10,20,110,120],"class":"fracking_well","score":0.9},
      {"box_px":[500,500,560,580],"class":"fracking_well","score":0.4}]})";
    const auto caps = fetch_capabilities(ep);
    const auto d = remote_detect(t, "s3://bucket/img.tif", ep, Seconds{5}, &caps);
    REQUIRE(d.size() == 2);
    CHECK(d[0] == RawDetection{{10, 20, 110, 120}, "fracking_well", 0.9});
    CHECK(d[1] == RawDetection{{500, 500, 560, 580}, "fracking_well", 0.4});
    CHECK(last_request.at("tile_id") == "t-0-0");
    CHECK(last_request.at("image_uri") == "s3://bucket/img.tif");
    CHECK(last_request.at("width_px") == 1250);
    CHECK(last_request.at("gsd_m") == 1.2);
    CHECK(last_request.at("geo").at("lon_min") == kRegion.lon_min);
  }
  SECTION("score outside [0,1] is a protocol error") {
    infer_body = R"({"detections":[{"box_px":[10,20,110,120],"class":"fracking_well","score":1.7}]})";
    CHECK_THROWS_AS(remote_detect(t, "u", ep, Seconds{5}), ProtocolError);
  }
  SECTION("unknown class is a protocol error") {
    infer_body = R"({"detections":[{"box_px":[10,20,110,120],"class":"tank","score":0.5}]})";
    const auto caps = fetch_capabilities(ep);
    CHECK_THROWS_AS(remote_detect(t, "u", ep, Seconds{5}, &caps), ProtocolError);
  }
  SECTION("box outside the tile is a protocol error") {
    infer_body = R"({"detections":[{"box_px":[10,20,1300,120],"class":"fracking_well","score":0.5}]})";
    CHECK_THROWS_AS(remote_detect(t, "u", ep, Seconds{5}), ProtocolError);
  }
  SECTION("malformed body is a protocol error") {
    infer_body = "not json";
    CHECK_THROWS_AS(remote_detect(t, "u", ep, Seconds{5}), ProtocolError);
    infer_body = R"({"boxes":[]})";
    CHECK_THROWS_AS(remote_detect(t, "u", ep, Seconds{5}), ProtocolError);
  }
  SECTION("latency beyond the timeout is retryable") {
    infer_body = R"({"detections":[]})";
    delay_s = 1.0;
    CHECK_THROWS_AS(remote_detect(t, "u", ep, Seconds{0.2}), RetryableError);
  }
  SECTION("server errors are retryable, client errors are not") {
    infer_body = R"({"error":"busy"})";
    infer_status = 503;
    CHECK_THROWS_AS(remote_detect(t, "u", ep, Seconds{5}), RetryableError);
    infer_status = 400;
    CHECK_THROWS_AS(remote_detect(t, "u", ep, Seconds{5}), ProtocolError);
  }
  SECTION("capabilities round trip") {
    const auto c = fetch_capabilities(ep);
    CHECK(c.classes == std::vector<std::string>{"fracking_well"});
    CHECK(c.max_tile_px == 2048);
    CHECK(c.preferred_gsd_m == 1.2);
  }
  SECTION("malformed capabilities are a protocol error") {
    caps_body = R"({"classes":[],"max_tile_px":2048,"preferred_gsd_m":1.2})";
    CHECK_THROWS_AS(fetch_capabilities(ep), ProtocolError);
    caps_body = "<html>";
    CHECK_THROWS_AS(fetch_capabilities(ep), ProtocolError);
    caps_body = R"({"classes":["a"],"max_tile_px":"big","preferred_gsd_m":1.2})";
    CHECK_THROWS_AS(fetch_capabilities(ep), ProtocolError);
  }
  SECTION("oversized tile is rejected before sending") {
    const auto caps = fetch_capabilities(ep);
    CHECK_THROWS_AS(remote_detect(one_tile(kRegion, 4096), "u", ep, Seconds{5}, &caps), InvalidArgument);
  }
}

TEST_CASE("unreachable endpoint is retryable", "[detector]") {
  int port = 0;
  { LocalServer srv([](httplib::Server&) {}); port = srv.port(); }
  const Endpoint ep{"http://127.0.0.1:" + std::to_string(port)};
  CHECK_THROWS_AS(fetch_capabilities(ep, Seconds{1}), RetryableError);
}

TEST_CASE("oracle served over the wire matches in-process results", "[detector]") {
  OracleParams p;
  p.p_detect = 0.85;
  p.fp_rate_per_km2 = 2.0;
  p.jitter_px = 2.0;
  OracleBackend local(small_world(), p);
  LocalServer srv([&](httplib::Server& s) { mount_detector_routes(s, local); });
  RemoteBackend remote(Endpoint{srv.url()}, Seconds{10});
  CHECK(remote.capabilities().classes == local.capabilities().classes);
  SceneRef scene;
  scene.image_uri = "synthetic://x";
  for (const auto& t : tile_aoi(kRegion, 1.2, 1250, 100).tiles) {
    const auto a = local.detect(t, scene);
    const auto b = remote.detect(t, scene);
    CHECK(a == b);
  }
}
