#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "bas/imagery.hpp"

using namespace bas;
using Catch::Approx;

namespace {

// About 1000 km^2 near 45N.
GeoBox thousand_km2() {
  const double h = std::sqrt(1000.0) / (6371.0088 * std::numbers::pi / 180) / 2;  // half side, degrees of lat
  const double w = h / std::cos(45.0 * std::numbers::pi / 180);
  return {-100.0 - w, 45.0 - h, -100.0 + w, 45.0 + h};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("world with zero density is empty", "[imagery]") {
  CHECK(generate_world(1, thousand_km2(), "well", 0.0).objects.empty());
  CHECK_THROWS_AS(generate_world(1, thousand_km2(), "well", -1.0), InvalidArgument);
}

TEST_CASE("world generation is deterministic", "[imagery]") {
  LifetimeModel lm;
  lm.mean_lifetime_days = 60;
  const auto a = generate_world(42, thousand_km2(), "well", 0.5, lm);
  const auto b = generate_world(42, thousand_km2(), "well", 0.5, lm);
  REQUIRE(a.objects.size() == b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].object_id == b.objects[i].object_id);
    CHECK(std::memcmp(&a.objects[i].geo, &b.objects[i].geo, sizeof(GeoBox)) == 0);
    CHECK(a.objects[i].present_from == b.objects[i].present_from);
    CHECK(a.objects[i].present_until == b.objects[i].present_until);
  }
  const auto c = generate_world(43, thousand_km2(), "well", 0.5, lm);
  CHECK((c.objects.size() != a.objects.size() || c.objects[0].geo.lon_min != a.objects[0].geo.lon_min));
}

TEST_CASE("world object count follows Poisson", "[imagery]") {
  const GeoBox region = thousand_km2();
  REQUIRE(aoi_area_km2(region) == Approx(1000.0).epsilon(1e-6));
  double sum = 0;
  const int seeds = 40;
  for (int s = 0; s < seeds; ++s) {
    const auto w = generate_world(1000 + s, region, "well", 2.0);
    const auto n = w.objects.size();
    // Poisson(2000): P(|N - 2000| > 200) < 1e-5.
    CHECK(n >= 1800);
    CHECK(n <= 2200);
    sum += double(n);
  }
  // Mean of 40 draws has sd sqrt(2000/40) ~ 7.1.
  CHECK(std::abs(sum / seeds - 2000.0) < 5 * 7.1);
}

TEST_CASE("world objects lie in the region with valid lifetimes", "[imagery]") {
  LifetimeModel lm;
  lm.mean_lifetime_days = 30;
  const auto w = generate_world(7, thousand_km2(), "well", 1.0, lm);
  REQUIRE_FALSE(w.objects.empty());
  for (const auto& o : w.objects) {
    CHECK(w.region.contains(o.geo));
    CHECK(o.present_from < o.present_until);
    CHECK(o.class_name == "well");
  }
}

TEST_CASE("catalog emits one scene per revisit", "[imagery]") {
  const GeoBox region{-100, 45, -99.9, 45.1};
  const Timestamp t0 = make_time(2020, 1, 1);
  SyntheticCatalog cat(1, t0, t0 + days(365),
                       {{SensorSource::Synthetic, 1.2, region, {6.0, 6.0}}});
  const auto scenes = cat.query(region, {t0, t0 + days(30)}, SensorSource::Synthetic);
  CHECK(scenes.size() == 5);
  for (std::size_t i = 1; i < scenes.size(); ++i) CHECK(scenes[i - 1].captured_at < scenes[i].captured_at);

  CHECK(cat.query(region, {t0, t0}, SensorSource::Synthetic).empty());
  CHECK(cat.query(region, {t0 - days(60), t0 - days(1)}, SensorSource::Synthetic).empty());
  CHECK(cat.query(GeoBox{10, 10, 11, 11}, {t0, t0 + days(30)}, SensorSource::Synthetic).empty());
  CHECK(cat.query(region, {t0, t0 + days(30)}, SensorSource::HighRes).empty());
}

TEST_CASE("catalog revisit gaps stay in 5 to 12 days", "[imagery]") {
  const GeoBox region{-100, 45, -99.9, 45.1};
  const Timestamp t0 = make_time(2020, 1, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SyntheticCatalog cat(seed, t0, t0 + days(730),
                         {{SensorSource::HighRes, 0.3, region, {5.0, 12.0}}});
    const auto s = cat.query(region, {t0, t0 + days(730)}, SensorSource::HighRes);
    REQUIRE(s.size() > 50);
    for (std::size_t i = 1; i < s.size(); ++i) {
      const double gap = std::chrono::duration<double>(s[i].captured_at - s[i - 1].captured_at).count() / 86400.0;
      CHECK(gap >= 5.0 - 1e-6);
      CHECK(gap <= 12.0 + 1e-6);
    }
  }
}

TEST_CASE("catalog scenes intersect the queried aoi", "[imagery]") {
  const GeoBox region{-100, 45, -99, 46};
  const Timestamp t0 = make_time(2020, 1, 1);
  const auto world = generate_world(3, region, "well", 0.0);
  const auto cat = SyntheticCatalog::for_world(world, t0, t0 + days(90));
  const GeoBox aoi{-99.5, 45.5, -98.5, 46.5};
  for (auto src : {SensorSource::Synthetic, SensorSource::HighRes, SensorSource::LowRes}) {
    const auto s = cat.query(aoi, {t0, t0 + days(90)}, src);
    CHECK(s.size() == 15);
    for (const auto& sc : s) {
      CHECK(sc.footprint.overlaps(aoi));
      CHECK(sc.source == src);
    }
  }
}

TEST_CASE("scene gsd must match its sensor class", "[imagery]") {
  SceneRef s{"s", SensorSource::HighRes, {0, 0, 1, 1}, {}, 2.0, "x"};
  CHECK_THROWS_AS(validate(s), InvalidArgument);
  s.gsd_m = 0.3;
  CHECK_NOTHROW(validate(s));
  s.source = SensorSource::LowRes;
  CHECK_THROWS_AS(validate(s), InvalidArgument);
  s.gsd_m = 10;
  CHECK_NOTHROW(validate(s));
}

TEST_CASE("curated fixture matches the curation table", "[imagery]") {
  const auto ds = well_curation_dataset();
  CHECK(ds.images.size() == 4519);
  CHECK(ds.label_count() == 12214);
  CHECK(ds.regions().size() == 4);
  CHECK(ds.image_count("Pennsylvania") == 1031);
  CHECK(ds.label_count("Pennsylvania") == 1521);
  CHECK(ds.image_count("New Mexico") == 463);
  CHECK(ds.label_count("New Mexico") == 2801);
  CHECK(ds.image_count("Canada") == 1603);
  CHECK(ds.label_count("Canada") == 5986);
  CHECK(ds.image_count("Russia") == 1422);
  CHECK(ds.label_count("Russia") == 1906);
  CHECK(ds.curation_hours.at("Russia") == 150);
  for (const auto& im : ds.images) {
    CHECK(aoi_area_km2(im.footprint) == Approx(2.25).epsilon(1e-9));
    for (const auto& l : im.labels) {
      CHECK(im.footprint.contains(l.geo));
      CHECK(aoi_area_km2(l.geo) == Approx(0.0081).epsilon(1e-3));
    }
  }
}

TEST_CASE("dataset save and load is the identity", "[imagery]") {
  const auto ds = make_curated_dataset({north_dakota_blind_region()});
  REQUIRE(ds.images.size() == 54);
  REQUIRE(ds.label_count() == 44);
  const std::string path = temp_path("bas_dataset_roundtrip.geojson");
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  CHECK(back == ds);

  const auto full = well_curation_dataset();
  CHECK(dataset_from_geojson(nlohmann::json::parse(dataset_to_geojson(full).dump())) == full);
  std::filesystem::remove(path);
}

TEST_CASE("empty feature collection is an empty dataset", "[imagery]") {
  const auto ds = dataset_from_geojson(nlohmann::json::parse(R"({"type":"FeatureCollection","features":[]})"));
  CHECK(ds.images.empty());
  CHECK(ds.label_count() == 0);
}

TEST_CASE("dataset parse errors name the offending feature", "[imagery]") {
  auto feature = [](const std::string& geom, const std::string& role = "label") {
    return R"({"type":"Feature","geometry":)" + geom +
           R"(,"properties":{"class":"well","image_id":"a","region":"r","role":")" + role + R"("}})";
  };
  const std::string good = R"({"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]})";
  const std::string tri = R"({"type":"Polygon","coordinates":[[[0,0],[1,0],[0.5,1],[0,0]]]})";
  const std::string doc = R"({"type":"FeatureCollection","features":[)" + feature(good) + "," + feature(tri) + "]}";
  try {
    dataset_from_geojson(nlohmann::json::parse(doc));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.record() == 2);
  }

  const std::string small = R"({"type":"Polygon","coordinates":[[[0,0],[0.1,0],[0.1,0.1],[0,0.1],[0,0]]]})";
  const std::string outside = R"({"type":"FeatureCollection","features":[)" + feature(small, "footprint") + "," +
                              feature(good) + "]}";
  CHECK_THROWS_AS(dataset_from_geojson(nlohmann::json::parse(outside)), ValidationError);

  CHECK_THROWS_AS(dataset_from_geojson(nlohmann::json::parse(R"({"type":"Feature"})")), FormatError);
  CHECK_THROWS_AS(load_dataset(temp_path("bas_missing_dataset.geojson")), FormatError);

  const std::string bad = temp_path("bas_bad_dataset.geojson");
  std::ofstream(bad) << "{ not json";
  CHECK_THROWS_AS(load_dataset(bad), FormatError);
  std::filesystem::remove(bad);
}
