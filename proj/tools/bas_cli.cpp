// Operator CLI: one subcommand per API workflow.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "bas/bas.hpp"

namespace {

using namespace bas;

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

GeoBox parse_box(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(std::stod(part));
  if (v.size() != 4) throw InvalidArgument("expected lonmin,latmin,lonmax,latmax, got '" + s + "'");
  GeoBox b{v[0], v[1], v[2], v[3]};
  validate(b);
  return b;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(std::stod(part));
  return v;
}

struct WorldOptions {
  std::string backend = "oracle";
  std::uint64_t seed = 1;
  std::string world;  // region; defaults to the command's AOI
  double density = 0.5;
  double p_detect = 0.9;
  double fp_rate = 0.0;
  double jitter_px = 0.0;
  double lifetime_days = 0.0;

  void add_to(CLI::App& app) {
    app.add_option("--backend", backend, "oracle or remote:URL (default from BAS_BACKEND_URL)");
    app.add_option("--seed", seed, "world and detector seed");
    app.add_option("--world", world, "oracle world region lonmin,latmin,lonmax,latmax");
    app.add_option("--density", density, "oracle objects per km2");
    app.add_option("--p-detect", p_detect, "oracle detection probability");
    app.add_option("--fp-rate", fp_rate, "oracle false positives per km2");
    app.add_option("--jitter-px", jitter_px, "oracle box jitter");
    app.add_option("--lifetime-days", lifetime_days, "mean object lifetime, 0 = permanent");
  }
};

struct Backend {
  std::shared_ptr<DetectorBackend> detector;
  std::shared_ptr<SceneCatalog> catalog;
};

Backend make_backend(WorldOptions w, const std::string& class_name, const GeoBox& fallback_region) {
  if (w.backend == "oracle" && !env_or("BAS_BACKEND_URL", "").empty())
    w.backend = "remote:" + env_or("BAS_BACKEND_URL", "");
  const GeoBox region = w.world.empty() ? fallback_region : parse_box(w.world);
  LifetimeModel life;
  life.mean_lifetime_days = w.lifetime_days;
  SyntheticWorld world = generate_world(w.seed, region, class_name, w.density, life);
  auto catalog = std::make_shared<SyntheticCatalog>(
      SyntheticCatalog::for_world(world, life.start, life.end));
  if (w.backend.rfind("remote:", 0) == 0) {
    return {std::make_shared<RemoteBackend>(Endpoint{w.backend.substr(7)}), catalog};
  }
  if (w.backend != "oracle") throw InvalidArgument("unknown backend '" + w.backend + "'");
  OracleParams p;
  p.p_detect = w.p_detect;
  p.fp_rate_per_km2 = w.fp_rate;
  p.jitter_px = w.jitter_px;
  p.seed = w.seed;
  auto oracle = std::make_shared<OracleBackend>(std::move(world), p);
  oracle->set_classes({class_name});
  return {oracle, catalog};
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << j.dump(2) << "\n";
}

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  const std::string level = env_or("BAS_LOG_LEVEL", "info");
  spdlog::set_level(spdlog::level::from_str(level));
  spdlog::set_pattern("%^%l%$ %v");

  CLI::App app{"Broad area search engine"};
  app.require_subcommand(1);

  // serve ---------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string store_path = env_or("BAS_STORE_PATH", "");
  std::string serve_class = "fracking_well";
  WorldOptions serve_world;
  serve_world.world = "-80.5,40.0,-79.5,40.8";
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--store-path", store_path, "append-only detection log (BAS_STORE_PATH)");
  serve->add_option("--class", serve_class, "oracle object class");
  serve_world.add_to(*serve);

  // search --------------------------------------------------------------------
  auto* search = app.add_subcommand("search", "Run one search job and print its detections");
  std::string aoi_s, search_class = "fracking_well", search_out, search_from, search_to;
  SearchJob job;
  WorldOptions search_world;
  std::optional<double> threshold;
  search->add_option("--aoi", aoi_s, "lonmin,latmin,lonmax,latmax")->required();
  search->add_option("--class", search_class);
  search->add_option("--gsd", job.inference_gsd_m);
  search->add_option("--tile-px", job.tile_px);
  search->add_option("--overlap-px", job.overlap_px);
  search->add_option("--workers", job.worker_count);
  search->add_option("--threshold", threshold, "score threshold (default: backend F1-max)");
  search->add_option("--from", search_from, "RFC 3339 window start");
  search->add_option("--to", search_to, "RFC 3339 window end");
  search->add_option("--store-path", store_path);
  search->add_option("--out", search_out, "NDJSON output (default stdout)");
  search_world.add_to(*search);

  // eval ----------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate predictions against a labeled dataset");
  std::string dataset, eval_out, predictions, curve_out, eval_class;
  double iou_t = 0.5;
  std::optional<double> oracle_p;
  double eval_fp = 0.0;
  std::uint64_t eval_seed = 1;
  eval->add_option("--dataset", dataset, "GeoJSON dataset")->required();
  eval->add_option("--iou", iou_t, "0.5 or 0.2")->check(CLI::IsMember({0.5, 0.2}));
  eval->add_option("--out", eval_out, "report JSON (default stdout)");
  eval->add_option("--predictions", predictions, "NDJSON detections");
  eval->add_option("--oracle-p-detect", oracle_p, "blind-test the oracle instead");
  eval->add_option("--oracle-fp-rate", eval_fp);
  eval->add_option("--seed", eval_seed);
  eval->add_option("--class", eval_class);
  eval->add_option("--curve", curve_out, "PR curve as TSV");

  // split ---------------------------------------------------------------------
  auto* split = app.add_subcommand("split", "Stratified train/validation/test split");
  std::string split_dataset, ratios_s = "70,20,10", split_out;
  std::uint64_t split_seed = 42;
  split->add_option("--dataset", split_dataset, "GeoJSON dataset, or 'builtin:wells'")->required();
  split->add_option("--ratios", ratios_s);
  split->add_option("--seed", split_seed);
  split->add_option("--out", split_out);

  // bench ---------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "Throughput versus worker count");
  std::string workers_s = "1,2,4", bench_aoi;
  double latency = 0.134;
  bool simulated = false;
  BenchGeometry geom;
  bench->add_option("--workers", workers_s);
  bench->add_option("--tile-latency", latency, "seconds per tile");
  bench->add_option("--aoi", bench_aoi)->required();
  bench->add_option("--gsd", geom.gsd_m);
  bench->add_option("--tile-px", geom.tile_px);
  bench->add_option("--overlap-px", geom.overlap_px);
  bench->add_flag("--simulated", simulated, "use a simulated clock");

  // watch ---------------------------------------------------------------------
  auto* watch = app.add_subcommand("watch", "Sweep a watch box over epochs and print events");
  std::string box_s, watch_class = "fracking_well", watch_start = "2019-01-01T00:00:00Z";
  int epochs = 5;
  double epoch_days = 6.0;
  WorldOptions watch_world;
  watch_world.lifetime_days = 30.0;
  watch->add_option("--box", box_s)->required();
  watch->add_option("--class", watch_class);
  watch->add_option("--epochs", epochs);
  watch->add_option("--epoch-days", epoch_days);
  watch->add_option("--start", watch_start);
  watch_world.add_to(*watch);

  // tile ----------------------------------------------------------------------
  auto* tile = app.add_subcommand("tile", "Tile an AOI");
  std::string tile_aoi_s;
  double tile_gsd = 1.2;
  int tile_px = 1250, tile_overlap = 100;
  bool print_count = false;
  tile->add_option("--aoi", tile_aoi_s)->required();
  tile->add_option("--gsd", tile_gsd);
  tile->add_option("--tile-px", tile_px);
  tile->add_option("--overlap-px", tile_overlap);
  tile->add_flag("--print-count", print_count, "print only the tile count");

  // fixture -------------------------------------------------------------------
  auto* fixture = app.add_subcommand("fixture", "Write a reference dataset as GeoJSON");
  std::string which = "wells", fixture_out;
  fixture->add_option("--which", which)->check(CLI::IsMember({"wells", "blind"}));
  fixture->add_option("--out", fixture_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      auto be = make_backend(serve_world, serve_class, parse_box(serve_world.world));
      auto store = store_path.empty() ? std::make_unique<DetectionStore>()
                                      : std::make_unique<DetectionStore>(store_path);
      Service svc(be.detector, be.catalog, std::move(store));
      httplib::Server server;
      svc.mount(server);
      g_server = &server;
      std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
      std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
      spdlog::info("listening on {}:{}", host, port);
      if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
      svc.drain();
      return 0;
    }

    if (*search) {
      job.aoi = parse_box(aoi_s);
      job.class_name = search_class;
      job.job_id = "cli";
      job.score_threshold = threshold;
      if (!search_from.empty() || !search_to.empty())
        job.time_window = TimeRange{search_from.empty() ? all_time().begin : parse_rfc3339(search_from),
                                    search_to.empty() ? all_time().end : parse_rfc3339(search_to)};
      auto be = make_backend(search_world, search_class, job.aoi);
      std::unique_ptr<DetectionStore> store;
      if (!store_path.empty()) store = std::make_unique<DetectionStore>(store_path);
      RunOptions opt;
      opt.store = store.get();
      const JobResult r = run_job(job, *be.catalog, *be.detector, opt);
      std::ofstream f;
      std::ostream* os = &std::cout;
      if (!search_out.empty() && search_out != "-") {
        f.open(search_out);
        os = &f;
      }
      for (const auto& d : r.detections) *os << nlohmann::json(d).dump() << "\n";
      nlohmann::json summary = r;
      std::cerr << summary.dump() << "\n";
      return r.status.state == JobState::Complete ? 0 : 2;
    }

    if (*eval) {
      LabeledDataset ds = load_dataset(dataset);
      MetricsReport rep;
      if (oracle_p) {
        OracleParams p;
        p.p_detect = *oracle_p;
        p.fp_rate_per_km2 = eval_fp;
        p.seed = eval_seed;
        OracleBackend oracle(world_from_dataset(ds, eval_seed), p);
        BlindTestOptions bo;
        bo.class_name = eval_class;
        rep = blind_test(oracle, ds, iou_t, {}, bo);
      } else {
        if (predictions.empty()) throw InvalidArgument("eval needs --predictions or --oracle-p-detect");
        auto preds = to_predictions(Service::read_ndjson(predictions));
        auto truths = to_truths(ds);
        if (!eval_class.empty()) {
          std::erase_if(preds, [&](const auto& p) { return p.class_name != eval_class; });
          std::erase_if(truths, [&](const auto& t) { return t.class_name != eval_class; });
        }
        rep = evaluate(preds, truths, iou_t);
      }
      write_json(rep, eval_out);
      if (!curve_out.empty()) {
        std::ofstream f(curve_out);
        f << curve_table(rep.curve);
      }
      return 0;
    }

    if (*split) {
      const auto r = parse_list(ratios_s);
      if (r.size() != 3) throw InvalidArgument("--ratios needs three numbers");
      const double sum = r[0] + r[1] + r[2];
      const LabeledDataset ds =
          split_dataset == "builtin:wells" ? well_curation_dataset() : load_dataset(split_dataset);
      const auto s = stratified_split(ds, {r[0] / sum, r[1] / sum, r[2] / sum}, split_seed);
      for (const auto& w : s.warnings) spdlog::warn("{}", w);
      write_json(s, split_out);
      return 0;
    }

    if (*bench) {
      std::vector<int> workers;
      for (double w : parse_list(workers_s)) workers.push_back(static_cast<int>(w));
      VirtualClock vclock;
      Clock& clock = simulated ? static_cast<Clock&>(vclock) : steady_clock();
      LatencyModel lm;
      lm.mean = Seconds{latency};
      const auto rep = benchmark(workers, lm, parse_box(bench_aoi), geom, clock);
      write_json(rep, "-");
      return 0;
    }

    if (*watch) {
      const GeoBox box = parse_box(box_s);
      auto be = make_backend(watch_world, watch_class, box);
      DetectionStore store;
      WatchBox w;
      w.watch_id = "cli-watch";
      w.geo = box;
      w.class_name = watch_class;
      w.created_at = parse_rfc3339(watch_start);
      store.add_watch(w);
      std::vector<TimeRange> ranges;
      Timestamp t = parse_rfc3339(watch_start);
      for (int k = 0; k < epochs; ++k) {
        ranges.push_back({t, t + days(epoch_days)});
        t += days(epoch_days);
      }
      SearchJob templ;
      templ.job_id = w.watch_id;
      watch_box_sweep(box, watch_class, ranges, *be.catalog, *be.detector, templ, &store, w.watch_id);
      for (const auto& e : store.events(w.watch_id)) std::cout << nlohmann::json(e).dump() << "\n";
      return 0;
    }

    if (*tile) {
      const TileGrid g = bas::tile_aoi(parse_box(tile_aoi_s), tile_gsd, tile_px, tile_overlap);
      if (print_count) {
        std::cout << g.tiles.size() << "\n";
        return 0;
      }
      for (const auto& t : g.tiles)
        std::cout << nlohmann::json{{"tile_id", t.tile_id}, {"row", t.grid_row},
                                    {"col", t.grid_col}, {"geo", t.geo}}
                         .dump()
                  << "\n";
      return 0;
    }

    if (*fixture) {
      const LabeledDataset ds = which == "wells" ? well_curation_dataset()
                                                 : make_curated_dataset({north_dakota_blind_region()});
      save_dataset(ds, fixture_out);
      return 0;
    }
  } catch (const SplitRequired& e) {
    spdlog::error("{}", e.what());
    for (const auto& b : e.suggestions()) std::cerr << "  " << to_string(b) << "\n";
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
