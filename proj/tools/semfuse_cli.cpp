// semfuse command line: simulate, fuse, eval, export-map, bench.

#include "semfuse/config.hpp"
#include "semfuse/evaluation.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/recording.hpp"
#include "semfuse/simulator.hpp"
#include "semfuse/voxel_map.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

namespace fs = std::filesystem;
using namespace semfuse;

namespace {

struct Args {
  std::string config;
  std::string recording;
  std::string out;
  double realtime_factor = 0.0;
  std::optional<std::uint64_t> seed;
  std::string fov = "rgb";
};

RunConfig load_config(const Args& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (a.seed) rc.seed = *a.seed;
  if (a.realtime_factor > 0.0) {
    rc.pipeline.mode = ReplayMode::Realtime;
    rc.pipeline.realtime_factor = a.realtime_factor;
  }
  return rc;
}

Recording load_recording(const Args& a, const RunConfig& rc) {
  if (a.recording.empty()) throw Error("usage", "--recording is required");
  Recording rec = read_recording(a.recording);
  if (rec.registry.size() != rc.fusion.alpha.size())
    throw Error("class_mismatch", "recording has " + std::to_string(rec.registry.size()) +
                                      " classes but the fusion config has " + std::to_string(rc.fusion.alpha.size()));
  return rec;
}

// Config alpha is resolved against the config registry; recordings carry their own.
FusionConfig fusion_for(const RunConfig& rc, const Recording& rec) {
  if (rc.registry == rec.registry) return rc.fusion;
  throw Error("class_mismatch", "recording class registry differs from the config registry");
}

Recording simulate(const RunConfig& rc) {
  const Scene scene = generate_scene(rc.scene_json == "{}" ? default_scene_json() : rc.scene_json, rc.registry, rc.seed);
  const FlightSpec flight = flight_from_json(rc.flight_json.value_or(default_flight_json()), rc.registry);
  return generate_flight(scene, flight, rc.registry, rc.seed);
}

int cmd_simulate(const Args& a) {
  if (a.out.empty()) throw Error("usage", "--out is required");
  const RunConfig rc = load_config(a);
  const Scene scene = generate_scene(rc.scene_json == "{}" ? default_scene_json() : rc.scene_json, rc.registry, rc.seed);
  const FlightSpec flight = flight_from_json(rc.flight_json.value_or(default_flight_json()), rc.registry);
  const Recording rec = generate_flight(scene, flight, rc.registry, rc.seed);
  const std::string digest = write_recording(rec, a.out);
  nlohmann::json j{{"recording", a.out},
                   {"manifest_sha256", digest},
                   {"scene_digest", scene.digest()},
                   {"primitives", scene.primitives.size()},
                   {"scans", rec.scans.size()},
                   {"rgb_frames", rec.rgb.size()},
                   {"thermal_frames", rec.thermal.size()},
                   {"gt_voxels", rec.ground_truth ? rec.ground_truth->records.size() : 0}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_fuse(const Args& a) {
  if (a.out.empty()) throw Error("usage", "--out is required");
  const RunConfig rc = load_config(a);
  const Recording rec = load_recording(a, rc);
  PipelineOptions opts = rc.pipeline;
  opts.output_dir = fs::path(a.out);
  const auto result = run_pipeline(rec, fusion_for(rc, rec), opts);
  const std::string report = result.report.to_json();
  std::ofstream(fs::path(a.out) / "report.json") << report << '\n';
  std::cout << report << '\n';
  return 0;
}

int cmd_eval(const Args& a) {
  const RunConfig rc = load_config(a);
  const Recording rec = load_recording(a, rc);
  std::optional<CameraId> cam;
  if (a.fov == "rgb")
    cam = CameraId::Rgb;
  else if (a.fov == "thermal")
    cam = CameraId::Thermal;
  else if (a.fov != "none")
    throw Error("usage", "--fov-restrict expects rgb, thermal or none");
  const FusionConfig cfg = fusion_for(rc, rec);
  TableEvaluator eval(rec, cfg, cam);
  PipelineOptions opts = rc.pipeline;
  opts.mode = ReplayMode::Offline;
  run_pipeline(rec, cfg, opts, eval.observer());
  const auto rows = eval.rows();
  write_results_table(std::cout, rows, rec.registry);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream csv(fs::path(a.out) / "results.csv");
    write_results_csv(csv, rows, rec.registry);
    if (!csv) throw Error("io", "cannot write results.csv");
  }
  return 0;
}

int cmd_export_map(const Args& a) {
  if (a.out.empty()) throw Error("usage", "--out is required");
  const RunConfig rc = load_config(a);
  const Recording rec = load_recording(a, rc);
  PipelineOptions opts = rc.pipeline;
  opts.mode = ReplayMode::Offline;
  const auto result = run_pipeline(rec, fusion_for(rc, rec), opts);
  fs::create_directories(a.out);
  const auto records = result.map.export_map();
  std::ofstream nd(fs::path(a.out) / "map.ndjson");
  write_map_ndjson(nd, records, rec.registry);
  std::ofstream bin(fs::path(a.out) / "map.bin", std::ios::binary);
  write_map_binary(bin, records, result.map.voxel_size(), rec.registry);
  if (!nd || !bin) throw Error("io", "cannot write map files to " + a.out);
  std::cout << nlohmann::json{{"voxels", records.size()}, {"voxel_size", result.map.voxel_size()}}.dump() << '\n';
  return 0;
}

int cmd_bench(const Args& a) {
  const RunConfig rc = load_config(a);
  const Recording rec = a.recording.empty() ? simulate(rc) : load_recording(a, rc);
  PipelineOptions opts = rc.pipeline;
  const auto result = run_pipeline(rec, fusion_for(rc, rec), opts);

  // Map update micro-benchmark on random observation pairs.
  const std::size_t C = rec.registry.size();
  std::mt19937_64 rng(rc.seed);
  std::uniform_real_distribution<double> unit(1e-6, 1.0);
  std::vector<LogProbabilityVector> obs;
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(C));
    for (auto& x : v) x = unit(rng);
    obs.push_back(to_log(ProbabilityVector::normalized(v), rc.fusion.epsilon_prob));
  }
  LogProbabilityVector acc = LogProbabilityVector::uniform(C);
  const int iters = 200000;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) acc = log_bayes_update(acc, obs[static_cast<std::size_t>(i) % obs.size()]);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nlohmann::json j = nlohmann::json::parse(result.report.to_json());
  j["log_bayes_updates_per_second"] = iters / s;
  j["hardware_concurrency"] = std::thread::hardware_concurrency();
  j["scans"] = rec.scans.size();
  j["rgb_frames"] = rec.rgb.size();
  j["points_per_scan"] = rec.scans.empty() ? 0 : rec.scans.front().cloud.points.size();
  j["checksum"] = acc.argmax();
  std::cout << j.dump(2) << '\n';
  return 0;
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << nlohmann::json{{"code", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-sensor semantic fusion: simulator, fusion pipeline and evaluation"};
  app.require_subcommand(1);
  Args a;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config, "JSON run configuration");
    sub->add_option("--seed", a.seed, "random seed (overrides the config)");
  };
  auto* sim = app.add_subcommand("simulate", "generate a synthetic recording");
  common(sim);
  sim->add_option("--out", a.out, "recording directory")->required();

  auto* fuse = app.add_subcommand("fuse", "run image, cloud and map fusion over a recording");
  common(fuse);
  fuse->add_option("--recording", a.recording, "recording directory")->required();
  fuse->add_option("--out", a.out, "output directory")->required();
  fuse->add_option("--realtime-factor", a.realtime_factor, "replay speed; enables drop-oldest realtime mode");

  auto* ev = app.add_subcommand("eval", "IoU of LiDAR-only and fused labels against the ground-truth map");
  common(ev);
  ev->add_option("--recording", a.recording, "recording directory")->required();
  ev->add_option("--out", a.out, "directory for results.csv");
  ev->add_option("--fov-restrict", a.fov, "camera for the FoV-restricted rows: rgb, thermal or none");

  auto* em = app.add_subcommand("export-map", "build the voxel map and export it");
  common(em);
  em->add_option("--recording", a.recording, "recording directory")->required();
  em->add_option("--out", a.out, "output directory")->required();

  auto* bench = app.add_subcommand("bench", "report local throughput and latency");
  common(bench);
  bench->add_option("--recording", a.recording, "recording directory (default: simulate one)");
  bench->add_option("--realtime-factor", a.realtime_factor, "replay speed; enables realtime mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*sim) return cmd_simulate(a);
    if (*fuse) return cmd_fuse(a);
    if (*ev) return cmd_eval(a);
    if (*em) return cmd_export_map(a);
    if (*bench) return cmd_bench(a);
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
