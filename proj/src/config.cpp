#include "semfuse/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace semfuse {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error("invalid_config", path + ": " + what);
}

double num(const json& j, const char* key, const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) fail(path + "." + key, "expected a number");
  return j[key].get<double>();
}

std::size_t count(const json& j, const char* key, const std::string& path, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_unsigned()) fail(path + "." + key, "expected a non-negative integer");
  return j[key].get<std::size_t>();
}

FusionConfig fusion_from(const json& j, const ClassRegistry& registry) {
  const std::string p = "fusion";
  if (!j.is_object()) fail(p, "expected an object");
  FusionConfig cfg = FusionConfig::defaults(registry);
  cfg.w_img = num(j, "w_img", p, cfg.w_img);
  cfg.quantile_q = num(j, "quantile_q", p, cfg.quantile_q);
  cfg.foreground_margin = num(j, "foreground_margin", p, cfg.foreground_margin);
  cfg.epsilon_prob = num(j, "epsilon_prob", p, cfg.epsilon_prob);
  cfg.voxel_size = num(j, "voxel_size", p, cfg.voxel_size);
  cfg.deque_len = count(j, "deque_len", p, cfg.deque_len);
  cfg.trajectory_slack = num(j, "trajectory_slack", p, cfg.trajectory_slack);
  if (j.contains("alpha")) {
    const json& a = j["alpha"];
    if (a.is_array()) {
      cfg.alpha.clear();
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) fail(p + ".alpha[" + std::to_string(i) + "]", "expected a number");
        cfg.alpha.push_back(a[i].get<double>());
      }
    } else if (a.is_object()) {
      for (const auto& [name, v] : a.items()) {
        auto id = registry.find(name);
        if (!id) fail(p + ".alpha." + name, "unknown class");
        if (!v.is_number()) fail(p + ".alpha." + name, "expected a number");
        cfg.alpha[static_cast<std::size_t>(*id)] = v.get<double>();
      }
    } else {
      fail(p + ".alpha", "expected an array or an object keyed by class name");
    }
  }
  if (j.contains("horizon_mode")) {
    if (!j["horizon_mode"].is_string()) fail(p + ".horizon_mode", "expected a string");
    cfg.horizon_mode = horizon_mode_from_string(j["horizon_mode"].get<std::string>());
  }
  if (j.contains("scan_merge")) {
    if (!j["scan_merge"].is_string()) fail(p + ".scan_merge", "expected a string");
    cfg.scan_merge = scan_merge_from_string(j["scan_merge"].get<std::string>());
  }
  if (j.contains("per_point_chain")) {
    if (!j["per_point_chain"].is_boolean()) fail(p + ".per_point_chain", "expected a boolean");
    cfg.per_point_chain = j["per_point_chain"].get<bool>();
  }
  cfg.validate(registry.size());
  return cfg;
}

}  // namespace

FusionConfig fusion_from_json(std::string_view text, const ClassRegistry& registry) {
  try {
    return fusion_from(json::parse(text), registry);
  } catch (const json::exception& e) {
    fail("fusion", e.what());
  }
}

RunConfig RunConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail("config", e.what());
  }
  if (!j.is_object()) fail("config", "expected an object");
  RunConfig rc;
  if (j.contains("classes")) rc.registry = ClassRegistry::from_json(json{{"classes", j["classes"]}}.dump());
  rc.fusion = fusion_from(j.value("fusion", json::object()), rc.registry);
  if (j.contains("pipeline")) {
    const json& p = j["pipeline"];
    const std::string path = "pipeline";
    if (!p.is_object()) fail(path, "expected an object");
    const std::size_t all = count(p, "queue_capacity", path, 4);
    rc.pipeline.image_queue = count(p, "image_queue", path, all);
    rc.pipeline.cloud_queue = count(p, "cloud_queue", path, all);
    rc.pipeline.map_queue = count(p, "map_queue", path, all);
    if (rc.pipeline.image_queue == 0 || rc.pipeline.cloud_queue == 0 || rc.pipeline.map_queue == 0)
      fail(path, "queue capacities must be >= 1");
    if (p.contains("realtime_factor")) {
      rc.pipeline.realtime_factor = num(p, "realtime_factor", path, 1.0);
      if (!(rc.pipeline.realtime_factor > 0.0)) fail(path + ".realtime_factor", "must be positive");
      rc.pipeline.mode = ReplayMode::Realtime;
    }
    if (p.contains("export_mask_png")) {
      if (!p["export_mask_png"].is_boolean()) fail(path + ".export_mask_png", "expected a boolean");
      rc.pipeline.export_mask_png = p["export_mask_png"].get<bool>();
    }
  }
  if (j.contains("scene")) rc.scene_json = j["scene"].dump();
  if (j.contains("flight")) rc.flight_json = j["flight"].dump();
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) fail("seed", "expected a non-negative integer");
    rc.seed = j["seed"].get<std::uint64_t>();
  }
  return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("io", "cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

std::string default_scene_json() {
  return R"({
  "ground": {"height": -0.125, "class": "road"},
  "primitives": [
    {"shape": "box", "class": "building", "center": [10, 12, 4], "size": [16, 6, 8]},
    {"shape": "box", "class": "building", "center": [30, 12, 5], "size": [14, 6, 10]},
    {"shape": "box", "class": "building", "center": [15, -12, 3], "size": [20, 6, 6]},
    {"shape": "box", "class": "building", "center": [38, -12, 4], "size": [12, 6, 8]},
    {"shape": "cylinder", "class": "vegetation", "center": [6, -7, 1.5], "radius": 1.0, "height": 3.0},
    {"shape": "cylinder", "class": "vegetation", "center": [22, -7, 1.5], "radius": 1.0, "height": 3.0},
    {"shape": "cylinder", "class": "vegetation", "center": [34, 7, 1.5], "radius": 1.0, "height": 3.0},
    {"shape": "cylinder", "class": "pole", "center": [12, 6.5, 2.5], "radius": 0.15, "height": 5.0},
    {"shape": "box", "class": "vehicle", "center": [26, -4, 0.75], "size": [4.2, 1.8, 1.5]}
  ],
  "random_persons": {"count": 6, "min": [8, -4], "max": [40, 4], "dynamic_fraction": 0.5,
                     "speed": 1.2, "duration": 4.0}
})";
}

std::string default_flight_json() {
  return R"({
  "waypoints": [{"t": 0.0, "position": [0, 0, 8]}, {"t": 3.0, "position": [6, 0, 8]}],
  "rates": {"lidar": 10, "rgb": 30, "thermal": 9},
  "lidar": {"rings": 64, "beams": 512, "vfov_deg": [-45, 45]},
  "noise": {
    "lidar": {"score_concentration": 8, "mislabel_rate": 0.05, "range_noise_sigma": 0.02,
              "confusions": [{"from": "person", "to": "vegetation", "rate": 0.4},
                             {"from": "person", "to": "building", "rate": 0.2}]},
    "rgb": {"score_concentration": 12, "mislabel_rate": 0.02,
            "detection_recall": 0.9, "detection_score_range": [0.5, 0.95]},
    "thermal": {"detection_recall": 0.8, "detection_score_range": [0.5, 0.9]}
  }
})";
}

}  // namespace semfuse
