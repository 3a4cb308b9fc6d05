#pragma once

#include "semfuse/core.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/simulator.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace semfuse {

/// Run configuration file (JSON). Every section is optional.
/// {
///   "classes": [{"name": "road", "dynamic": false}, ...],
///   "fusion": {"w_img": 0.5, "alpha": {"person": 0.8, ...} | [..C values..], "quantile_q": 0.25,
///              "foreground_margin": 0.5, "epsilon_prob": 1e-9, "voxel_size": 0.25, "deque_len": 5,
///              "horizon_mode": "fold" | "drop", "scan_merge": "bayes" | "mean",
///              "per_point_chain": true, "trajectory_slack": 0.1},
///   "pipeline": {"queue_capacity": 4, "image_queue": 4, "cloud_queue": 4, "map_queue": 4,
///                "realtime_factor": 10.0, "export_mask_png": false},
///   "scene": { scene spec },
///   "flight": { flight spec },
///   "seed": 1
/// }
struct RunConfig {
  ClassRegistry registry = ClassRegistry::defaults();
  FusionConfig fusion = FusionConfig::defaults(ClassRegistry::defaults());
  PipelineOptions pipeline;
  std::string scene_json = "{}";
  std::optional<std::string> flight_json;
  std::uint64_t seed = 1;

  /// Throws Error("invalid_config") with the offending field path.
  static RunConfig from_json(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Parses the "fusion" section against a registry (alpha may name classes).
FusionConfig fusion_from_json(std::string_view text, const ClassRegistry& registry);

/// A short flight over a small street scene, used when no flight is given.
std::string default_flight_json();
std::string default_scene_json();

}  // namespace semfuse
