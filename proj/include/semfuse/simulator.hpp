#pragma once

#include "semfuse/cloud_fusion.hpp"
#include "semfuse/core.hpp"
#include "semfuse/geometry.hpp"
#include "semfuse/image.hpp"
#include "semfuse/recording.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace semfuse {

enum class ShapeKind { GroundPlane, Box, Cylinder };

std::string_view to_string(ShapeKind kind);

struct Waypoint {
  double stamp = 0.0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

/// Box: pose is the box center, dimensions are the full edge lengths.
/// Cylinder: axis along the local z axis through the pose origin (the
/// center), dimensions = (diameter, diameter, height).
/// GroundPlane: plane through the pose origin with normal along local z;
/// dimensions are ignored.
struct ScenePrimitive {
  ShapeKind shape = ShapeKind::Box;
  RigidTransform pose;
  Eigen::Vector3d dimensions = Eigen::Vector3d::Ones();
  ClassId class_id = 0;
  std::vector<Waypoint> dynamic_path;  // overrides the translation; clamped at both ends

  bool is_dynamic() const noexcept { return !dynamic_path.empty(); }
  RigidTransform pose_at(double t) const;
};

struct Scene {
  std::vector<ScenePrimitive> primitives;
  std::size_t classes = 0;

  /// SHA-256 over a canonical dump of every primitive.
  std::string digest() const;
};

/// Scene spec (JSON):
/// {
///   "ground": {"height": 0.0, "class": "road"} | null,     default: road at z = 0
///   "primitives": [
///     {"shape": "box", "class": "building", "center": [x,y,z], "size": [sx,sy,sz], "yaw_deg": 0},
///     {"shape": "cylinder", "class": "person", "center": [x,y,z], "radius": 0.3, "height": 1.8,
///      "path": [{"t": 0.0, "position": [x,y,z]}, ...]}
///   ],
///   "random_persons": {"count": 4, "min": [x,y], "max": [x,y], "dynamic_fraction": 0.5,
///                      "speed": 1.2, "duration": 5.0, "radius": 0.3, "height": 1.8,
///                      "base_height": 0.0, "min_separation": 0.5, "class": "person"}
/// }
/// Field errors are reported as Error("invalid_spec", "<path>: <reason>").
/// Random persons are placed by rejection sampling so that every footprint
/// keeps `min_separation` to every other primitive over its whole path.
Scene generate_scene(std::string_view spec_json, const ClassRegistry& registry, std::uint64_t seed);

struct RayHit {
  double range = 0.0;  // along the (unit) ray direction
  std::size_t primitive = 0;
  ClassId class_id = 0;
};

/// Nearest intersection with range in (min_range, max_range].
std::optional<RayHit> cast_ray(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction,
                               double t, double min_range = 1e-6,
                               double max_range = std::numeric_limits<double>::infinity());

/// Class of the primitive whose surface is nearest to `p` at time t.
std::optional<ClassId> nearest_surface_class(const Scene& scene, const Eigen::Vector3d& p, double t);

struct ConfusionPair {
  ClassId from = 0;
  ClassId to = 0;
  double rate = 0.0;
};

struct SensorNoiseModel {
  /// Peakedness of the sampled score vectors; infinity gives exact one-hots.
  double score_concentration = std::numeric_limits<double>::infinity();
  double mislabel_rate = 0.0;
  std::vector<ConfusionPair> confusions;
  double detection_recall = 1.0;
  double detection_score_min = 1.0;
  double detection_score_max = 1.0;
  double range_noise_sigma = 0.0;

  static SensorNoiseModel noiseless() { return {}; }
  /// Throws Error("invalid_config") naming the field.
  void validate(std::size_t classes) const;
};

/// Label the sensor "believes" for a ground-truth class: a confusion pair
/// first, then a uniform mislabel, otherwise the truth.
ClassId sample_observed_label(const SensorNoiseModel& noise, ClassId truth, std::size_t classes, std::mt19937_64& rng);

/// Dirichlet score vector with concentration 1 + kappa on `target` and 1
/// elsewhere (drawn through normalized Gamma variates).
ProbabilityVector sample_scores(const SensorNoiseModel& noise, ClassId target, std::size_t classes,
                                std::mt19937_64& rng);

/// Per-frame seeding: independent streams for every (seed, stream, index).
std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Network input normalization (mean/std per channel) of the emulated LiDAR
/// segmentation. Only carried through the sensor model.
struct ChannelNormalization {
  double range_mean = 0.0, range_std = 1.0;
  double x_mean = 0.0, x_std = 1.0;
  double y_mean = 0.0, y_std = 1.0;
  double z_mean = 0.0, z_std = 1.0;
  double intensity_mean = 0.0, intensity_std = 1.0;

  /// (range, x, y, z, intensity) standardized channel by channel.
  std::array<double, 5> apply(const Eigen::Vector3d& p, double intensity) const;
};

struct LidarModel {
  int rings = 128;
  int beams = 1024;
  double vfov_min_deg = -45.0;
  double vfov_max_deg = 45.0;
  double min_range = 0.3;
  double max_range = 100.0;
  double sweep_period = 0.1;
  ChannelNormalization normalization;

  void validate() const;
};

struct LidarRender {
  SemanticCloud cloud;                   // LiDAR frame of each firing instant
  std::vector<ClassId> truth;            // per point
  std::vector<Eigen::Vector3d> world;    // noiseless hit positions
};

/// Column k fires at t + k / beams * sweep_period from the LiDAR pose at that
/// instant. Rings are spaced evenly over the vertical field of view.
LidarRender render_lidar(const Scene& scene, std::span<const TrajectorySample> trajectory,
                         const RigidTransform& base_T_lidar, double t, const LidarModel& model,
                         const SensorNoiseModel& noise, std::uint64_t seed);

struct CameraRender {
  ScoreMask mask;                      // empty for detection-only cameras
  DepthImage depth;                    // z-depth, 0 where nothing was hit
  std::vector<DetectionBox> detections;
  std::vector<ClassId> truth;          // row-major label image; misses are `sky_class`
  std::vector<std::int64_t> primitive; // row-major hit primitive, -1 for misses
};

struct CameraRenderOptions {
  CameraId camera = CameraId::Rgb;
  bool render_mask = true;
  std::vector<ClassId> detectable;  // classes that produce boxes
  ClassId sky_class = 0;
};

/// Global-shutter render at time t from `world_T_cam` (camera axes: x right,
/// y down, z forward). Boxes are the pixel-area bounds of each detectable
/// primitive's visible silhouette.
CameraRender render_camera(const Scene& scene, const RigidTransform& world_T_cam, const CameraModel& cam, double t,
                           const SensorNoiseModel& noise, const CameraRenderOptions& options, std::uint64_t seed);

/// Default rig: LiDAR 10 cm below the base; RGB (160x120) and thermal
/// (128x96) cameras looking forward and 30 degrees down.
Calibration default_calibration();

struct FlightNoise {
  SensorNoiseModel lidar;
  SensorNoiseModel rgb;
  SensorNoiseModel thermal;
};

struct FlightSpec {
  std::vector<Waypoint> waypoints;  // base positions; at least two
  std::vector<double> yaw_deg;      // per waypoint; empty = face along the path
  SensorRates rates;
  double trajectory_rate = 100.0;
  double trajectory_margin = 0.2;  // seconds sampled beyond the flight on each side
  LidarModel lidar;
  FlightNoise noise;
  Calibration calibration = default_calibration();
  double gt_voxel_size = 0.25;

  double begin() const { return waypoints.front().stamp; }
  double end() const { return waypoints.back().stamp; }
  void validate(std::size_t classes) const;
};

/// {"score_concentration": 20 | "inf", "mislabel_rate": .., "confusions": [{"from":"person","to":"vegetation","rate":..}],
///  "detection_recall": .., "detection_score_range": [lo, hi], "range_noise_sigma": ..}
SensorNoiseModel noise_from_json(std::string_view text, const ClassRegistry& registry, const std::string& path = "noise");

/// {"waypoints":[{"t":..,"position":[..],"yaw_deg":..}], "rates":{"lidar":10,"rgb":30,"thermal":9},
///  "lidar":{"rings":..,"beams":..,"vfov_deg":[lo,hi],"min_range":..,"max_range":..,"sweep_period":..},
///  "noise":{"lidar":{..},"rgb":{..},"thermal":{..}}, "calibration":{..}, "gt_voxel_size":0.25}
FlightSpec flight_from_json(std::string_view text, const ClassRegistry& registry);

/// Trajectory samples, sensor frames at the configured rates and the
/// noiseless ground-truth map (one-hot labels, infinite horizon).
Recording generate_flight(const Scene& scene, const FlightSpec& flight, const ClassRegistry& registry,
                          std::uint64_t seed);

}  // namespace semfuse
