#pragma once

#include "semfuse/core.hpp"
#include "semfuse/geometry.hpp"
#include "semfuse/image.hpp"

#include <span>
#include <string>
#include <vector>

namespace semfuse {

struct SemanticPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double intensity = 0.0;
  double stamp_offset = 0.0;  // seconds after the scan stamp
  ProbabilityVector scores;
  ClassId argmax_class = 0;

  void set_scores(ProbabilityVector p) {
    scores = std::move(p);
    argmax_class = scores.argmax();
  }
};

enum class CloudFrame { Lidar, World };

struct SemanticCloud {
  std::vector<SemanticPoint> points;
  double scan_stamp = 0.0;
  CloudFrame frame = CloudFrame::Lidar;
};

class DetectionBox {
 public:
  /// Throws on a degenerate box or a score outside [0,1].
  DetectionBox(ClassId class_id, double score, double u_min, double v_min, double u_max, double v_max,
               CameraId camera = CameraId::Rgb);

  ClassId class_id() const noexcept { return class_id_; }
  double score() const noexcept { return score_; }
  double u_min() const noexcept { return u_min_; }
  double v_min() const noexcept { return v_min_; }
  double u_max() const noexcept { return u_max_; }
  double v_max() const noexcept { return v_max_; }
  CameraId camera() const noexcept { return camera_; }
  double center_u() const noexcept { return 0.5 * (u_min_ + u_max_); }
  double center_v() const noexcept { return 0.5 * (v_min_ + v_max_); }
  bool contains(double u, double v) const noexcept {
    return u >= u_min_ && u <= u_max_ && v >= v_min_ && v <= v_max_;
  }

  bool operator==(const DetectionBox&) const = default;

 private:
  ClassId class_id_;
  double score_;
  double u_min_, v_min_, u_max_, v_max_;
  CameraId camera_;
};

/// (1 - w_img) * c_lidar + w_img * c_img
ProbabilityVector fuse_point_scores(const ProbabilityVector& c_lidar, const ProbabilityVector& c_img, double w_img);

/// Detector score times an unnormalized Gaussian centred on the box with
/// sigma = half the box width (u) and half the box height (v).
double detection_weight(const DetectionBox& box, double u, double v);

/// (1 - w_det) * c_fused + w_det * c_det
ProbabilityVector fuse_detection(const ProbabilityVector& c_fused, const ProbabilityVector& c_det, double w_det);

/// Epsilon-smoothed one-hot vector of the detected class.
ProbabilityVector detection_vector(std::size_t classes, ClassId cls, double epsilon_prob);

/// Linear-interpolated q-quantile of an unsorted sample.
double quantile(std::span<const double> values, double q);

/// Indices (ascending) of the entries with distance <= quantile(q) + margin.
/// The nearest point always survives; empty input gives empty output.
std::vector<std::size_t> foreground_filter(std::span<const double> distances, double q, double margin = 0.5);

/// Detections sorted in the order they are applied: descending score, ties
/// keep their input order.
std::vector<DetectionBox> application_order(std::vector<DetectionBox> boxes);

struct CameraFrame {
  CameraId camera = CameraId::Rgb;
  double stamp = 0.0;
  const ScoreMask* mask = nullptr;  // thermal frames carry detections only
  std::vector<DetectionBox> detections;
};

struct AugmentStats {
  std::size_t image_fused = 0;      // points blended with an image mask
  std::size_t detection_fused = 0;  // point updates by detection fusion
  std::size_t detection_candidates = 0;
};

struct AugmentResult {
  SemanticCloud cloud;
  AugmentStats stats;
  std::vector<std::string> warnings;
};

/// Projects every point into each camera frame through the LiDAR-to-camera
/// chain, blends bilinearly sampled image scores into points inside an RGB
/// mask, then applies the detections in descending score order to the
/// foreground points of each box. Point order and count are preserved.
/// Throws Error("trajectory_coverage") when a stamp is not covered.
AugmentResult augment_scan(const SemanticCloud& scan, std::span<const CameraFrame> frames,
                           std::span<const TrajectorySample> trajectory, const Calibration& calib,
                           const FusionConfig& cfg);

/// Per-point world_T_lidar at scan_stamp + stamp_offset (or the scan stamp
/// when per_point is false).
SemanticCloud transform_to_world(const SemanticCloud& cloud, std::span<const TrajectorySample> trajectory,
                                 const RigidTransform& base_T_lidar, bool per_point = true, double slack = 0.1);

}  // namespace semfuse
