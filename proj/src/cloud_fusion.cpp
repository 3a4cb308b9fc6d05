#include "semfuse/cloud_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace semfuse {

DetectionBox::DetectionBox(ClassId class_id, double score, double u_min, double v_min, double u_max, double v_max,
                           CameraId camera)
    : class_id_(class_id), score_(score), u_min_(u_min), v_min_(v_min), u_max_(u_max), v_max_(v_max), camera_(camera) {
  if (class_id < 0) throw Error("invalid_detection", "detection class id must be non-negative");
  if (!(score >= 0.0 && score <= 1.0)) throw Error("invalid_detection", "detection score must lie in [0,1]");
  if (!(u_min < u_max && v_min < v_max)) throw Error("invalid_detection", "degenerate detection box");
}

ProbabilityVector fuse_point_scores(const ProbabilityVector& c_lidar, const ProbabilityVector& c_img, double w_img) {
  if (c_lidar.size() != c_img.size()) throw Error("invalid_argument", "score vectors differ in class count");
  Eigen::VectorXd out = (1.0 - w_img) * c_lidar.values() + w_img * c_img.values();
  renormalize_if_drifted(out);
  return ProbabilityVector::unchecked(std::move(out));
}

double detection_weight(const DetectionBox& box, double u, double v) {
  const double sigma_u = 0.5 * (box.u_max() - box.u_min());
  const double sigma_v = 0.5 * (box.v_max() - box.v_min());
  const double du = u - box.center_u();
  const double dv = v - box.center_v();
  return box.score() * std::exp(-du * du / (2.0 * sigma_u * sigma_u)) * std::exp(-dv * dv / (2.0 * sigma_v * sigma_v));
}

ProbabilityVector fuse_detection(const ProbabilityVector& c_fused, const ProbabilityVector& c_det, double w_det) {
  if (c_fused.size() != c_det.size()) throw Error("invalid_argument", "score vectors differ in class count");
  Eigen::VectorXd out = (1.0 - w_det) * c_fused.values() + w_det * c_det.values();
  renormalize_if_drifted(out);
  return ProbabilityVector::unchecked(std::move(out));
}

ProbabilityVector detection_vector(std::size_t classes, ClassId cls, double epsilon_prob) {
  return ProbabilityVector::one_hot(classes, cls, epsilon_prob);
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw Error("invalid_argument", "quantile of an empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<std::size_t> foreground_filter(std::span<const double> distances, double q, double margin) {
  std::vector<std::size_t> kept;
  if (distances.empty()) return kept;
  const double threshold = quantile(distances, q) + margin;
  for (std::size_t i = 0; i < distances.size(); ++i)
    if (distances[i] <= threshold) kept.push_back(i);
  return kept;
}

std::vector<DetectionBox> application_order(std::vector<DetectionBox> boxes) {
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const DetectionBox& a, const DetectionBox& b) { return a.score() > b.score(); });
  return boxes;
}

namespace {

struct FrameProjection {
  std::vector<Eigen::Vector3d> p_cam;
  std::vector<Projection> proj;
};

}  // namespace

AugmentResult augment_scan(const SemanticCloud& scan, std::span<const CameraFrame> frames,
                           std::span<const TrajectorySample> trajectory, const Calibration& calib,
                           const FusionConfig& cfg) {
  if (scan.frame != CloudFrame::Lidar) throw Error("invalid_frame", "augment_scan expects a cloud in the LiDAR frame");
  AugmentResult result;
  result.cloud = scan;
  auto& points = result.cloud.points;
  const std::size_t n = points.size();
  const double slack = cfg.trajectory_slack;

  // world_T_lidar per point, shared by every camera.
  std::vector<RigidTransform> world_T_lidar(n);
  {
    double cached_offset = 0.0;
    RigidTransform cached;
    bool have_cache = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double offset = cfg.per_point_chain ? points[i].stamp_offset : 0.0;
      if (!have_cache || offset != cached_offset) {
        cached = interpolate_pose(trajectory, scan.scan_stamp + offset, slack).pose * calib.extrinsics.base_T_lidar;
        cached_offset = offset;
        have_cache = true;
      }
      world_T_lidar[i] = cached;
    }
  }

  std::vector<FrameProjection> projections(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const CameraFrame& frame = frames[f];
    const CameraModel& cam = calib.camera(frame.camera);
    const RigidTransform cam_T_world = camera_pose(calib.extrinsics, frame.camera, trajectory, frame.stamp, slack).inverse();
    auto& fp = projections[f];
    fp.p_cam.resize(n);
    fp.proj.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      fp.p_cam[i] = cam_T_world * (world_T_lidar[i] * points[i].position);
      fp.proj[i] = project_point(cam, fp.p_cam[i]);
    }

    if (frame.mask == nullptr) {
      if (frame.camera == CameraId::Rgb)
        result.warnings.push_back(std::string(to_string(frame.camera)) + " frame at " + std::to_string(frame.stamp) +
                                  " has no score mask; image score fusion skipped");
      continue;
    }
    if (n && frame.mask->classes() != points.front().scores.size())
      throw Error("class_mismatch", "score mask class count differs from the configuration");
    for (std::size_t i = 0; i < n; ++i) {
      const Projection& pr = fp.proj[i];
      if (!pr.in_image()) continue;
      auto c_img = bilinear_sample(*frame.mask, pr.u, pr.v);
      if (!c_img) continue;
      points[i].set_scores(fuse_point_scores(points[i].scores, *c_img, cfg.w_img));
      ++result.stats.image_fused;
    }
  }

  struct Applied {
    DetectionBox box;
    std::size_t frame;
  };
  std::vector<Applied> boxes;
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (const auto& b : frames[f].detections) boxes.push_back({b, f});
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const Applied& a, const Applied& b) { return a.box.score() > b.box.score(); });

  std::vector<std::size_t> candidates;
  std::vector<double> distances;
  for (const auto& [box, f] : boxes) {
    const auto& fp = projections[f];
    candidates.clear();
    distances.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Projection& pr = fp.proj[i];
      if (pr.in_image() && box.contains(pr.u, pr.v)) {
        candidates.push_back(i);
        distances.push_back(fp.p_cam[i].norm());
      }
    }
    result.stats.detection_candidates += candidates.size();
    if (candidates.empty()) continue;
    if (n && static_cast<std::size_t>(box.class_id()) >= points.front().scores.size())
      throw Error("class_mismatch", "detection class id exceeds the class count");
    const ProbabilityVector c_det = detection_vector(points.front().scores.size(), box.class_id(), cfg.epsilon_prob);
    for (std::size_t k : foreground_filter(distances, cfg.quantile_q, cfg.foreground_margin)) {
      const std::size_t i = candidates[k];
      const double w = detection_weight(box, fp.proj[i].u, fp.proj[i].v);
      points[i].set_scores(fuse_detection(points[i].scores, c_det, w));
      ++result.stats.detection_fused;
    }
  }
  return result;
}

SemanticCloud transform_to_world(const SemanticCloud& cloud, std::span<const TrajectorySample> trajectory,
                                 const RigidTransform& base_T_lidar, bool per_point, double slack) {
  if (cloud.frame == CloudFrame::World) return cloud;
  SemanticCloud out = cloud;
  out.frame = CloudFrame::World;
  RigidTransform cached;
  double cached_offset = 0.0;
  bool have_cache = false;
  for (auto& p : out.points) {
    const double offset = per_point ? p.stamp_offset : 0.0;
    if (!have_cache || offset != cached_offset) {
      cached = interpolate_pose(trajectory, cloud.scan_stamp + offset, slack).pose * base_T_lidar;
      cached_offset = offset;
      have_cache = true;
    }
    p.position = cached * p.position;
  }
  return out;
}

}  // namespace semfuse
