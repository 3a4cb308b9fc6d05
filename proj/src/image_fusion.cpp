#include "semfuse/image_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semfuse {

FusedMask warp_previous(const FusedMask& prev, const DepthImage& prev_depth, const RigidTransform& pose_prev,
                        const RigidTransform& pose_cur, const CameraModel& cam) {
  const int w = prev.width();
  const int h = prev.height();
  if (prev_depth.width() != w || prev_depth.height() != h || cam.width != w || cam.height != h)
    throw Error("shape_mismatch", "warp_previous: mask, depth and camera sizes differ");

  FusedMask out(ScoreMask(w, h, prev.scores.classes(), prev.scores.stamp()), false);
  std::vector<double> zbuf(static_cast<std::size_t>(w) * static_cast<std::size_t>(h),
                           std::numeric_limits<double>::infinity());
  const RigidTransform cur_T_prev = pose_cur.inverse() * pose_prev;

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double d = prev_depth.at(u, v);
      if (!(d > 0.0) || !prev.is_valid(u, v)) continue;
      const Eigen::Vector3d p = cur_T_prev * unproject(cam, u, v, d);
      const Projection pr = project_point(cam, p);
      if (pr.status == ProjectionStatus::BehindCamera) continue;
      const long tu = std::lround(pr.u);
      const long tv = std::lround(pr.v);
      if (tu < 0 || tv < 0 || tu >= w || tv >= h) continue;
      const auto iu = static_cast<int>(tu);
      const auto iv = static_cast<int>(tv);
      double& z = zbuf[static_cast<std::size_t>(iv) * static_cast<std::size_t>(w) + static_cast<std::size_t>(iu)];
      if (pr.depth >= z) continue;
      z = pr.depth;
      out.scores.pixel(iu, iv) = prev.scores.pixel(u, v);
      out.set_valid(iu, iv, true);
    }
  }
  return out;
}

FusedMask temporal_smooth(const ScoreMask& cur, const FusedMask& warped_prev, std::span<const double> alpha) {
  if (alpha.size() != cur.classes())
    throw Error("invalid_argument", "temporal_smooth: alpha has " + std::to_string(alpha.size()) +
                                        " entries for " + std::to_string(cur.classes()) + " classes");
  if (warped_prev.width() != cur.width() || warped_prev.height() != cur.height() ||
      warped_prev.scores.classes() != cur.classes())
    throw Error("shape_mismatch", "temporal_smooth: mask shapes differ");

  const Eigen::Map<const Eigen::ArrayXd> a(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  const Eigen::ArrayXd one_minus_a = 1.0 - a;
  FusedMask out(cur, true);
  for (int v = 0; v < cur.height(); ++v) {
    for (int u = 0; u < cur.width(); ++u) {
      if (!warped_prev.is_valid(u, v)) continue;
      auto px = out.scores.pixel(u, v);
      px = (a * cur.pixel(u, v).array() + one_minus_a * warped_prev.scores.pixel(u, v).array()).matrix();
      renormalize_if_drifted(px);
    }
  }
  return out;
}

namespace {

void blend_detection(Eigen::Map<Eigen::VectorXd> px, const Eigen::VectorXd& c_det, double w) {
  px = (1.0 - w) * px + w * c_det;
  renormalize_if_drifted(px);
}

}  // namespace

FusedMask overlay_detections(FusedMask mask, std::span<const DetectionBox> rgb_dets,
                             std::span<const DetectionBox> thermal_dets, const DepthImage& depth,
                             const CameraModel& rgb_cam, const CameraModel& thermal_cam,
                             const RigidTransform& thermal_T_rgb, double epsilon_prob) {
  if (rgb_dets.empty() && thermal_dets.empty()) return mask;
  const int w = mask.width();
  const int h = mask.height();
  const std::size_t classes = mask.scores.classes();

  struct Tagged {
    DetectionBox box;
    bool thermal;
  };
  std::vector<Tagged> boxes;
  for (const auto& b : rgb_dets) boxes.push_back({b, false});
  for (const auto& b : thermal_dets) boxes.push_back({b, true});
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const Tagged& a, const Tagged& b) { return a.box.score() > b.box.score(); });

  // Thermal-image coordinates of every RGB pixel with valid depth.
  std::vector<Projection> thermal_proj;
  if (!thermal_dets.empty()) {
    if (depth.width() != w || depth.height() != h)
      throw Error("shape_mismatch", "overlay_detections: depth and mask sizes differ");
    thermal_proj.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        const double d = depth.at(u, v);
        if (!(d > 0.0)) continue;
        thermal_proj[static_cast<std::size_t>(v) * static_cast<std::size_t>(w) + static_cast<std::size_t>(u)] =
            project_point(thermal_cam, thermal_T_rgb * unproject(rgb_cam, u, v, d));
      }
  }

  for (const auto& [box, thermal] : boxes) {
    if (static_cast<std::size_t>(box.class_id()) >= classes)
      throw Error("class_mismatch", "detection class id exceeds the class count");
    const Eigen::VectorXd c_det = detection_vector(classes, box.class_id(), epsilon_prob).values();
    if (!thermal) {
      const int u0 = std::max(0, static_cast<int>(std::ceil(box.u_min())));
      const int v0 = std::max(0, static_cast<int>(std::ceil(box.v_min())));
      const int u1 = std::min(w - 1, static_cast<int>(std::floor(box.u_max())));
      const int v1 = std::min(h - 1, static_cast<int>(std::floor(box.v_max())));
      for (int v = v0; v <= v1; ++v)
        for (int u = u0; u <= u1; ++u) blend_detection(mask.scores.pixel(u, v), c_det, detection_weight(box, u, v));
    } else {
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
          const Projection& pr =
              thermal_proj[static_cast<std::size_t>(v) * static_cast<std::size_t>(w) + static_cast<std::size_t>(u)];
          if (!pr.in_image() || !box.contains(pr.u, pr.v)) continue;
          blend_detection(mask.scores.pixel(u, v), c_det, detection_weight(box, pr.u, pr.v));
        }
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------

ImageFusion::ImageFusion(Calibration calib, FusionConfig cfg) : calib_(std::move(calib)), cfg_(std::move(cfg)) {}

FusedMask ImageFusion::process(const ScoreMask& cur_mask, const DepthImage& cur_depth,
                               std::span<const DetectionBox> rgb_dets, std::span<const DetectionBox> thermal_dets,
                               std::optional<double> thermal_stamp, std::span<const TrajectorySample> trajectory) {
  const double t = cur_mask.stamp();
  const RigidTransform pose_cur = camera_pose(calib_.extrinsics, CameraId::Rgb, trajectory, t, cfg_.trajectory_slack);

  FusedMask smoothed = [&] {
    if (!history_) return FusedMask(cur_mask, true);
    const FusedMask warped = warp_previous(history_->fused, history_->depth, history_->pose, pose_cur, calib_.rgb);
    return temporal_smooth(cur_mask, warped, cfg_.alpha);
  }();

  RigidTransform thermal_T_rgb = calib_.extrinsics.thermal_T_base * calib_.extrinsics.rgb_T_base.inverse();
  if (!thermal_dets.empty() && thermal_stamp && *thermal_stamp != t) {
    const RigidTransform pose_thermal =
        camera_pose(calib_.extrinsics, CameraId::Thermal, trajectory, *thermal_stamp, cfg_.trajectory_slack);
    thermal_T_rgb = pose_thermal.inverse() * pose_cur;
  }
  FusedMask fused = overlay_detections(std::move(smoothed), rgb_dets, thermal_dets, cur_depth, calib_.rgb,
                                       calib_.thermal, thermal_T_rgb, cfg_.epsilon_prob);
  fused.scores.set_stamp(t);
  history_ = History{fused, cur_depth, pose_cur};
  return fused;
}

}  // namespace semfuse
