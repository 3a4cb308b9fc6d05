#pragma once

#include "semfuse/cloud_fusion.hpp"
#include "semfuse/core.hpp"
#include "semfuse/geometry.hpp"
#include "semfuse/image.hpp"

#include <optional>
#include <span>
#include <vector>

namespace semfuse {

/// Forward-warps the previous fused mask into the current camera pose using
/// its depth. Each source pixel is scattered to the nearest target pixel with
/// a depth test; targets nobody reaches are marked invalid. Poses are
/// world_T_cam.
FusedMask warp_previous(const FusedMask& prev, const DepthImage& prev_depth, const RigidTransform& pose_prev,
                        const RigidTransform& pose_cur, const CameraModel& cam);

/// alpha o cur + (1 - alpha) o prev wherever the warped history is valid,
/// pass-through of `cur` elsewhere.
FusedMask temporal_smooth(const ScoreMask& cur, const FusedMask& warped_prev, std::span<const double> alpha);

/// Blends detections into the mask in descending score order. RGB boxes act
/// on the pixels they cover; thermal boxes act on pixels whose depth
/// reprojects into them through `thermal_T_rgb`.
FusedMask overlay_detections(FusedMask mask, std::span<const DetectionBox> rgb_dets,
                             std::span<const DetectionBox> thermal_dets, const DepthImage& depth,
                             const CameraModel& rgb_cam, const CameraModel& thermal_cam,
                             const RigidTransform& thermal_T_rgb, double epsilon_prob);

/// Per-camera-stream recurrence state. Frames must be fed in stamp order.
class ImageFusion {
 public:
  ImageFusion(Calibration calib, FusionConfig cfg);

  /// warp_previous -> temporal_smooth -> overlay_detections; the result
  /// becomes the history for the next frame.
  FusedMask process(const ScoreMask& cur_mask, const DepthImage& cur_depth, std::span<const DetectionBox> rgb_dets,
                    std::span<const DetectionBox> thermal_dets, std::optional<double> thermal_stamp,
                    std::span<const TrajectorySample> trajectory);

  void reset() { history_.reset(); }
  bool has_history() const noexcept { return history_.has_value(); }

 private:
  struct History {
    FusedMask fused;
    DepthImage depth;
    RigidTransform pose;
  };
  Calibration calib_;
  FusionConfig cfg_;
  std::optional<History> history_;
};

}  // namespace semfuse
