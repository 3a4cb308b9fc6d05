#pragma once

#include "semfuse/core.hpp"

#include <Eigen/Geometry>

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace semfuse {

/// Rigid body transform a_T_b mapping points from frame b into frame a.
class RigidTransform {
 public:
  RigidTransform() : rotation_(Eigen::Quaterniond::Identity()), translation_(Eigen::Vector3d::Zero()) {}
  /// Normalizes the quaternion; rejects non-finite or near-zero quaternions.
  RigidTransform(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Eigen::Vector3d& t) {
    return RigidTransform(Eigen::Quaterniond::Identity(), t);
  }
  static RigidTransform from_yaw(double yaw, const Eigen::Vector3d& t = Eigen::Vector3d::Zero());
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);

  const Eigen::Quaterniond& rotation() const noexcept { return rotation_; }
  const Eigen::Vector3d& translation() const noexcept { return translation_; }

  RigidTransform operator*(const RigidTransform& rhs) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }
  RigidTransform inverse() const;
  Eigen::Matrix4d matrix() const;

 private:
  Eigen::Quaterniond rotation_;
  Eigen::Vector3d translation_;
};

/// Rotation angle of the relative rotation between two transforms (radians).
double rotation_distance(const RigidTransform& a, const RigidTransform& b);

struct TrajectorySample {
  double stamp = 0.0;
  RigidTransform pose;  // world_T_base
};

struct InterpolatedPose {
  RigidTransform pose;
  bool clamped = false;  // t was outside the covered range but within slack
};

/// Linear translation and shortest-arc slerp between the bracketing samples.
/// Throws on an empty trajectory or when t lies further than `slack` seconds
/// outside the covered range.
InterpolatedPose interpolate_pose(std::span<const TrajectorySample> trajectory, double t, double slack = 0.1);

/// Stamp-sorted pose sequence with strictly increasing stamps.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<TrajectorySample> samples);

  bool empty() const noexcept { return samples_.empty(); }
  std::size_t size() const noexcept { return samples_.size(); }
  const std::vector<TrajectorySample>& samples() const noexcept { return samples_; }
  double begin_stamp() const;
  double end_stamp() const;
  bool covers(double t, double slack) const;

  RigidTransform at(double t, double slack = 0.1) const { return interpolate_pose(samples_, t, slack).pose; }

  /// Appends a sample; its stamp must exceed the last one.
  void push_back(const TrajectorySample& s);

 private:
  std::vector<TrajectorySample> samples_;
};

enum class CameraId { Rgb = 0, Thermal = 1 };
std::string_view to_string(CameraId id);

/// Rectified pinhole camera. Pixel (i, j) has its center at u = i, v = j.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  bool contains(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width - 1.0 && v <= height - 1.0;
  }
};

enum class ProjectionStatus { InImage, OutOfImage, BehindCamera };

struct Projection {
  double u = 0, v = 0, depth = 0;
  ProjectionStatus status = ProjectionStatus::BehindCamera;
  bool in_image() const noexcept { return status == ProjectionStatus::InImage; }
};

constexpr double kMinProjectionDepth = 1e-6;

Projection project_point(const CameraModel& cam, const Eigen::Vector3d& p_cam);
Eigen::Vector3d unproject(const CameraModel& cam, double u, double v, double depth);

struct RigExtrinsics {
  RigidTransform base_T_lidar;
  RigidTransform rgb_T_base;
  RigidTransform thermal_T_base;

  const RigidTransform& cam_T_base(CameraId id) const {
    return id == CameraId::Rgb ? rgb_T_base : thermal_T_base;
  }
};

/// cam_T_base * inverse(world_T_base(t_c)) * world_T_base(t_l) * base_T_lidar
RigidTransform chain_transform(const RigExtrinsics& extr, CameraId camera, std::span<const TrajectorySample> trajectory,
                               double t_c, double t_l, double slack = 0.1);

/// world_T_cam(t) = world_T_base(t) * inverse(cam_T_base)
RigidTransform camera_pose(const RigExtrinsics& extr, CameraId camera, std::span<const TrajectorySample> trajectory,
                           double t, double slack = 0.1);

struct Calibration {
  RigExtrinsics extrinsics;
  CameraModel rgb;
  CameraModel thermal;

  const CameraModel& camera(CameraId id) const { return id == CameraId::Rgb ? rgb : thermal; }

  /// {"T_base_lidar":{"q":[w,x,y,z],"t":[x,y,z]},
  ///  "cameras":{"rgb":{"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..,"T_cam_base":{..}},
  ///             "thermal":{..}}}
  static Calibration from_json(std::string_view text);
  std::string to_json() const;
};

}  // namespace semfuse
