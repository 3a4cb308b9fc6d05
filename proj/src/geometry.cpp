#include "semfuse/geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace semfuse {

RigidTransform::RigidTransform(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  const double n = rotation_.norm();
  if (!std::isfinite(n) || n < 1e-12) throw Error("invalid_transform", "quaternion is zero or non-finite");
  if (!translation_.allFinite()) throw Error("invalid_transform", "translation is non-finite");
  if (std::abs(n - 1.0) > 0.0) rotation_.coeffs() /= n;
}

RigidTransform RigidTransform::from_yaw(double yaw, const Eigen::Vector3d& t) {
  return RigidTransform(Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ())), t);
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  return RigidTransform(Eigen::Quaterniond(r), m.topRightCorner<3, 1>());
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation_ = (rotation_ * rhs.rotation_).normalized();
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation_ = rotation_.conjugate();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_.toRotationMatrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

double rotation_distance(const RigidTransform& a, const RigidTransform& b) {
  return a.rotation().angularDistance(b.rotation());
}

// ---------------------------------------------------------------------------

InterpolatedPose interpolate_pose(std::span<const TrajectorySample> trajectory, double t, double slack) {
  if (trajectory.empty()) throw Error("empty_trajectory", "cannot interpolate an empty trajectory");
  const double first = trajectory.front().stamp;
  const double last = trajectory.back().stamp;
  if (t < first - slack || t > last + slack)
    throw Error("trajectory_coverage", "stamp " + std::to_string(t) + " outside trajectory [" +
                                           std::to_string(first) + ", " + std::to_string(last) + "]");
  if (t <= first) return {trajectory.front().pose, t < first};
  if (t >= last) return {trajectory.back().pose, t > last};

  auto hi = std::upper_bound(trajectory.begin(), trajectory.end(), t,
                             [](double s, const TrajectorySample& x) { return s < x.stamp; });
  auto lo = std::prev(hi);
  if (lo->stamp == t) return {lo->pose, false};

  const double s = (t - lo->stamp) / (hi->stamp - lo->stamp);
  const Eigen::Vector3d trans = (1.0 - s) * lo->pose.translation() + s * hi->pose.translation();
  // Eigen's slerp flips the sign of the target to take the shortest arc.
  const Eigen::Quaterniond rot = lo->pose.rotation().slerp(s, hi->pose.rotation());
  return {RigidTransform(rot, trans), false};
}

Trajectory::Trajectory(std::vector<TrajectorySample> samples) : samples_(std::move(samples)) {
  for (std::size_t i = 1; i < samples_.size(); ++i)
    if (!(samples_[i].stamp > samples_[i - 1].stamp))
      throw Error("invalid_trajectory", "trajectory stamps must be strictly increasing (sample " +
                                            std::to_string(i) + ")");
}

double Trajectory::begin_stamp() const {
  if (samples_.empty()) throw Error("empty_trajectory", "trajectory is empty");
  return samples_.front().stamp;
}

double Trajectory::end_stamp() const {
  if (samples_.empty()) throw Error("empty_trajectory", "trajectory is empty");
  return samples_.back().stamp;
}

bool Trajectory::covers(double t, double slack) const {
  return !samples_.empty() && t >= samples_.front().stamp - slack && t <= samples_.back().stamp + slack;
}

void Trajectory::push_back(const TrajectorySample& s) {
  if (!samples_.empty() && !(s.stamp > samples_.back().stamp))
    throw Error("invalid_trajectory", "trajectory stamps must be strictly increasing");
  samples_.push_back(s);
}

std::string_view to_string(CameraId id) { return id == CameraId::Rgb ? "rgb" : "thermal"; }

// ---------------------------------------------------------------------------

void CameraModel::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw Error("invalid_camera", "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error("invalid_camera", "image size must be positive");
  if (!(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height))
    throw Error("invalid_camera", "principal point outside the image");
}

Projection project_point(const CameraModel& cam, const Eigen::Vector3d& p_cam) {
  Projection out;
  if (!(p_cam.z() > kMinProjectionDepth)) return out;
  out.depth = p_cam.z();
  out.u = cam.fx * p_cam.x() / p_cam.z() + cam.cx;
  out.v = cam.fy * p_cam.y() / p_cam.z() + cam.cy;
  out.status = cam.contains(out.u, out.v) ? ProjectionStatus::InImage : ProjectionStatus::OutOfImage;
  return out;
}

Eigen::Vector3d unproject(const CameraModel& cam, double u, double v, double depth) {
  return {(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth};
}

RigidTransform chain_transform(const RigExtrinsics& extr, CameraId camera, std::span<const TrajectorySample> trajectory,
                               double t_c, double t_l, double slack) {
  const RigidTransform& cam_T_base = extr.cam_T_base(camera);
  if (t_c == t_l) return cam_T_base * extr.base_T_lidar;
  const RigidTransform world_T_base_c = interpolate_pose(trajectory, t_c, slack).pose;
  const RigidTransform world_T_base_l = interpolate_pose(trajectory, t_l, slack).pose;
  return cam_T_base * (world_T_base_c.inverse() * world_T_base_l) * extr.base_T_lidar;
}

RigidTransform camera_pose(const RigExtrinsics& extr, CameraId camera, std::span<const TrajectorySample> trajectory,
                           double t, double slack) {
  return interpolate_pose(trajectory, t, slack).pose * extr.cam_T_base(camera).inverse();
}

// ---------------------------------------------------------------------------

namespace {

RigidTransform transform_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.contains("q") || !j.contains("t") || j["q"].size() != 4 || j["t"].size() != 3)
    throw Error("invalid_calibration", path + ": expected {\"q\":[w,x,y,z],\"t\":[x,y,z]}");
  const auto& q = j["q"];
  const auto& t = j["t"];
  return RigidTransform(Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()),
                        Eigen::Vector3d(t[0].get<double>(), t[1].get<double>(), t[2].get<double>()));
}

nlohmann::json transform_to_json(const RigidTransform& tf) {
  const auto& q = tf.rotation();
  const auto& t = tf.translation();
  return {{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", {t.x(), t.y(), t.z()}}};
}

CameraModel camera_from_json(const nlohmann::json& j, const std::string& path) {
  CameraModel cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_calibration", path + ": " + e.what());
  }
  cam.validate();
  return cam;
}

nlohmann::json camera_to_json(const CameraModel& cam, const RigidTransform& cam_T_base) {
  return {{"fx", cam.fx},       {"fy", cam.fy},         {"cx", cam.cx},
          {"cy", cam.cy},       {"width", cam.width},   {"height", cam.height},
          {"T_cam_base", transform_to_json(cam_T_base)}};
}

}  // namespace

Calibration Calibration::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_calibration", std::string("calibration JSON: ") + e.what());
  }
  Calibration c;
  if (!doc.contains("T_base_lidar")) throw Error("invalid_calibration", "missing T_base_lidar");
  c.extrinsics.base_T_lidar = transform_from_json(doc["T_base_lidar"], "T_base_lidar");
  for (const char* name : {"rgb", "thermal"}) {
    const std::string path = std::string("cameras.") + name;
    if (!doc.contains("cameras") || !doc["cameras"].contains(name))
      throw Error("invalid_calibration", "missing " + path);
    const auto& j = doc["cameras"][name];
    CameraModel cam = camera_from_json(j, path);
    if (!j.contains("T_cam_base")) throw Error("invalid_calibration", "missing " + path + ".T_cam_base");
    RigidTransform tf = transform_from_json(j["T_cam_base"], path + ".T_cam_base");
    if (std::string(name) == "rgb") {
      c.rgb = cam;
      c.extrinsics.rgb_T_base = tf;
    } else {
      c.thermal = cam;
      c.extrinsics.thermal_T_base = tf;
    }
  }
  return c;
}

std::string Calibration::to_json() const {
  nlohmann::json doc;
  doc["T_base_lidar"] = transform_to_json(extrinsics.base_T_lidar);
  doc["cameras"]["rgb"] = camera_to_json(rgb, extrinsics.rgb_T_base);
  doc["cameras"]["thermal"] = camera_to_json(thermal, extrinsics.thermal_T_base);
  return doc.dump();
}

}  // namespace semfuse
