#include "semfuse/simulator.hpp"

#include "semfuse/voxel_map.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace semfuse {

using nlohmann::json;

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::GroundPlane: return "ground-plane";
    case ShapeKind::Box: return "box";
    case ShapeKind::Cylinder: return "cylinder";
  }
  return "?";
}

RigidTransform ScenePrimitive::pose_at(double t) const {
  if (dynamic_path.empty()) return pose;
  Eigen::Vector3d p;
  if (t <= dynamic_path.front().stamp) {
    p = dynamic_path.front().position;
  } else if (t >= dynamic_path.back().stamp) {
    p = dynamic_path.back().position;
  } else {
    auto it = std::upper_bound(dynamic_path.begin(), dynamic_path.end(), t,
                               [](double s, const Waypoint& w) { return s < w.stamp; });
    const Waypoint& b = *it;
    const Waypoint& a = *(it - 1);
    const double s = (t - a.stamp) / (b.stamp - a.stamp);
    p = a.position + s * (b.position - a.position);
  }
  return RigidTransform(pose.rotation(), p);
}

std::string Scene::digest() const {
  std::string text;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g,", v);
    text += buf;
  };
  num(static_cast<double>(classes));
  for (const auto& p : primitives) {
    text += to_string(p.shape);
    text += ':';
    num(p.class_id);
    const auto& q = p.pose.rotation();
    for (double v : {q.w(), q.x(), q.y(), q.z()}) num(v);
    for (int i = 0; i < 3; ++i) num(p.pose.translation()[i]);
    for (int i = 0; i < 3; ++i) num(p.dimensions[i]);
    for (const auto& w : p.dynamic_path) {
      num(w.stamp);
      for (int i = 0; i < 3; ++i) num(w.position[i]);
    }
    text += ';';
  }
  return sha256_hex(text);
}

// ---------------------------------------------------------------------------
// scene spec parsing

namespace {

[[noreturn]] void spec_error(const std::string& path, const std::string& what) {
  throw Error("invalid_spec", path + ": " + what);
}

double number(const json& j, const std::string& key, const std::string& path, std::optional<double> fallback = {}) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    spec_error(path + "." + key, "missing");
  }
  if (!j[key].is_number()) spec_error(path + "." + key, "expected a number");
  return j[key].get<double>();
}

double positive(const json& j, const std::string& key, const std::string& path, std::optional<double> fallback = {}) {
  const double v = number(j, key, path, fallback);
  if (!(v > 0.0) || !std::isfinite(v)) spec_error(path + "." + key, "must be positive");
  return v;
}

Eigen::VectorXd vec(const json& j, const std::string& key, const std::string& path, int n) {
  if (!j.contains(key)) spec_error(path + "." + key, "missing");
  const json& a = j[key];
  if (!a.is_array() || static_cast<int>(a.size()) != n)
    spec_error(path + "." + key, "expected an array of " + std::to_string(n) + " numbers");
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    if (!a[i].is_number()) spec_error(path + "." + key + "[" + std::to_string(i) + "]", "expected a number");
    v[i] = a[i].get<double>();
  }
  return v;
}

ClassId class_of(const json& j, const std::string& path, const ClassRegistry& registry, const char* fallback = nullptr) {
  std::string name;
  if (j.contains("class")) {
    if (!j["class"].is_string()) spec_error(path + ".class", "expected a class name");
    name = j["class"].get<std::string>();
  } else if (fallback) {
    name = fallback;
  } else {
    spec_error(path + ".class", "missing");
  }
  auto id = registry.find(name);
  if (!id) spec_error(path + ".class", "unknown class '" + name + "'");
  return *id;
}

std::vector<Waypoint> parse_path(const json& j, const std::string& path) {
  std::vector<Waypoint> out;
  if (!j.is_array()) spec_error(path, "expected an array of waypoints");
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    Waypoint w;
    w.stamp = number(j[i], "t", p);
    w.position = vec(j[i], "position", p, 3);
    if (!out.empty() && !(w.stamp > out.back().stamp)) spec_error(p + ".t", "waypoint stamps must increase");
    out.push_back(w);
  }
  return out;
}

ScenePrimitive parse_primitive(const json& j, const std::string& path, const ClassRegistry& registry) {
  if (!j.is_object()) spec_error(path, "expected an object");
  if (!j.contains("shape") || !j["shape"].is_string()) spec_error(path + ".shape", "expected \"box\" or \"cylinder\"");
  const std::string shape = j["shape"].get<std::string>();
  ScenePrimitive p;
  p.class_id = class_of(j, path, registry);
  const Eigen::Vector3d center = vec(j, "center", path, 3);
  const double yaw = number(j, "yaw_deg", path, 0.0) * std::numbers::pi / 180.0;
  p.pose = RigidTransform::from_yaw(yaw, center);
  if (shape == "box") {
    p.shape = ShapeKind::Box;
    const Eigen::Vector3d size = vec(j, "size", path, 3);
    for (int i = 0; i < 3; ++i)
      if (!(size[i] > 0.0)) spec_error(path + ".size[" + std::to_string(i) + "]", "must be positive");
    p.dimensions = size;
  } else if (shape == "cylinder") {
    p.shape = ShapeKind::Cylinder;
    const double r = positive(j, "radius", path);
    const double h = positive(j, "height", path);
    p.dimensions = Eigen::Vector3d(2 * r, 2 * r, h);
  } else {
    spec_error(path + ".shape", "unknown shape '" + shape + "'");
  }
  if (j.contains("path")) p.dynamic_path = parse_path(j["path"], path + ".path");
  return p;
}

// Distance in the xy plane from a point to a primitive's footprint.
double footprint_distance(const ScenePrimitive& prim, const Eigen::Vector2d& q, double t) {
  const RigidTransform pose = prim.pose_at(t);
  if (prim.shape == ShapeKind::Cylinder)
    return std::max(0.0, (q - pose.translation().head<2>()).norm() - 0.5 * prim.dimensions.x());
  const Eigen::Vector3d local = pose.inverse() * Eigen::Vector3d(q.x(), q.y(), pose.translation().z());
  const double dx = std::max(0.0, std::abs(local.x()) - 0.5 * prim.dimensions.x());
  const double dy = std::max(0.0, std::abs(local.y()) - 0.5 * prim.dimensions.y());
  return std::hypot(dx, dy);
}

// Footprint centers visited along a path, sampled every <= 0.1 m.
std::vector<Eigen::Vector2d> swept_centers(const ScenePrimitive& prim) {
  std::vector<Eigen::Vector2d> out;
  if (!prim.is_dynamic()) {
    out.push_back(prim.pose.translation().head<2>());
    return out;
  }
  out.push_back(prim.dynamic_path.front().position.head<2>());
  for (std::size_t i = 1; i < prim.dynamic_path.size(); ++i) {
    const Eigen::Vector2d a = prim.dynamic_path[i - 1].position.head<2>();
    const Eigen::Vector2d b = prim.dynamic_path[i].position.head<2>();
    const int steps = std::max(1, static_cast<int>(std::ceil((b - a).norm() / 0.1)));
    for (int s = 1; s <= steps; ++s) out.push_back(a + (b - a) * (static_cast<double>(s) / steps));
  }
  return out;
}

bool separated(const ScenePrimitive& person, const std::vector<ScenePrimitive>& others, double min_sep) {
  const double r = 0.5 * person.dimensions.x();
  const auto mine = swept_centers(person);
  for (const auto& o : others) {
    if (o.shape == ShapeKind::GroundPlane) continue;
    if (o.is_dynamic()) {
      const double ro = 0.5 * o.dimensions.x();
      for (const auto& c : swept_centers(o))
        for (const auto& m : mine)
          if ((c - m).norm() - r - ro < min_sep) return false;
    } else {
      for (const auto& m : mine)
        if (footprint_distance(o, m, 0.0) - r < min_sep) return false;
    }
  }
  return true;
}

void add_random_persons(const json& j, const ClassRegistry& registry, std::uint64_t seed, Scene& scene) {
  const std::string path = "random_persons";
  if (!j.is_object()) spec_error(path, "expected an object");
  const double count_d = number(j, "count", path, 0.0);
  if (count_d < 0 || count_d != std::floor(count_d)) spec_error(path + ".count", "must be a non-negative integer");
  const auto count = static_cast<std::size_t>(count_d);
  const Eigen::Vector2d lo = vec(j, "min", path, 2), hi = vec(j, "max", path, 2);
  if (!(lo.array() < hi.array()).all()) spec_error(path + ".max", "must exceed min componentwise");
  const double dynamic_fraction = number(j, "dynamic_fraction", path, 0.0);
  if (dynamic_fraction < 0 || dynamic_fraction > 1) spec_error(path + ".dynamic_fraction", "must lie in [0, 1]");
  const double speed = positive(j, "speed", path, 1.2);
  const double duration = positive(j, "duration", path, 5.0);
  const double radius = positive(j, "radius", path, 0.3);
  const double height = positive(j, "height", path, 1.8);
  const double base = number(j, "base_height", path, 0.0);
  const double min_sep = number(j, "min_separation", path, 0.5);
  if (min_sep < 0) spec_error(path + ".min_separation", "must be non-negative");
  const ClassId cls = class_of(j, path, registry, "person");

  std::mt19937_64 rng(frame_seed(seed, 0x5ce4e, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const bool dynamic = unit(rng) < dynamic_fraction;
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      const Eigen::Vector2d xy(lo.x() + (hi.x() - lo.x()) * unit(rng), lo.y() + (hi.y() - lo.y()) * unit(rng));
      const double heading = 2.0 * std::numbers::pi * unit(rng);
      ScenePrimitive p;
      p.shape = ShapeKind::Cylinder;
      p.class_id = cls;
      p.dimensions = Eigen::Vector3d(2 * radius, 2 * radius, height);
      const Eigen::Vector3d start(xy.x(), xy.y(), base + 0.5 * height);
      p.pose = RigidTransform::from_translation(start);
      if (dynamic) {
        const Eigen::Vector3d end = start + speed * duration * Eigen::Vector3d(std::cos(heading), std::sin(heading), 0);
        p.dynamic_path = {{0.0, start}, {duration, end}};
      }
      if (separated(p, scene.primitives, min_sep)) {
        scene.primitives.push_back(std::move(p));
        placed = true;
      }
    }
    if (!placed) spec_error(path, "could not place person " + std::to_string(i) + " with the requested separation");
  }
}

}  // namespace

Scene generate_scene(std::string_view spec_json, const ClassRegistry& registry, std::uint64_t seed) {
  json spec;
  try {
    spec = spec_json.empty() ? json::object() : json::parse(spec_json);
  } catch (const json::exception& e) {
    throw Error("invalid_spec", std::string("scene: ") + e.what());
  }
  if (!spec.is_object()) spec_error("scene", "expected an object");
  Scene scene;
  scene.classes = registry.size();

  if (!spec.contains("ground") || !spec["ground"].is_null()) {
    const json g = spec.value("ground", json::object());
    if (!g.is_object()) spec_error("ground", "expected an object or null");
    ScenePrimitive ground;
    ground.shape = ShapeKind::GroundPlane;
    ground.class_id = class_of(g, "ground", registry, "road");
    ground.pose = RigidTransform::from_translation(Eigen::Vector3d(0, 0, number(g, "height", "ground", 0.0)));
    scene.primitives.push_back(ground);
  }
  if (spec.contains("primitives")) {
    const json& prims = spec["primitives"];
    if (!prims.is_array()) spec_error("primitives", "expected an array");
    for (std::size_t i = 0; i < prims.size(); ++i)
      scene.primitives.push_back(parse_primitive(prims[i], "primitives[" + std::to_string(i) + "]", registry));
  }
  if (spec.contains("random_persons")) add_random_persons(spec["random_persons"], registry, seed, scene);
  return scene;
}

// ---------------------------------------------------------------------------
// ray casting

namespace {

std::optional<double> intersect_plane(const ScenePrimitive& prim, const RigidTransform& pose, const Eigen::Vector3d& o,
                                      const Eigen::Vector3d& d) {
  const Eigen::Vector3d n = pose.rotation() * Eigen::Vector3d::UnitZ();
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  (void)prim;
  return n.dot(pose.translation() - o) / denom;
}

// Smallest root above `t_min` of the slab test, or the exit when the origin is inside.
std::optional<double> intersect_box(const Eigen::Vector3d& half, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                    double t_min) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < -half[i] || o[i] > half[i]) return std::nullopt;
      continue;
    }
    double a = (-half[i] - o[i]) / d[i];
    double b = (half[i] - o[i]) / d[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  if (t0 > t_min) return t0;
  if (t1 > t_min) return t1;
  return std::nullopt;
}

std::optional<double> intersect_cylinder(double r, double half_h, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                         double t_min) {
  std::optional<double> best;
  auto consider = [&](double t) {
    if (t > t_min && (!best || t < *best)) best = t;
  };
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = o.x() * d.x() + o.y() * d.y();
    const double c = o.x() * o.x() + o.y() * o.y() - r * r;
    const double disc = b * b - a * c;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      for (double t : {(-b - s) / a, (-b + s) / a})
        if (std::abs(o.z() + t * d.z()) <= half_h) consider(t);
    }
  }
  if (std::abs(d.z()) > 1e-15) {
    for (double zc : {-half_h, half_h}) {
      const double t = (zc - o.z()) / d.z();
      const double x = o.x() + t * d.x(), y = o.y() + t * d.y();
      if (x * x + y * y <= r * r) consider(t);
    }
  }
  return best;
}

}  // namespace

std::optional<RayHit> cast_ray(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction,
                               double t, double min_range, double max_range) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const auto& prim = scene.primitives[i];
    const RigidTransform pose = prim.pose_at(t);
    std::optional<double> range;
    if (prim.shape == ShapeKind::GroundPlane) {
      range = intersect_plane(prim, pose, origin, direction);
      if (range && !(*range > min_range)) range.reset();
    } else {
      const Eigen::Quaterniond inv = pose.rotation().conjugate();
      const Eigen::Vector3d o = inv * (origin - pose.translation());
      const Eigen::Vector3d d = inv * direction;
      if (prim.shape == ShapeKind::Box)
        range = intersect_box(0.5 * prim.dimensions, o, d, min_range);
      else
        range = intersect_cylinder(0.5 * prim.dimensions.x(), 0.5 * prim.dimensions.z(), o, d, min_range);
    }
    if (!range || *range > max_range) continue;
    if (!best || *range < best->range) best = RayHit{*range, i, prim.class_id};
  }
  return best;
}

std::optional<ClassId> nearest_surface_class(const Scene& scene, const Eigen::Vector3d& p, double t) {
  std::optional<ClassId> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& prim : scene.primitives) {
    const RigidTransform pose = prim.pose_at(t);
    double dist = 0.0;
    if (prim.shape == ShapeKind::GroundPlane) {
      dist = std::abs((pose.rotation() * Eigen::Vector3d::UnitZ()).dot(p - pose.translation()));
    } else {
      const Eigen::Vector3d l = pose.inverse() * p;
      Eigen::Vector3d q;
      if (prim.shape == ShapeKind::Box) {
        q = l.cwiseAbs() - 0.5 * prim.dimensions;
      } else {
        q = Eigen::Vector3d(l.head<2>().norm() - 0.5 * prim.dimensions.x(), std::abs(l.z()) - 0.5 * prim.dimensions.z(),
                            -std::numeric_limits<double>::infinity());
      }
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      dist = std::abs(outside + inside);
    }
    if (dist < best_d) {
      best_d = dist;
      best = prim.class_id;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// noise

void SensorNoiseModel::validate(std::size_t classes) const {
  auto fail = [](const std::string& f, const std::string& w) { throw Error("invalid_config", "noise." + f + ": " + w); };
  if (!(score_concentration > 0.0)) fail("score_concentration", "must be positive");
  if (!(mislabel_rate >= 0.0 && mislabel_rate <= 1.0)) fail("mislabel_rate", "must lie in [0, 1]");
  if (!(detection_recall >= 0.0 && detection_recall <= 1.0)) fail("detection_recall", "must lie in [0, 1]");
  if (!(detection_score_min >= 0.0 && detection_score_min <= detection_score_max && detection_score_max <= 1.0))
    fail("detection_score_range", "must satisfy 0 <= lo <= hi <= 1");
  if (!(range_noise_sigma >= 0.0) || !std::isfinite(range_noise_sigma)) fail("range_noise_sigma", "must be >= 0");
  std::vector<double> total(classes, 0.0);
  for (std::size_t i = 0; i < confusions.size(); ++i) {
    const auto& c = confusions[i];
    const std::string f = "confusions[" + std::to_string(i) + "]";
    if (c.from < 0 || c.to < 0 || static_cast<std::size_t>(c.from) >= classes ||
        static_cast<std::size_t>(c.to) >= classes)
      fail(f, "class out of range");
    if (!(c.rate >= 0.0 && c.rate <= 1.0)) fail(f + ".rate", "must lie in [0, 1]");
    total[static_cast<std::size_t>(c.from)] += c.rate;
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (total[c] > 1.0 + 1e-12) fail("confusions", "rates of one source class sum above 1");
}

ClassId sample_observed_label(const SensorNoiseModel& noise, ClassId truth, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  const double v = unit(rng);
  double acc = 0.0;
  for (const auto& c : noise.confusions) {
    if (c.from != truth) continue;
    acc += c.rate;
    if (u < acc) return c.to;
  }
  if (classes > 1 && v < noise.mislabel_rate) {
    auto other = static_cast<ClassId>(std::uniform_int_distribution<std::size_t>(0, classes - 2)(rng));
    return other >= truth ? other + 1 : other;
  }
  return truth;
}

ProbabilityVector sample_scores(const SensorNoiseModel& noise, ClassId target, std::size_t classes,
                                std::mt19937_64& rng) {
  if (std::isinf(noise.score_concentration)) return ProbabilityVector::one_hot(classes, target, 0.0);
  Eigen::VectorXd g(static_cast<Eigen::Index>(classes));
  std::gamma_distribution<double> peak(1.0 + noise.score_concentration, 1.0);
  std::gamma_distribution<double> flat(1.0, 1.0);
  for (std::size_t c = 0; c < classes; ++c)
    g[static_cast<Eigen::Index>(c)] = static_cast<ClassId>(c) == target ? peak(rng) : flat(rng);
  return ProbabilityVector::normalized(std::move(g));
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

std::array<double, 5> ChannelNormalization::apply(const Eigen::Vector3d& p, double intensity) const {
  return {(p.norm() - range_mean) / range_std, (p.x() - x_mean) / x_std, (p.y() - y_mean) / y_std,
          (p.z() - z_mean) / z_std, (intensity - intensity_mean) / intensity_std};
}

void LidarModel::validate() const {
  auto fail = [](const std::string& f, const std::string& w) { throw Error("invalid_config", "lidar." + f + ": " + w); };
  if (rings < 1) fail("rings", "must be >= 1");
  if (beams < 1) fail("beams", "must be >= 1");
  if (!(vfov_min_deg < vfov_max_deg) || vfov_min_deg < -90.0 || vfov_max_deg > 90.0)
    fail("vfov_deg", "must satisfy -90 <= lo < hi <= 90");
  if (!(min_range >= 0.0 && min_range < max_range)) fail("min_range", "must satisfy 0 <= min < max");
  if (!(sweep_period > 0.0)) fail("sweep_period", "must be positive");
  for (double s : {normalization.range_std, normalization.x_std, normalization.y_std, normalization.z_std,
                   normalization.intensity_std})
    if (!(s > 0.0)) fail("normalization", "standard deviations must be positive");
}

// ---------------------------------------------------------------------------
// rendering

LidarRender render_lidar(const Scene& scene, std::span<const TrajectorySample> trajectory,
                         const RigidTransform& base_T_lidar, double t, const LidarModel& model,
                         const SensorNoiseModel& noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> range_noise(0.0, 1.0);
  const double deg = std::numbers::pi / 180.0;
  std::vector<Eigen::Vector3d> ring_dirs(static_cast<std::size_t>(model.rings));
  std::vector<double> elev(static_cast<std::size_t>(model.rings));
  for (int r = 0; r < model.rings; ++r) {
    elev[static_cast<std::size_t>(r)] =
        model.rings == 1 ? 0.5 * (model.vfov_min_deg + model.vfov_max_deg) * deg
                         : (model.vfov_min_deg + (model.vfov_max_deg - model.vfov_min_deg) * r / (model.rings - 1)) * deg;
  }

  LidarRender out;
  out.cloud.scan_stamp = t;
  out.cloud.frame = CloudFrame::Lidar;
  for (int k = 0; k < model.beams; ++k) {
    const double offset = model.sweep_period * k / model.beams;
    const RigidTransform world_T_lidar = interpolate_pose(trajectory, t + offset).pose * base_T_lidar;
    const double az = 2.0 * std::numbers::pi * k / model.beams;
    for (int r = 0; r < model.rings; ++r) {
      const double e = elev[static_cast<std::size_t>(r)];
      const Eigen::Vector3d dir(std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e));
      const Eigen::Vector3d wdir = world_T_lidar.rotation() * dir;
      const auto hit = cast_ray(scene, world_T_lidar.translation(), wdir, t + offset, model.min_range, model.max_range);
      if (!hit) continue;
      double range = hit->range;
      if (noise.range_noise_sigma > 0.0) range += noise.range_noise_sigma * range_noise(rng);
      SemanticPoint p;
      p.position = dir * range;
      p.intensity = 100.0 / (1.0 + hit->range);
      p.stamp_offset = offset;
      const ClassId observed = sample_observed_label(noise, hit->class_id, scene.classes, rng);
      p.set_scores(sample_scores(noise, observed, scene.classes, rng));
      out.cloud.points.push_back(std::move(p));
      out.truth.push_back(hit->class_id);
      out.world.push_back(world_T_lidar.translation() + wdir * hit->range);
    }
  }
  return out;
}

CameraRender render_camera(const Scene& scene, const RigidTransform& world_T_cam, const CameraModel& cam, double t,
                           const SensorNoiseModel& noise, const CameraRenderOptions& options, std::uint64_t seed) {
  cam.validate();
  std::mt19937_64 rng(seed);
  const auto n = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  CameraRender out;
  out.depth = DepthImage(cam.width, cam.height, t);
  out.truth.assign(n, options.sky_class);
  out.primitive.assign(n, -1);
  if (options.render_mask) out.mask = ScoreMask(cam.width, cam.height, scene.classes, t);

  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const Eigen::Vector3d ray((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      const double len = ray.norm();
      const Eigen::Vector3d wdir = world_T_cam.rotation() * (ray / len);
      const std::size_t idx = static_cast<std::size_t>(v) * static_cast<std::size_t>(cam.width) + static_cast<std::size_t>(u);
      if (auto hit = cast_ray(scene, world_T_cam.translation(), wdir, t, 1e-3)) {
        out.depth.at(u, v) = hit->range / len;
        out.truth[idx] = hit->class_id;
        out.primitive[idx] = static_cast<std::int64_t>(hit->primitive);
      }
      if (options.render_mask) {
        const ClassId observed = sample_observed_label(noise, out.truth[idx], scene.classes, rng);
        out.mask.set_pixel(u, v, sample_scores(noise, observed, scene.classes, rng));
      }
    }
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const auto& prim = scene.primitives[i];
    if (std::find(options.detectable.begin(), options.detectable.end(), prim.class_id) == options.detectable.end())
      continue;
    int u0 = cam.width, v0 = cam.height, u1 = -1, v1 = -1;
    for (int v = 0; v < cam.height; ++v)
      for (int u = 0; u < cam.width; ++u)
        if (out.primitive[static_cast<std::size_t>(v) * static_cast<std::size_t>(cam.width) + static_cast<std::size_t>(u)] ==
            static_cast<std::int64_t>(i)) {
          u0 = std::min(u0, u), v0 = std::min(v0, v), u1 = std::max(u1, u), v1 = std::max(v1, v);
        }
    if (u1 < 0) continue;
    const double keep = unit(rng);
    const double score = noise.detection_score_min + (noise.detection_score_max - noise.detection_score_min) * unit(rng);
    if (keep >= noise.detection_recall) continue;
    out.detections.emplace_back(prim.class_id, score, u0 - 0.5, v0 - 0.5, u1 + 0.5, v1 + 0.5, options.camera);
  }
  return out;
}

Calibration default_calibration() {
  Calibration c;
  c.extrinsics.base_T_lidar = RigidTransform::from_translation(Eigen::Vector3d(0.0, 0.0, -0.1));
  const double pitch = 30.0 * std::numbers::pi / 180.0;
  Eigen::Matrix3d r;
  // Columns: camera x (right), y (down), z (forward and down) in the base frame.
  r.col(0) = Eigen::Vector3d(0, -1, 0);
  r.col(2) = Eigen::Vector3d(std::cos(pitch), 0, -std::sin(pitch));
  r.col(1) = r.col(2).cross(r.col(0));
  const Eigen::Quaterniond q(r);
  c.extrinsics.rgb_T_base = RigidTransform(q, Eigen::Vector3d(0.1, 0.0, -0.15)).inverse();
  c.extrinsics.thermal_T_base = RigidTransform(q, Eigen::Vector3d(0.1, 0.05, -0.15)).inverse();
  c.rgb = CameraModel{100.0, 100.0, 79.5, 59.5, 160, 120};
  c.thermal = CameraModel{90.0, 90.0, 63.5, 47.5, 128, 96};
  return c;
}

// ---------------------------------------------------------------------------
// flights

void FlightSpec::validate(std::size_t classes) const {
  auto fail = [](const std::string& f, const std::string& w) { throw Error("invalid_config", "flight." + f + ": " + w); };
  if (waypoints.size() < 2) fail("waypoints", "need at least two");
  for (std::size_t i = 1; i < waypoints.size(); ++i)
    if (!(waypoints[i].stamp > waypoints[i - 1].stamp)) fail("waypoints[" + std::to_string(i) + "].t", "must increase");
  if (!yaw_deg.empty() && yaw_deg.size() != waypoints.size()) fail("yaw_deg", "one value per waypoint");
  if (!(rates.lidar_hz > 0 && rates.rgb_hz > 0 && rates.thermal_hz > 0)) fail("rates", "must be positive");
  if (!(trajectory_rate > 0)) fail("trajectory_rate", "must be positive");
  if (!(trajectory_margin >= lidar.sweep_period)) fail("trajectory_margin", "must cover one sweep period");
  if (!(gt_voxel_size > 0)) fail("gt_voxel_size", "must be positive");
  lidar.validate();
  noise.lidar.validate(classes);
  noise.rgb.validate(classes);
  noise.thermal.validate(classes);
  calibration.rgb.validate();
  calibration.thermal.validate();
}

namespace {

RigidTransform base_pose(const FlightSpec& f, double t) {
  const auto& w = f.waypoints;
  std::size_t seg = 0;
  while (seg + 2 < w.size() && t >= w[seg + 1].stamp) ++seg;
  const double s = std::clamp((t - w[seg].stamp) / (w[seg + 1].stamp - w[seg].stamp), 0.0, 1.0);
  const Eigen::Vector3d p = w[seg].position + s * (w[seg + 1].position - w[seg].position);
  double yaw = 0.0;
  if (!f.yaw_deg.empty()) {
    yaw = (f.yaw_deg[seg] + s * (f.yaw_deg[seg + 1] - f.yaw_deg[seg])) * std::numbers::pi / 180.0;
  } else {
    const Eigen::Vector3d d = w[seg + 1].position - w[seg].position;
    if (d.head<2>().norm() > 1e-9) yaw = std::atan2(d.y(), d.x());
  }
  return RigidTransform::from_yaw(yaw, p);
}

std::vector<double> frame_stamps(double begin, double end, double hz) {
  std::vector<double> out;
  for (std::size_t k = 0;; ++k) {
    const double t = begin + static_cast<double>(k) / hz;
    if (t >= end - 1e-12) break;
    out.push_back(t);
  }
  return out;
}

std::vector<ClassId> detectable_classes(const ClassRegistry& registry) {
  std::vector<ClassId> out;
  for (const char* name : {"person", "bicycle", "vehicle"})
    if (auto id = registry.find(name)) out.push_back(*id);
  return out;
}

}  // namespace

Recording generate_flight(const Scene& scene, const FlightSpec& flight, const ClassRegistry& registry,
                          std::uint64_t seed) {
  if (scene.classes != registry.size()) throw Error("class_mismatch", "scene and registry differ in class count");
  flight.validate(registry.size());
  const std::size_t C = registry.size();

  Recording rec;
  rec.registry = registry;
  rec.calibration = flight.calibration;
  rec.rates = flight.rates;
  rec.sweep_period = flight.lidar.sweep_period;

  const double t0 = flight.begin() - flight.trajectory_margin;
  const double t1 = flight.end() + flight.trajectory_margin;
  const auto samples = static_cast<std::size_t>(std::floor((t1 - t0) * flight.trajectory_rate + 1e-9)) + 1;
  for (std::size_t i = 0; i < samples; ++i) {
    const double t = t0 + static_cast<double>(i) / flight.trajectory_rate;
    rec.trajectory.push_back({t, base_pose(flight, t)});
  }

  MapOptions gt_opts;
  gt_opts.voxel_size = flight.gt_voxel_size;
  gt_opts.horizon = 0;
  VoxelMap gt(C, gt_opts);

  const auto& extr = flight.calibration.extrinsics;
  const auto scan_stamps = frame_stamps(flight.begin(), flight.end(), flight.rates.lidar_hz);
  for (std::size_t k = 0; k < scan_stamps.size(); ++k) {
    auto render = render_lidar(scene, rec.trajectory, extr.base_T_lidar, scan_stamps[k], flight.lidar,
                               flight.noise.lidar, frame_seed(seed, 1, k));
    SemanticCloud truth_cloud;
    truth_cloud.scan_stamp = scan_stamps[k];
    truth_cloud.frame = CloudFrame::World;
    truth_cloud.points.resize(render.world.size());
    for (std::size_t i = 0; i < render.world.size(); ++i) {
      truth_cloud.points[i].position = render.world[i];
      truth_cloud.points[i].set_scores(ProbabilityVector::one_hot(C, render.truth[i], 0.0));
    }
    gt.integrate_cloud(truth_cloud, static_cast<std::int64_t>(k));
    rec.scans.push_back({scan_stamps[k], std::move(render.cloud)});
  }

  CameraRenderOptions rgb_opts;
  rgb_opts.camera = CameraId::Rgb;
  rgb_opts.detectable = detectable_classes(registry);
  rgb_opts.sky_class = registry.find("sky").value_or(0);
  const auto rgb_stamps = frame_stamps(flight.begin(), flight.end(), flight.rates.rgb_hz);
  for (std::size_t k = 0; k < rgb_stamps.size(); ++k) {
    const double t = rgb_stamps[k];
    auto r = render_camera(scene, camera_pose(extr, CameraId::Rgb, rec.trajectory, t), flight.calibration.rgb, t,
                           flight.noise.rgb, rgb_opts, frame_seed(seed, 2, k));
    rec.rgb.push_back({t, std::move(r.mask), std::move(r.depth), std::move(r.detections)});
  }

  CameraRenderOptions th_opts = rgb_opts;
  th_opts.camera = CameraId::Thermal;
  th_opts.render_mask = false;
  const auto th_stamps = frame_stamps(flight.begin(), flight.end(), flight.rates.thermal_hz);
  for (std::size_t k = 0; k < th_stamps.size(); ++k) {
    const double t = th_stamps[k];
    auto r = render_camera(scene, camera_pose(extr, CameraId::Thermal, rec.trajectory, t), flight.calibration.thermal,
                           t, flight.noise.thermal, th_opts, frame_seed(seed, 3, k));
    rec.thermal.push_back({t, std::move(r.detections)});
  }

  rec.ground_truth = LoadedMap{flight.gt_voxel_size, registry, gt.export_map()};
  return rec;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error("invalid_config", path + ": " + what);
}

double cfg_number(const json& j, const std::string& key, const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) config_error(path + "." + key, "expected a number");
  return j[key].get<double>();
}

SensorNoiseModel noise_from(const json& j, const ClassRegistry& registry, const std::string& path) {
  if (!j.is_object()) config_error(path, "expected an object");
  SensorNoiseModel n;
  if (j.contains("score_concentration")) {
    const json& k = j["score_concentration"];
    if (k.is_string() && (k.get<std::string>() == "inf" || k.get<std::string>() == "infinity"))
      n.score_concentration = std::numeric_limits<double>::infinity();
    else if (k.is_number())
      n.score_concentration = k.get<double>();
    else
      config_error(path + ".score_concentration", "expected a number or \"inf\"");
  }
  n.mislabel_rate = cfg_number(j, "mislabel_rate", path, n.mislabel_rate);
  n.detection_recall = cfg_number(j, "detection_recall", path, n.detection_recall);
  n.range_noise_sigma = cfg_number(j, "range_noise_sigma", path, n.range_noise_sigma);
  if (j.contains("detection_score_range")) {
    const json& r = j["detection_score_range"];
    if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number())
      config_error(path + ".detection_score_range", "expected [lo, hi]");
    n.detection_score_min = r[0].get<double>();
    n.detection_score_max = r[1].get<double>();
  }
  if (j.contains("confusions")) {
    const json& cs = j["confusions"];
    if (!cs.is_array()) config_error(path + ".confusions", "expected an array");
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const std::string p = path + ".confusions[" + std::to_string(i) + "]";
      ConfusionPair c;
      for (const char* key : {"from", "to"}) {
        if (!cs[i].contains(key) || !cs[i][key].is_string()) config_error(p + "." + key, "expected a class name");
        auto id = registry.find(cs[i][key].get<std::string>());
        if (!id) config_error(p + "." + key, "unknown class '" + cs[i][key].get<std::string>() + "'");
        (std::string(key) == "from" ? c.from : c.to) = *id;
      }
      c.rate = cfg_number(cs[i], "rate", p, 0.0);
      n.confusions.push_back(c);
    }
  }
  try {
    n.validate(registry.size());
  } catch (const Error& e) {
    config_error(path, e.what());
  }
  return n;
}

}  // namespace

SensorNoiseModel noise_from_json(std::string_view text, const ClassRegistry& registry, const std::string& path) {
  try {
    return noise_from(json::parse(text), registry, path);
  } catch (const json::exception& e) {
    config_error(path, e.what());
  }
}

FlightSpec flight_from_json(std::string_view text, const ClassRegistry& registry) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    config_error("flight", e.what());
  }
  if (!j.is_object()) config_error("flight", "expected an object");
  FlightSpec f;
  if (!j.contains("waypoints") || !j["waypoints"].is_array()) config_error("flight.waypoints", "expected an array");
  bool any_yaw = false;
  for (std::size_t i = 0; i < j["waypoints"].size(); ++i) {
    const json& w = j["waypoints"][i];
    const std::string p = "flight.waypoints[" + std::to_string(i) + "]";
    if (!w.contains("t") || !w["t"].is_number()) config_error(p + ".t", "expected a number");
    const json& pos = w.value("position", json());
    if (!pos.is_array() || pos.size() != 3) config_error(p + ".position", "expected [x, y, z]");
    Waypoint wp;
    wp.stamp = w["t"].get<double>();
    for (int k = 0; k < 3; ++k) {
      if (!pos[k].is_number()) config_error(p + ".position", "expected numbers");
      wp.position[k] = pos[k].get<double>();
    }
    f.waypoints.push_back(wp);
    if (w.contains("yaw_deg")) {
      if (!any_yaw && i > 0) config_error(p + ".yaw_deg", "give yaw for every waypoint or none");
      any_yaw = true;
      f.yaw_deg.push_back(cfg_number(w, "yaw_deg", p, 0.0));
    } else if (any_yaw) {
      config_error(p + ".yaw_deg", "give yaw for every waypoint or none");
    }
  }
  if (j.contains("rates")) {
    const json& r = j["rates"];
    f.rates.lidar_hz = cfg_number(r, "lidar", "flight.rates", f.rates.lidar_hz);
    f.rates.rgb_hz = cfg_number(r, "rgb", "flight.rates", f.rates.rgb_hz);
    f.rates.thermal_hz = cfg_number(r, "thermal", "flight.rates", f.rates.thermal_hz);
  }
  f.trajectory_rate = cfg_number(j, "trajectory_rate", "flight", f.trajectory_rate);
  f.trajectory_margin = cfg_number(j, "trajectory_margin", "flight", f.trajectory_margin);
  f.gt_voxel_size = cfg_number(j, "gt_voxel_size", "flight", f.gt_voxel_size);
  if (j.contains("lidar")) {
    const json& l = j["lidar"];
    const std::string p = "flight.lidar";
    f.lidar.rings = static_cast<int>(cfg_number(l, "rings", p, f.lidar.rings));
    f.lidar.beams = static_cast<int>(cfg_number(l, "beams", p, f.lidar.beams));
    if (l.contains("vfov_deg")) {
      const json& v = l["vfov_deg"];
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        config_error(p + ".vfov_deg", "expected [lo, hi]");
      f.lidar.vfov_min_deg = v[0].get<double>();
      f.lidar.vfov_max_deg = v[1].get<double>();
    }
    f.lidar.min_range = cfg_number(l, "min_range", p, f.lidar.min_range);
    f.lidar.max_range = cfg_number(l, "max_range", p, f.lidar.max_range);
    f.lidar.sweep_period = cfg_number(l, "sweep_period", p, f.lidar.sweep_period);
    if (l.contains("normalization")) {
      const json& n = l["normalization"];
      auto& cn = f.lidar.normalization;
      const std::string np = p + ".normalization";
      cn.range_mean = cfg_number(n, "range_mean", np, cn.range_mean);
      cn.range_std = cfg_number(n, "range_std", np, cn.range_std);
      cn.x_mean = cfg_number(n, "x_mean", np, cn.x_mean);
      cn.x_std = cfg_number(n, "x_std", np, cn.x_std);
      cn.y_mean = cfg_number(n, "y_mean", np, cn.y_mean);
      cn.y_std = cfg_number(n, "y_std", np, cn.y_std);
      cn.z_mean = cfg_number(n, "z_mean", np, cn.z_mean);
      cn.z_std = cfg_number(n, "z_std", np, cn.z_std);
      cn.intensity_mean = cfg_number(n, "intensity_mean", np, cn.intensity_mean);
      cn.intensity_std = cfg_number(n, "intensity_std", np, cn.intensity_std);
    }
  }
  if (j.contains("noise")) {
    const json& n = j["noise"];
    if (n.contains("lidar")) f.noise.lidar = noise_from(n["lidar"], registry, "flight.noise.lidar");
    if (n.contains("rgb")) f.noise.rgb = noise_from(n["rgb"], registry, "flight.noise.rgb");
    if (n.contains("thermal")) f.noise.thermal = noise_from(n["thermal"], registry, "flight.noise.thermal");
  }
  if (j.contains("calibration")) f.calibration = Calibration::from_json(j["calibration"].dump());
  f.validate(registry.size());
  return f;
}

}  // namespace semfuse
