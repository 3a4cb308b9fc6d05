#include "semfuse/simulator.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace semfuse;
namespace fs = std::filesystem;

namespace {

const ClassRegistry kReg = ClassRegistry::defaults();
const std::size_t C = kReg.size();
const ClassId kRoad = kReg.index_of("road");
const ClassId kBuilding = kReg.index_of("building");
const ClassId kVegetation = kReg.index_of("vegetation");
const ClassId kPerson = kReg.index_of("person");
const ClassId kSky = kReg.index_of("sky");

constexpr const char* kThreeBoxes = R"({
  "ground": null,
  "primitives": [
    {"shape": "box", "class": "building", "center": [0, 0, 5], "size": [4, 4, 10]},
    {"shape": "box", "class": "vehicle", "center": [10, 0, 1], "size": [4, 2, 2]},
    {"shape": "box", "class": "barrier", "center": [0, 10, 0.5], "size": [6, 0.5, 1], "yaw_deg": 90}
  ]})";

constexpr const char* kSmallScene = R"({
  "ground": {"height": 0.0, "class": "road"},
  "primitives": [
    {"shape": "box", "class": "building", "center": [12, 6, 4], "size": [6, 4, 8]},
    {"shape": "cylinder", "class": "vegetation", "center": [6, -4, 2], "radius": 1.0, "height": 4},
    {"shape": "cylinder", "class": "person", "center": [8, 0, 0.9], "radius": 0.3, "height": 1.8}
  ]})";

std::vector<TrajectorySample> still(const RigidTransform& pose) { return {{-1.0, pose}, {10.0, pose}}; }

std::string small_flight(double duration) {
  std::ostringstream os;
  os << R"({"waypoints": [{"t": 0.0, "position": [0, 0, 6]}, {"t": )" << duration
     << R"(, "position": [2, 0, 6]}],
     "lidar": {"rings": 16, "beams": 128, "vfov_deg": [-45, 45]},
     "noise": {"lidar": {"score_concentration": 8, "mislabel_rate": 0.05, "range_noise_sigma": 0.02},
               "rgb": {"score_concentration": 12, "detection_recall": 0.9, "detection_score_range": [0.5, 0.95]},
               "thermal": {"detection_recall": 0.8, "detection_score_range": [0.5, 0.9]}}})";
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("semfuse_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(GenerateScene, EmptySpecIsGroundOnly) {
  const auto s = generate_scene("{}", kReg, 1);
  ASSERT_EQ(s.primitives.size(), 1u);
  EXPECT_EQ(s.primitives[0].shape, ShapeKind::GroundPlane);
  EXPECT_EQ(s.primitives[0].class_id, kRoad);
  EXPECT_EQ(s.classes, C);
  const auto hit = cast_ray(s, {3, 4, 10}, {0, 0, -1}, 0.0);
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->range, 10.0, 1e-12);
  EXPECT_FALSE(cast_ray(s, {3, 4, 10}, {0, 0, 1}, 0.0));
}

TEST(GenerateScene, DeterministicDigests) {
  const std::string spec = R"({"random_persons": {"count": 5, "min": [0, 0], "max": [20, 20], "dynamic_fraction": 0.6}})";
  const auto a = generate_scene(spec, kReg, 42), b = generate_scene(spec, kReg, 42), c = generate_scene(spec, kReg, 43);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_NE(a.digest(), c.digest());
  EXPECT_EQ(a.digest().size(), 64u);
  std::size_t persons = 0, dynamic = 0;
  for (const auto& p : a.primitives) {
    if (p.class_id == kPerson) ++persons;
    if (p.is_dynamic()) ++dynamic;
  }
  EXPECT_EQ(persons, 5u);
  EXPECT_LE(dynamic, 5u);
  auto dynamic_count = [](double fraction) {
    const std::string sp = R"({"random_persons": {"count": 6, "min": [0, 0], "max": [20, 20], "dynamic_fraction": )" +
                           std::to_string(fraction) + "}}";
    std::size_t n = 0;
    for (const auto& p : generate_scene(sp, kReg, 42).primitives) n += p.is_dynamic() ? 1 : 0;
    return n;
  };
  EXPECT_EQ(dynamic_count(0.0), 0u);
  EXPECT_EQ(dynamic_count(1.0), 6u);
}

TEST(GenerateScene, ErrorsNameTheField) {
  auto expect_path = [](const std::string& spec, const std::string& path) {
    try {
      generate_scene(spec, kReg, 1);
      FAIL() << spec;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), "invalid_spec");
      EXPECT_NE(std::string(e.what()).find(path), std::string::npos) << e.what();
    }
  };
  expect_path(R"({"primitives": [{"shape": "sphere", "class": "road", "center": [0,0,0]}]})", "primitives[0].shape");
  expect_path(R"({"primitives": [{"shape": "box", "class": "unicorn", "center": [0,0,0], "size": [1,1,1]}]})",
              "primitives[0].class");
  expect_path(R"({"primitives": [{"shape": "box", "class": "road", "center": [0,0,0], "size": [1,-1,1]}]})",
              "primitives[0].size");
  expect_path(R"({"ground": {"class": "road", "height": "low"}})", "ground.height");
  expect_path("[1, 2]", "scene");
}

TEST(CastRay, ThreeBoxesMatchAnalyticGeometry) {
  const auto s = generate_scene(kThreeBoxes, kReg, 1);
  ASSERT_EQ(s.primitives.size(), 3u);
  // Straight down onto each roof.
  auto h = cast_ray(s, {0.5, -0.5, 20}, {0, 0, -1}, 0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->range, 10.0, 1e-12);
  EXPECT_EQ(h->class_id, kBuilding);
  h = cast_ray(s, {11.9, 0.9, 20}, {0, 0, -1}, 0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->range, 18.0, 1e-12);
  EXPECT_EQ(h->class_id, kReg.index_of("vehicle"));
  // Rotated barrier: 6 m long along y after the 90 degree yaw, 0.5 m thick along x.
  h = cast_ray(s, {0.2, 12.9, 5}, {0, 0, -1}, 0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->range, 4.0, 1e-12);
  EXPECT_EQ(h->class_id, kReg.index_of("barrier"));
  EXPECT_FALSE(cast_ray(s, {0.3, 12.9, 5}, {0, 0, -1}, 0));
  // Horizontal ray from the vehicle towards the building's +x face.
  h = cast_ray(s, {7, 0, 1}, {-1, 0, 0}, 0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->range, 5.0, 1e-12);
  EXPECT_EQ(h->class_id, kBuilding);
  // Oblique ray onto the building's side: x = 2 is reached after (10 - 2) / cos(30).
  const double a = 30.0 * std::numbers::pi / 180.0;
  h = cast_ray(s, {10, 0, 3}, {-std::cos(a), 0, std::sin(a)}, 0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->range, 8.0 / std::cos(a), 1e-12);
  // Misses.
  EXPECT_FALSE(cast_ray(s, {30, 30, 1}, {1, 0, 0}, 0));
  EXPECT_FALSE(cast_ray(s, {0.5, -0.5, 20}, {0, 0, -1}, 0, 1e-6, 9.0));
  // Starting inside a box hits its far wall.
  h = cast_ray(s, {0, 0, 5}, {1, 0, 0}, 0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->range, 2.0, 1e-12);
}

TEST(CastRay, CylinderSideAndCap) {
  const auto s = generate_scene(kSmallScene, kReg, 1);
  auto h = cast_ray(s, {0, 0, 0.9}, {1, 0, 0}, 0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->range, 7.7, 1e-12);
  EXPECT_EQ(h->class_id, kPerson);
  h = cast_ray(s, {8.1, 0.1, 10}, {0, 0, -1}, 0);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->range, 8.2, 1e-12);
  EXPECT_EQ(h->class_id, kPerson);
  h = cast_ray(s, {8.5, 0, 10}, {0, 0, -1}, 0);
  ASSERT_TRUE(h);
  EXPECT_EQ(h->class_id, kRoad);
}

TEST(Scene, DynamicPathMovesPrimitive) {
  const auto s = generate_scene(R"({"ground": null, "primitives": [{"shape": "cylinder", "class": "person",
      "center": [0, 0, 0.9], "radius": 0.3, "height": 1.8,
      "path": [{"t": 0, "position": [0, 0, 0.9]}, {"t": 2, "position": [4, 0, 0.9]}]}]})",
                                kReg, 1);
  EXPECT_NEAR(s.primitives[0].pose_at(1.0).translation().x(), 2.0, 1e-12);
  EXPECT_NEAR(s.primitives[0].pose_at(-5.0).translation().x(), 0.0, 1e-12);
  EXPECT_NEAR(s.primitives[0].pose_at(9.0).translation().x(), 4.0, 1e-12);
  EXPECT_TRUE(cast_ray(s, {2, 0, 10}, {0, 0, -1}, 1.0));
  EXPECT_FALSE(cast_ray(s, {2, 0, 10}, {0, 0, -1}, 0.0));
}

TEST(NearestSurfaceClass, ClosestPrimitive) {
  const auto s = generate_scene(kSmallScene, kReg, 1);
  EXPECT_EQ(nearest_surface_class(s, {8.4, 0, 1.0}, 0), kPerson);
  EXPECT_EQ(nearest_surface_class(s, {0, 0, 0.05}, 0), kRoad);
  EXPECT_EQ(nearest_surface_class(s, {12, 6, 8.1}, 0), kBuilding);
  EXPECT_EQ(nearest_surface_class(s, {7.05, -4, 2}, 0), kVegetation);
}

TEST(NoiseModel, Sampling) {
  auto g = test::rng(1);
  SensorNoiseModel noiseless;
  for (int i = 0; i < 100; ++i) {
    const auto p = sample_scores(noiseless, kPerson, C, g);
    EXPECT_TRUE(p == ProbabilityVector::one_hot(C, kPerson));
    EXPECT_EQ(sample_observed_label(noiseless, kPerson, C, g), kPerson);
  }
  SensorNoiseModel noisy;
  noisy.score_concentration = 5;
  noisy.mislabel_rate = 0.1;
  noisy.confusions = {{kPerson, kVegetation, 0.3}};
  std::size_t to_veg = 0, kept = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto lab = sample_observed_label(noisy, kPerson, C, g);
    if (lab == kVegetation) ++to_veg;
    if (lab == kPerson) ++kept;
    const auto p = sample_scores(noisy, lab, C, g);
    ASSERT_NEAR(p.sum(), 1.0, 1e-9);
    ASSERT_TRUE((p.values().array() >= 0).all());
  }
  // P(vegetation) = 0.3 + 0.7 * 0.1 / 14, P(person) = 0.7 * 0.9.
  EXPECT_NEAR(static_cast<double>(to_veg) / n, 0.3 + 0.07 / 14, 0.015);
  EXPECT_NEAR(static_cast<double>(kept) / n, 0.63, 0.015);

  EXPECT_NE(frame_seed(1, 1, 0), frame_seed(1, 1, 1));
  EXPECT_NE(frame_seed(1, 1, 0), frame_seed(1, 2, 0));
  EXPECT_EQ(frame_seed(7, 3, 9), frame_seed(7, 3, 9));

  SensorNoiseModel bad;
  bad.mislabel_rate = 1.5;
  EXPECT_THROW(bad.validate(C), Error);
  bad = SensorNoiseModel{};
  bad.score_concentration = 0;
  EXPECT_THROW(bad.validate(C), Error);
}

TEST(RenderLidar, NadirRangesOverFlatGround) {
  const auto s = generate_scene("{}", kReg, 1);
  LidarModel m;
  m.rings = 8;
  m.beams = 64;
  m.vfov_min_deg = -90;
  m.vfov_max_deg = -20;
  const double h = 8.0;
  const auto r = render_lidar(s, still(RigidTransform::from_translation({0, 0, h})), RigidTransform::identity(), 0.0, m,
                              SensorNoiseModel::noiseless(), 1);
  ASSERT_EQ(r.cloud.points.size(), 8u * 64u);
  for (std::size_t i = 0; i < r.cloud.points.size(); ++i) {
    const Eigen::Vector3d& p = r.cloud.points[i].position;
    const Eigen::Vector3d dir = p.normalized();
    // Angle from nadir: cos = -dir.z, so range = h / cos.
    EXPECT_NEAR(p.norm(), h / -dir.z(), 1e-9);
    EXPECT_NEAR(r.world[i].z(), 0.0, 1e-9);
    EXPECT_EQ(r.truth[i], kRoad);
  }
  // Ring 0 looks straight down.
  EXPECT_NEAR(r.cloud.points[0].position.norm(), h, 1e-9);

  SensorNoiseModel noisy;
  noisy.range_noise_sigma = 0.02;
  const auto n = render_lidar(s, still(RigidTransform::from_translation({0, 0, h})), RigidTransform::identity(), 0.0, m,
                              noisy, 1);
  double max_dev = 0;
  for (const auto& p : n.cloud.points) max_dev = std::max(max_dev, std::abs(p.position.norm() - h / -p.position.normalized().z()));
  EXPECT_GT(max_dev, 0.0);
  EXPECT_LT(max_dev, 0.02 * 6);
}

TEST(RenderLidar, PointCountEqualsHittingRays) {
  const auto s = generate_scene(kSmallScene, kReg, 1);
  LidarModel m;
  m.rings = 32;
  m.beams = 256;
  const auto traj = still(RigidTransform::from_translation({2, 1, 6}));
  const auto r = render_lidar(s, traj, RigidTransform::identity(), 0.0, m, SensorNoiseModel::noiseless(), 3);
  std::size_t hits = 0;
  for (int k = 0; k < m.beams; ++k)
    for (int ring = 0; ring < m.rings; ++ring) {
      const double e = (-45.0 + 90.0 * ring / (m.rings - 1)) * std::numbers::pi / 180.0;
      const double az = 2 * std::numbers::pi * k / m.beams;
      const Eigen::Vector3d d(std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e));
      if (cast_ray(s, {2, 1, 6}, d, 0.0, m.min_range, m.max_range)) ++hits;
    }
  EXPECT_EQ(r.cloud.points.size(), hits);
  EXPECT_LT(hits, static_cast<std::size_t>(m.rings * m.beams));
  for (std::size_t i = 0; i < r.cloud.points.size(); ++i) {
    const auto& p = r.cloud.points[i];
    EXPECT_TRUE(p.scores == ProbabilityVector::one_hot(C, r.truth[i]));
    EXPECT_EQ(p.argmax_class, r.truth[i]);
    EXPECT_GE(p.stamp_offset, 0.0);
    EXPECT_LT(p.stamp_offset, m.sweep_period);
  }
}

TEST(RenderLidar, NoisyScoresAreValid) {
  const auto s = generate_scene(kSmallScene, kReg, 1);
  LidarModel m;
  m.rings = 16;
  m.beams = 128;
  SensorNoiseModel noise;
  noise.score_concentration = 4;
  noise.mislabel_rate = 0.1;
  const auto r = render_lidar(s, still(RigidTransform::from_translation({2, 1, 6})), RigidTransform::identity(), 0.0, m,
                              noise, 9);
  for (const auto& p : r.cloud.points) {
    ASSERT_NEAR(p.scores.sum(), 1.0, 1e-9);
    ASSERT_TRUE((p.scores.values().array() >= 0).all());
  }
}

TEST(RenderCamera, NoiselessMaskMatchesTruthAndBoxesAreTight) {
  const auto s = generate_scene(kSmallScene, kReg, 1);
  const auto calib = default_calibration();
  const RigidTransform world_T_cam =
      RigidTransform::from_translation({0, 0, 3}) * calib.extrinsics.rgb_T_base.inverse();
  CameraRenderOptions opt;
  opt.detectable = {kPerson};
  opt.sky_class = kSky;
  const auto r = render_camera(s, world_T_cam, calib.rgb, 0.0, SensorNoiseModel::noiseless(), opt, 5);
  const int w = calib.rgb.width, h = calib.rgb.height;
  std::size_t person_px = 0;
  int umin = w, umax = -1, vmin = h, vmax = -1;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const auto idx = static_cast<std::size_t>(v * w + u);
      const auto px = r.mask.pixel(u, v);
      Eigen::Index arg;
      px.maxCoeff(&arg);
      ASSERT_EQ(static_cast<ClassId>(arg), r.truth[idx]);
      if (r.primitive[idx] < 0) EXPECT_EQ(r.depth.at(u, v), 0.0);
      if (r.truth[idx] == kPerson) {
        ++person_px;
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
    }
  ASSERT_GT(person_px, 10u);
  ASSERT_EQ(r.detections.size(), 1u);
  const auto& b = r.detections[0];
  EXPECT_EQ(b.class_id(), kPerson);
  EXPECT_DOUBLE_EQ(b.u_min(), umin - 0.5);
  EXPECT_DOUBLE_EQ(b.u_max(), umax + 0.5);
  EXPECT_DOUBLE_EQ(b.v_min(), vmin - 0.5);
  EXPECT_DOUBLE_EQ(b.v_max(), vmax + 0.5);
  EXPECT_DOUBLE_EQ(b.score(), 1.0);

  // Depth is z-depth: unprojecting a pixel lands on the hit surface.
  for (int v = 0; v < h; v += 7)
    for (int u = 0; u < w; u += 7) {
      const double d = r.depth.at(u, v);
      if (d <= 0) continue;
      const Eigen::Vector3d p_world = world_T_cam * unproject(calib.rgb, u, v, d);
      const Eigen::Vector3d dir = (p_world - world_T_cam.translation()).normalized();
      const auto hit = cast_ray(s, world_T_cam.translation(), dir, 0.0, 1e-3);
      ASSERT_TRUE(hit);
      EXPECT_NEAR(hit->range, (p_world - world_T_cam.translation()).norm(), 1e-9);
    }

  SensorNoiseModel no_recall;
  no_recall.detection_recall = 0.0;
  EXPECT_TRUE(render_camera(s, world_T_cam, calib.rgb, 0.0, no_recall, opt, 5).detections.empty());

  CameraRenderOptions thermal = opt;
  thermal.camera = CameraId::Thermal;
  thermal.render_mask = false;
  const auto t = render_camera(s, world_T_cam, calib.thermal, 0.0, SensorNoiseModel::noiseless(), thermal, 5);
  EXPECT_EQ(t.mask.classes(), 0u);
  ASSERT_EQ(t.detections.size(), 1u);
  EXPECT_EQ(t.detections[0].camera(), CameraId::Thermal);
}

TEST(GenerateFlight, RateAccountingAndDeterminism) {
  const auto scene = generate_scene(kSmallScene, kReg, 7);
  const auto flight = flight_from_json(small_flight(1.0), kReg);
  const auto rec = generate_flight(scene, flight, kReg, 7);
  EXPECT_NEAR(static_cast<double>(rec.scans.size()), 10.0, 1.0);
  EXPECT_NEAR(static_cast<double>(rec.rgb.size()), 30.0, 1.0);
  EXPECT_NEAR(static_cast<double>(rec.thermal.size()), 9.0, 1.0);
  EXPECT_NO_THROW(rec.validate());
  ASSERT_TRUE(rec.ground_truth);
  EXPECT_FALSE(rec.ground_truth->records.empty());
  for (const auto& f : rec.rgb) EXPECT_EQ(f.mask.classes(), C);

  const auto a = temp_dir("flight_a"), b = temp_dir("flight_b");
  const auto da = write_recording(rec, a);
  const auto db = write_recording(generate_flight(scene, flight, kReg, 7), b);
  EXPECT_EQ(da, db);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(read_file(e.path()), read_file(b / e.path().filename())) << e.path();
  }
  EXPECT_GE(files, 7u);
  const auto dc = write_recording(generate_flight(scene, flight, kReg, 8), temp_dir("flight_c"));
  EXPECT_NE(da, dc);
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(temp_dir("flight_c"));
}

TEST(GenerateFlight, GroundTruthAgreesWithSceneGeometry) {
  const auto scene = generate_scene(kSmallScene, kReg, 7);
  const auto flight = flight_from_json(small_flight(1.0), kReg);
  const auto rec = generate_flight(scene, flight, kReg, 7);
  const auto& gt = *rec.ground_truth;
  std::size_t agree = 0;
  for (const auto& r : gt.records) {
    const Eigen::Vector3d center = (Eigen::Vector3d(r.key.ix, r.key.iy, r.key.iz).array() + 0.5).matrix() * gt.voxel_size;
    if (nearest_surface_class(scene, center, 0.0) == r.argmax) ++agree;
  }
  const double ratio = static_cast<double>(agree) / static_cast<double>(gt.records.size());
  EXPECT_GE(ratio, 0.99) << agree << " / " << gt.records.size();
}

TEST(FlightSpec, Validation) {
  EXPECT_THROW(flight_from_json(R"({"waypoints": [{"t": 0, "position": [0,0,5]}]})", kReg), Error);
  EXPECT_THROW(flight_from_json(R"({"waypoints": [{"t": 0, "position": [0,0,5]}, {"t": 0, "position": [1,0,5]}]})", kReg),
               Error);
  EXPECT_THROW(flight_from_json(small_flight(1.0).replace(0, 1, "{\"rates\": {\"lidar\": -1},"), kReg), Error);
  EXPECT_NO_THROW(flight_from_json(small_flight(2.0), kReg));
}
