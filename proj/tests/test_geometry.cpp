#include "semfuse/geometry.hpp"
#include "semfuse/image.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace semfuse;

namespace {

constexpr double kPi = 3.14159265358979323846;

double angle_of(const Eigen::Quaterniond& q) { return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w())); }

// Textbook slerp: sin((1-s)θ)/sin θ · q0 + sin(sθ)/sin θ · q1 on the shortest arc.
Eigen::Quaterniond slerp_oracle(Eigen::Quaterniond q0, Eigen::Quaterniond q1, double s) {
  double d = q0.coeffs().dot(q1.coeffs());
  if (d < 0) {
    q1.coeffs() = -q1.coeffs();
    d = -d;
  }
  const double theta = std::acos(std::min(1.0, d));
  const double a = std::sin((1 - s) * theta) / std::sin(theta);
  const double b = std::sin(s * theta) / std::sin(theta);
  Eigen::Quaterniond out;
  out.coeffs() = a * q0.coeffs() + b * q1.coeffs();
  return out.normalized();
}

void expect_transform_near(const RigidTransform& a, const RigidTransform& b, double tol) {
  EXPECT_LE((a.translation() - b.translation()).norm(), tol);
  EXPECT_LE(rotation_distance(a, b), tol);
}

std::vector<TrajectorySample> smooth_trajectory(std::size_t n, double dt) {
  std::vector<TrajectorySample> s;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const Eigen::Quaterniond q = Eigen::AngleAxisd(0.3 * t, Eigen::Vector3d::UnitZ()) *
                                 Eigen::AngleAxisd(0.1 * std::sin(t), Eigen::Vector3d::UnitX());
    s.push_back({t, RigidTransform(q, Eigen::Vector3d(2 * t, std::sin(t), 8.0))});
  }
  return s;
}

}  // namespace

TEST(RigidTransform, GroupLaws) {
  auto g = test::rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto a = test::random_transform(g), b = test::random_transform(g), c = test::random_transform(g);
    expect_transform_near(a * a.inverse(), RigidTransform::identity(), 1e-9);
    expect_transform_near(a.inverse() * a, RigidTransform::identity(), 1e-9);
    expect_transform_near((a * b) * c, a * (b * c), 1e-9);
    expect_transform_near((a * b).inverse(), b.inverse() * a.inverse(), 1e-9);
    EXPECT_NEAR(a.rotation().norm(), 1.0, 1e-9);
  }
}

TEST(RigidTransform, MatrixRoundTripAndPointAction) {
  auto g = test::rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto a = test::random_transform(g);
    expect_transform_near(RigidTransform::from_matrix(a.matrix()), a, 1e-9);
    const Eigen::Vector3d p(1.5, -2.0, 0.25);
    const Eigen::Vector4d h = a.matrix() * p.homogeneous();
    EXPECT_LE((a * p - h.head<3>()).norm(), 1e-9);
  }
}

TEST(RigidTransform, RejectsDegenerateQuaternion) {
  EXPECT_THROW(RigidTransform(Eigen::Quaterniond(0, 0, 0, 0), Eigen::Vector3d::Zero()), Error);
  EXPECT_THROW(RigidTransform(Eigen::Quaterniond(NAN, 0, 0, 0), Eigen::Vector3d::Zero()), Error);
  const RigidTransform scaled(Eigen::Quaterniond(2, 0, 0, 0), Eigen::Vector3d::Zero());
  EXPECT_NEAR(scaled.rotation().norm(), 1.0, 1e-15);
}

TEST(InterpolatePose, ExactSampleHit) {
  const auto traj = smooth_trajectory(20, 0.1);
  for (const auto& s : traj) {
    const auto r = interpolate_pose(traj, s.stamp);
    EXPECT_FALSE(r.clamped);
    EXPECT_EQ(r.pose.translation(), s.pose.translation());
    EXPECT_TRUE(r.pose.rotation().coeffs() == s.pose.rotation().coeffs());
  }
}

TEST(InterpolatePose, TranslationMidpoint) {
  std::vector<TrajectorySample> t{{0.0, RigidTransform::identity()},
                                  {1.0, RigidTransform::from_translation({2, 0, 0})}};
  const auto p = interpolate_pose(t, 0.5).pose;
  EXPECT_NEAR((p.translation() - Eigen::Vector3d(1, 0, 0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR(angle_of(p.rotation()), 0.0, 1e-15);
}

TEST(InterpolatePose, YawMidpointMatchesSlerpOracle) {
  const auto a = RigidTransform::from_yaw(0.0);
  const auto b = RigidTransform::from_yaw(kPi / 2);
  std::vector<TrajectorySample> t{{0.0, a}, {1.0, b}};
  const auto mid = interpolate_pose(t, 0.5).pose;
  const Eigen::Quaterniond expect(Eigen::AngleAxisd(kPi / 4, Eigen::Vector3d::UnitZ()));
  EXPECT_LE(expect.angularDistance(mid.rotation()), 1e-12);
  auto g = test::rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    const auto q0 = test::random_rotation(g), q1 = test::random_rotation(g);
    const double s = u(g);
    std::vector<TrajectorySample> tr{{0.0, RigidTransform(q0, Eigen::Vector3d::Zero())},
                                     {1.0, RigidTransform(q1, Eigen::Vector3d::Zero())}};
    EXPECT_LE(slerp_oracle(q0, q1, s).angularDistance(interpolate_pose(tr, s).pose.rotation()), 1e-9);
  }
}

TEST(InterpolatePose, ShortestArc) {
  // Same rotation with opposite quaternion signs: interpolation must not sweep a full turn.
  const Eigen::Quaterniond q(Eigen::AngleAxisd(0.2, Eigen::Vector3d::UnitZ()));
  Eigen::Quaterniond neg;
  neg.coeffs() = -Eigen::Quaterniond(Eigen::AngleAxisd(0.4, Eigen::Vector3d::UnitZ())).coeffs();
  std::vector<TrajectorySample> t{{0.0, RigidTransform(q, {0, 0, 0})}, {1.0, RigidTransform(neg, {0, 0, 0})}};
  const auto mid = interpolate_pose(t, 0.5).pose;
  EXPECT_LE(mid.rotation().angularDistance(Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitZ()))),
            1e-12);
}

TEST(InterpolatePose, Continuity) {
  const auto traj = smooth_trajectory(50, 0.1);
  auto g = test::rng(4);
  std::uniform_real_distribution<double> u(0.0, 4.9);
  for (int i = 0; i < 2000; ++i) {
    const double t = u(g);
    const auto a = interpolate_pose(traj, t - 1e-6).pose, b = interpolate_pose(traj, t + 1e-6).pose;
    EXPECT_LT((a.translation() - b.translation()).norm(), 1e-4);
    EXPECT_LT(rotation_distance(a, b), 1e-4);
  }
}

TEST(InterpolatePose, EdgesAndErrors) {
  const auto traj = smooth_trajectory(5, 0.1);
  EXPECT_THROW(interpolate_pose(std::span<const TrajectorySample>{}, 0.0), Error);
  const auto before = interpolate_pose(traj, -0.05);
  EXPECT_TRUE(before.clamped);
  EXPECT_EQ(before.pose.translation(), traj.front().pose.translation());
  const auto after = interpolate_pose(traj, 0.45);
  EXPECT_TRUE(after.clamped);
  EXPECT_EQ(after.pose.translation(), traj.back().pose.translation());
  EXPECT_THROW(interpolate_pose(traj, -0.2), Error);
  EXPECT_THROW(interpolate_pose(traj, 0.61), Error);
  EXPECT_NO_THROW(interpolate_pose(traj, 0.61, 0.5));
}

TEST(Trajectory, RejectsNonIncreasingStamps) {
  EXPECT_THROW(Trajectory(std::vector<TrajectorySample>{{0.0, {}}, {0.0, {}}}), Error);
  EXPECT_THROW(Trajectory(std::vector<TrajectorySample>{{1.0, {}}, {0.5, {}}}), Error);
  Trajectory t(std::vector<TrajectorySample>{{0.0, RigidTransform{}}});
  EXPECT_THROW(t.push_back({0.0, {}}), Error);
  t.push_back({0.1, {}});
  EXPECT_EQ(t.size(), 2u);
  EXPECT_TRUE(t.covers(0.05, 0.0));
  EXPECT_FALSE(t.covers(0.2, 0.05));
}

TEST(ChainTransform, StationaryCases) {
  const auto traj = smooth_trajectory(20, 0.1);
  RigExtrinsics identity;
  expect_transform_near(chain_transform(identity, CameraId::Rgb, traj, 0.73, 0.73), RigidTransform::identity(), 1e-12);

  auto g = test::rng(5);
  RigExtrinsics e{test::random_transform(g, 1), test::random_transform(g, 1), test::random_transform(g, 1)};
  const auto expect = e.rgb_T_base * e.base_T_lidar;
  expect_transform_near(chain_transform(e, CameraId::Rgb, traj, 0.73, 0.73), expect, 1e-9);
  // Independent of the trajectory content when the stamps coincide.
  std::vector<TrajectorySample> other{{0.0, test::random_transform(g)}, {2.0, test::random_transform(g)}};
  expect_transform_near(chain_transform(e, CameraId::Rgb, other, 0.73, 0.73), expect, 1e-9);
  expect_transform_near(chain_transform(e, CameraId::Thermal, traj, 1.2, 1.2), e.thermal_T_base * e.base_T_lidar, 1e-9);
}

TEST(ChainTransform, MovingBaseMatchesMatrixProduct) {
  const auto traj = smooth_trajectory(30, 0.1);
  auto g = test::rng(6);
  std::uniform_real_distribution<double> u(0.0, 2.9);
  for (int i = 0; i < 300; ++i) {
    RigExtrinsics e{test::random_transform(g, 1), test::random_transform(g, 1), test::random_transform(g, 1)};
    const double tc = u(g), tl = u(g);
    const Eigen::Matrix4d m = e.rgb_T_base.matrix() * interpolate_pose(traj, tc).pose.matrix().inverse() *
                              interpolate_pose(traj, tl).pose.matrix() * e.base_T_lidar.matrix();
    const auto chain = chain_transform(e, CameraId::Rgb, traj, tc, tl);
    EXPECT_LE((chain.matrix() - m).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(CameraPose, InverseOfCamTBase) {
  const auto traj = smooth_trajectory(10, 0.1);
  auto g = test::rng(7);
  RigExtrinsics e{test::random_transform(g, 1), test::random_transform(g, 1), test::random_transform(g, 1)};
  const auto w = camera_pose(e, CameraId::Thermal, traj, 0.35);
  expect_transform_near(w, interpolate_pose(traj, 0.35).pose * e.thermal_T_base.inverse(), 1e-12);
}

TEST(Projection, Examples) {
  const CameraModel cam{400, 400, 424, 240, 848, 480};
  auto p = project_point(cam, {0, 0, 1});
  EXPECT_TRUE(p.in_image());
  EXPECT_DOUBLE_EQ(p.u, 424);
  EXPECT_DOUBLE_EQ(p.v, 240);
  EXPECT_DOUBLE_EQ(p.depth, 1.0);
  p = project_point(cam, {1, 0, 2});
  EXPECT_DOUBLE_EQ(p.u, 624);
  EXPECT_EQ(project_point(cam, {0, 0, 0}).status, ProjectionStatus::BehindCamera);
  EXPECT_EQ(project_point(cam, {0, 0, 1e-6}).status, ProjectionStatus::BehindCamera);
  EXPECT_EQ(project_point(cam, {0, 0, -3}).status, ProjectionStatus::BehindCamera);
  EXPECT_EQ(project_point(cam, {10, 0, 1}).status, ProjectionStatus::OutOfImage);
}

TEST(Projection, UnprojectRoundTrip) {
  const CameraModel cam{400, 410, 424, 240, 848, 480};
  auto g = test::rng(8);
  std::uniform_real_distribution<double> xy(-3, 3), z(0.5, 50);
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector3d p(xy(g), xy(g), z(g));
    const auto pr = project_point(cam, p);
    ASSERT_NE(pr.status, ProjectionStatus::BehindCamera);
    EXPECT_LE((unproject(cam, pr.u, pr.v, pr.depth) - p).norm(), 1e-9);
  }
}

TEST(CameraModel, Validation) {
  EXPECT_NO_THROW((CameraModel{400, 400, 424, 240, 848, 480}.validate()));
  EXPECT_THROW((CameraModel{0, 400, 424, 240, 848, 480}.validate()), Error);
  EXPECT_THROW((CameraModel{400, 400, 900, 240, 848, 480}.validate()), Error);
}

TEST(Calibration, JsonRoundTrip) {
  auto g = test::rng(9);
  Calibration c;
  c.extrinsics = {test::random_transform(g, 1), test::random_transform(g, 1), test::random_transform(g, 1)};
  c.rgb = {100, 101, 79.5, 59.5, 160, 120};
  c.thermal = {90, 90, 63.5, 47.5, 128, 96};
  const auto back = Calibration::from_json(c.to_json());
  expect_transform_near(back.extrinsics.base_T_lidar, c.extrinsics.base_T_lidar, 1e-12);
  expect_transform_near(back.extrinsics.rgb_T_base, c.extrinsics.rgb_T_base, 1e-12);
  expect_transform_near(back.extrinsics.thermal_T_base, c.extrinsics.thermal_T_base, 1e-12);
  EXPECT_EQ(back.rgb.fy, 101);
  EXPECT_EQ(back.thermal.width, 128);
  EXPECT_THROW(Calibration::from_json("{}"), Error);
}

namespace {

ScoreMask random_mask(std::mt19937_64& g, int w, int h, std::size_t C) {
  ScoreMask m(w, h, C);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) m.set_pixel(u, v, test::random_probability(g, C));
  return m;
}

}  // namespace

TEST(BilinearSample, IntegerPixelIsExact) {
  auto g = test::rng(10);
  const auto m = random_mask(g, 6, 5, 15);
  for (int v = 0; v < 5; ++v)
    for (int u = 0; u < 6; ++u) {
      const auto s = bilinear_sample(m, u, v);
      ASSERT_TRUE(s);
      EXPECT_LE(test::linf(s->values(), m.pixel(u, v)), 1e-15);
    }
}

TEST(BilinearSample, BlockCenterAndQuarterOffset) {
  auto g = test::rng(11);
  const auto m = random_mask(g, 4, 4, 15);
  const auto c = bilinear_sample(m, 1.5, 2.5);
  const Eigen::VectorXd mean = (m.pixel(1, 2) + m.pixel(2, 2) + m.pixel(1, 3) + m.pixel(2, 3)) / 4.0;
  EXPECT_LE(test::linf(c->values(), mean), 1e-15);
  const auto q = bilinear_sample(m, 2.25, 1.0);
  for (std::size_t k = 0; k < 15; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    EXPECT_NEAR((*q)[k], 0.75 * m.pixel(2, 1)[i] + 0.25 * m.pixel(3, 1)[i], 1e-15);
  }
}

TEST(BilinearSample, OutsideGivesNothing) {
  ScoreMask m(4, 3, 2);
  EXPECT_FALSE(bilinear_sample(m, -0.01, 1));
  EXPECT_FALSE(bilinear_sample(m, 3.01, 1));
  EXPECT_FALSE(bilinear_sample(m, 1, 2.0001));
  EXPECT_TRUE(bilinear_sample(m, 3.0, 2.0));
}

TEST(BilinearSample, ConvexCombinationProperty) {
  auto g = test::rng(12);
  const auto m = random_mask(g, 8, 8, 15);
  std::uniform_real_distribution<double> u(0, 7);
  for (int i = 0; i < 5000; ++i) {
    const double x = u(g), y = u(g);
    const auto s = bilinear_sample(m, x, y);
    ASSERT_TRUE(s);
    EXPECT_NEAR(s->sum(), 1.0, 1e-12);
    const int u0 = std::min(6, static_cast<int>(x)), v0 = std::min(6, static_cast<int>(y));
    for (Eigen::Index k = 0; k < 15; ++k) {
      double lo = 1, hi = 0;
      for (int dv = 0; dv <= 1; ++dv)
        for (int du = 0; du <= 1; ++du) {
          lo = std::min(lo, m.pixel(u0 + du, v0 + dv)[k]);
          hi = std::max(hi, m.pixel(u0 + du, v0 + dv)[k]);
        }
      EXPECT_GE(s->values()[k], lo - 1e-12);
      EXPECT_LE(s->values()[k], hi + 1e-12);
    }
  }
}
