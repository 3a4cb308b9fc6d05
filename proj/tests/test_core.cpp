#include "semfuse/core.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace semfuse;
using semfuse::test::Big;

TEST(ClassRegistry, DefaultHasFifteenUniqueClasses) {
  const auto reg = ClassRegistry::defaults();
  ASSERT_EQ(reg.size(), 15u);
  std::set<std::string> names;
  for (const auto& e : reg.entries()) {
    EXPECT_FALSE(e.name.empty());
    names.insert(e.name);
  }
  EXPECT_EQ(names.size(), 15u);
  EXPECT_EQ(reg.name(0), "road");
  EXPECT_EQ(reg.name(14), "object");
  EXPECT_TRUE(reg.is_dynamic(reg.index_of("person")));
  EXPECT_TRUE(reg.is_dynamic(reg.index_of("vehicle")));
  EXPECT_FALSE(reg.is_dynamic(reg.index_of("building")));
}

TEST(ClassRegistry, JsonRoundTrip) {
  const auto reg = ClassRegistry::defaults();
  const auto back = ClassRegistry::from_json(reg.to_json());
  EXPECT_EQ(reg, back);
}

TEST(ClassRegistry, RejectsBadDocuments) {
  EXPECT_THROW(ClassRegistry::from_json("{}"), Error);
  EXPECT_THROW(ClassRegistry::from_json(R"({"classes":[]})"), Error);
  EXPECT_THROW(ClassRegistry::from_json(R"({"classes":[{"name":"a"},{"name":"a"}]})"), Error);
  EXPECT_THROW(ClassRegistry::from_json(R"({"classes":[{"name":""}]})"), Error);
  EXPECT_THROW(ClassRegistry::from_json("not json"), Error);
}

TEST(ClassRegistry, DetectionAliases) {
  const auto reg = ClassRegistry::defaults();
  EXPECT_EQ(reg.resolve_detection_label("car"), reg.find("vehicle"));
  EXPECT_EQ(reg.resolve_detection_label("truck"), reg.find("vehicle"));
  EXPECT_EQ(reg.resolve_detection_label("person"), reg.find("person"));
  EXPECT_EQ(reg.resolve_detection_label("bike"), reg.find("bicycle"));
  EXPECT_EQ(reg.resolve_detection_label("road"), reg.find("road"));
  EXPECT_FALSE(reg.resolve_detection_label("zeppelin").has_value());
  EXPECT_THROW(reg.index_of("zeppelin"), Error);
}

TEST(SoftMax, ZerosGiveUniform) {
  const auto p = soft_max(Eigen::VectorXd::Zero(15));
  for (std::size_t i = 0; i < 15; ++i) EXPECT_DOUBLE_EQ(p[i], 1.0 / 15.0);
}

TEST(SoftMax, LargeInputDoesNotOverflow) {
  const auto p = soft_max(Eigen::Vector3d(1000, 0, 0));
  EXPECT_TRUE(p.values().allFinite());
  EXPECT_NEAR(p[0], 1.0, 1e-300);
  EXPECT_LT(p[1], 1e-300);
}

TEST(SoftMax, MatchesExtendedPrecision) {
  const auto p = soft_max(Eigen::Vector3d(1, 2, 3));
  Big e1 = exp(Big(1)), e2 = exp(Big(2)), e3 = exp(Big(3));
  Big s = e1 + e2 + e3;
  EXPECT_NEAR(p[0], static_cast<double>(e1 / s), 1e-15);
  EXPECT_NEAR(p[1], static_cast<double>(e2 / s), 1e-15);
  EXPECT_NEAR(p[2], static_cast<double>(e3 / s), 1e-15);
  // Frozen reference values.
  EXPECT_NEAR(p[0], 0.09003057317038046, 1e-15);
  EXPECT_NEAR(p[1], 0.24472847105479764, 1e-15);
  EXPECT_NEAR(p[2], 0.6652409557748219, 1e-15);
  EXPECT_NEAR(p.sum(), 1.0, 1e-9);
}

TEST(SoftMax, RejectsNonFinite) {
  EXPECT_THROW(soft_max(Eigen::Vector3d(1, NAN, 0)), Error);
  EXPECT_THROW(soft_max(Eigen::Vector3d(INFINITY, 0, 0)), Error);
}

TEST(SoftMax, ShiftInvariantAndOrderPreserving) {
  auto g = test::rng(11);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd x(15);
    for (auto& v : x) v = u(g);
    const double c = u(g) * 10;
    const auto a = soft_max(x);
    const auto b = soft_max((x.array() + c).matrix());
    EXPECT_LE(test::linf(a.values(), b.values()), 1e-12);
    EXPECT_NEAR(a.sum(), 1.0, 1e-9);
    for (int i = 0; i < 15; ++i)
      for (int j = 0; j < 15; ++j)
        if (x[i] < x[j]) EXPECT_LE(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)]);
  }
}

TEST(ToLog, UniformAndDirectLogarithm) {
  const auto l = to_log(ProbabilityVector::uniform(15), 1e-9);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(l[i], std::log(1.0 / 15.0), 1e-15);

  const auto m = to_log(ProbabilityVector::from_values(Eigen::Vector3d(0.5, 0.3, 0.2)), 1e-9);
  EXPECT_NEAR(m[0], std::log(0.5), 1e-15);
  EXPECT_NEAR(m[1], std::log(0.3), 1e-15);
  EXPECT_NEAR(m[2], std::log(0.2), 1e-15);
}

TEST(ToLog, OneHotIsClampedThenRenormalized) {
  const double eps = 1e-9;
  const auto l = to_log(ProbabilityVector::one_hot(15, 0), eps);
  EXPECT_TRUE(l.values().allFinite());
  // Before renormalization: [0, log eps, ...]; the shift is log(1 + 14 eps).
  const double shift = std::log1p(14 * eps);
  EXPECT_NEAR(l[0], -shift, 1e-18);
  for (std::size_t i = 1; i < 15; ++i) EXPECT_NEAR(l[i], std::log(eps) - shift, 1e-12);
  EXPECT_NEAR(log_sum_exp(l.values()), 0.0, 1e-15);
}

TEST(FromLog, RoundTripAndArgmax) {
  auto g = test::rng(5);
  for (int i = 0; i < 10000; ++i) {
    const auto p = test::random_probability(g, 15, 1e-6);
    const auto l = to_log(p, 1e-9);
    const auto back = from_log(l);
    ASSERT_EQ(p.argmax(), l.argmax());
    ASSERT_EQ(p.argmax(), back.argmax());
    ASSERT_LE(test::linf(p.values(), back.values()), 1e-9);
    ASSERT_NEAR(back.sum(), 1.0, 1e-6);
  }
  const auto u = from_log(LogProbabilityVector::uniform(15));
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(u[i], 1.0 / 15.0, 1e-15);
}

TEST(LogSumExp, MatchesExtendedPrecision) {
  auto g = test::rng(9);
  std::uniform_real_distribution<double> u(-800, 10);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd x(15);
    for (auto& v : x) v = u(g);
    Big s = 0;
    for (double v : x) s += exp(Big(v));
    EXPECT_NEAR(log_sum_exp(x), static_cast<double>(log(s)), 1e-12);
  }
}

TEST(ProbabilityVector, Validation) {
  EXPECT_THROW(ProbabilityVector::from_values(Eigen::Vector2d(0.7, 0.7)), Error);
  EXPECT_THROW(ProbabilityVector::from_values(Eigen::Vector2d(-0.1, 1.1)), Error);
  EXPECT_THROW(ProbabilityVector::normalized(Eigen::Vector2d(0, 0)), Error);
  EXPECT_NO_THROW(ProbabilityVector::from_values(Eigen::Vector2d(0.4, 0.6)));
  const auto oh = ProbabilityVector::one_hot(4, 2, 1e-3);
  EXPECT_EQ(oh.argmax(), 2);
  EXPECT_NEAR(oh.sum(), 1.0, 1e-15);
  EXPECT_THROW(ProbabilityVector::one_hot(4, 4), Error);
}

TEST(RenormalizeIfDrifted, LeavesExactSumsAlone) {
  Eigen::VectorXd v(3);
  v << 0.2, 0.3, 0.5;
  const Eigen::VectorXd before = v;
  renormalize_if_drifted(v);
  EXPECT_TRUE(v == before);
  v << 0.2, 0.3, 0.6;
  renormalize_if_drifted(v);
  EXPECT_NEAR(v.sum(), 1.0, 1e-15);
}

TEST(FusionConfig, DefaultsAndValidation) {
  const auto reg = ClassRegistry::defaults();
  auto cfg = FusionConfig::defaults(reg);
  EXPECT_EQ(cfg.alpha.size(), 15u);
  EXPECT_DOUBLE_EQ(cfg.alpha[static_cast<std::size_t>(reg.index_of("person"))], 0.8);
  EXPECT_DOUBLE_EQ(cfg.alpha[static_cast<std::size_t>(reg.index_of("road"))], 0.3);
  EXPECT_DOUBLE_EQ(cfg.quantile_q, 0.25);
  EXPECT_DOUBLE_EQ(cfg.epsilon_prob, 1e-9);
  EXPECT_DOUBLE_EQ(cfg.voxel_size, 0.25);
  EXPECT_NO_THROW(cfg.validate(15));

  auto expect_field = [&](FusionConfig c, const std::string& field) {
    try {
      c.validate(15);
      FAIL() << "expected failure for " << field;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), "invalid_config");
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  auto c = cfg;
  c.w_img = 1.5;
  expect_field(c, "w_img");
  c = cfg;
  c.alpha.pop_back();
  expect_field(c, "alpha");
  c = cfg;
  c.alpha[3] = -0.1;
  expect_field(c, "alpha[3]");
  c = cfg;
  c.quantile_q = 0.0;
  expect_field(c, "quantile_q");
  c = cfg;
  c.epsilon_prob = 0.0;
  expect_field(c, "epsilon_prob");
  c = cfg;
  c.voxel_size = -1;
  expect_field(c, "voxel_size");
}

TEST(FusionConfig, EnumStrings) {
  EXPECT_EQ(horizon_mode_from_string("drop"), HorizonMode::Drop);
  EXPECT_EQ(horizon_mode_from_string(to_string(HorizonMode::Fold)), HorizonMode::Fold);
  EXPECT_EQ(scan_merge_from_string(to_string(ScanMerge::Mean)), ScanMerge::Mean);
  EXPECT_THROW(horizon_mode_from_string("keep"), Error);
}
