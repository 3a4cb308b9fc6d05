#pragma once

// Shared helpers for the unit tests: seeded generators and extended-precision
// reference arithmetic.

#include "semfuse/core.hpp"
#include "semfuse/geometry.hpp"

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <random>
#include <vector>

namespace semfuse::test {

using Big = boost::multiprecision::cpp_dec_float_50;

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

/// Uniform on the simplex (normalized exponentials), with an optional floor so
/// entries are never exactly zero.
inline ProbabilityVector random_probability(std::mt19937_64& g, std::size_t classes, double floor = 0.0) {
  std::exponential_distribution<double> e(1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(classes));
  for (auto& x : v) x = e(g) + floor;
  return ProbabilityVector::normalized(v);
}

/// Peaked random vector: most mass on one random class.
inline ProbabilityVector random_peaked(std::mt19937_64& g, std::size_t classes, double peak = 20.0) {
  std::exponential_distribution<double> e(1.0);
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  Eigen::VectorXd v(static_cast<Eigen::Index>(classes));
  for (auto& x : v) x = e(g);
  v[static_cast<Eigen::Index>(pick(g))] += peak;
  return ProbabilityVector::normalized(v);
}

inline Eigen::Quaterniond random_rotation(std::mt19937_64& g) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(g), n(g), n(g), n(g));
  q.normalize();
  return q;
}

inline RigidTransform random_transform(std::mt19937_64& g, double max_translation = 10.0) {
  std::uniform_real_distribution<double> u(-max_translation, max_translation);
  return RigidTransform(random_rotation(g), Eigen::Vector3d(u(g), u(g), u(g)));
}

/// Product of the probability vectors, normalized, in 50-digit arithmetic.
inline std::vector<Big> big_product_normalize(const std::vector<const ProbabilityVector*>& factors) {
  const std::size_t C = factors.front()->size();
  std::vector<Big> prod(C, Big(1));
  for (const auto* f : factors)
    for (std::size_t i = 0; i < C; ++i) prod[i] *= Big((*f)[i]);
  Big sum = 0;
  for (const auto& p : prod) sum += p;
  for (auto& p : prod) p /= sum;
  return prod;
}

inline double linf(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace semfuse::test
