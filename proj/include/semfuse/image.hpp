#pragma once

#include "semfuse/core.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace semfuse {

/// Dense H x W x C score tensor, row-major with the class channel innermost.
class ScoreMask {
 public:
  ScoreMask() = default;
  /// Every pixel starts uniform.
  ScoreMask(int width, int height, std::size_t classes, double stamp = 0.0);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t classes() const noexcept { return classes_; }
  double stamp() const noexcept { return stamp_; }
  void set_stamp(double s) noexcept { stamp_ = s; }

  Eigen::Map<Eigen::VectorXd> pixel(int u, int v) {
    return Eigen::Map<Eigen::VectorXd>(data_.data() + offset(u, v), static_cast<Eigen::Index>(classes_));
  }
  Eigen::Map<const Eigen::VectorXd> pixel(int u, int v) const {
    return Eigen::Map<const Eigen::VectorXd>(data_.data() + offset(u, v), static_cast<Eigen::Index>(classes_));
  }
  void set_pixel(int u, int v, const ProbabilityVector& p) { pixel(u, v) = p.values(); }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  /// Per-pixel argmax as class ids, row-major.
  std::vector<std::uint8_t> argmax_image() const;

  bool operator==(const ScoreMask& o) const {
    return width_ == o.width_ && height_ == o.height_ && classes_ == o.classes_ && data_ == o.data_;
  }

 private:
  std::size_t offset(int u, int v) const {
    return (static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u)) * classes_;
  }

  int width_ = 0;
  int height_ = 0;
  std::size_t classes_ = 0;
  double stamp_ = 0.0;
  std::vector<double> data_;
};

/// Metric depth per pixel; 0 marks an invalid measurement.
class DepthImage {
 public:
  DepthImage() = default;
  DepthImage(int width, int height, double stamp = 0.0)
      : width_(width), height_(height), stamp_(stamp),
        depth_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0.0) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  double stamp() const noexcept { return stamp_; }
  void set_stamp(double s) noexcept { stamp_ = s; }

  double at(int u, int v) const { return depth_[index(u, v)]; }
  double& at(int u, int v) { return depth_[index(u, v)]; }
  bool valid(int u, int v) const { return at(u, v) > 0.0; }

  const std::vector<double>& data() const noexcept { return depth_; }
  std::vector<double>& data() noexcept { return depth_; }

  bool operator==(const DepthImage& o) const {
    return width_ == o.width_ && height_ == o.height_ && depth_ == o.depth_;
  }

 private:
  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
  }
  int width_ = 0;
  int height_ = 0;
  double stamp_ = 0.0;
  std::vector<double> depth_;
};

/// ScoreMask plus a per-pixel flag telling whether warped history arrived.
struct FusedMask {
  ScoreMask scores;
  std::vector<std::uint8_t> valid;

  FusedMask() = default;
  explicit FusedMask(ScoreMask s, bool all_valid = true)
      : scores(std::move(s)),
        valid(static_cast<std::size_t>(scores.width()) * static_cast<std::size_t>(scores.height()),
              all_valid ? 1 : 0) {}

  int width() const noexcept { return scores.width(); }
  int height() const noexcept { return scores.height(); }
  bool is_valid(int u, int v) const {
    return valid[static_cast<std::size_t>(v) * static_cast<std::size_t>(scores.width()) + static_cast<std::size_t>(u)] != 0;
  }
  void set_valid(int u, int v, bool b) {
    valid[static_cast<std::size_t>(v) * static_cast<std::size_t>(scores.width()) + static_cast<std::size_t>(u)] = b ? 1 : 0;
  }
  std::size_t valid_count() const;
};

/// Channel-wise bilinear blend of the four pixels around (u, v), renormalized.
/// Returns nullopt when (u, v) lies outside [0, W-1] x [0, H-1].
std::optional<ProbabilityVector> bilinear_sample(const ScoreMask& mask, double u, double v);

}  // namespace semfuse
