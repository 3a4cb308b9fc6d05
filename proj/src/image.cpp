#include "semfuse/image.hpp"

#include <algorithm>
#include <cmath>

namespace semfuse {

ScoreMask::ScoreMask(int width, int height, std::size_t classes, double stamp)
    : width_(width), height_(height), classes_(classes), stamp_(stamp) {
  if (width <= 0 || height <= 0 || classes == 0) throw Error("invalid_argument", "score mask dimensions must be positive");
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * classes,
               1.0 / static_cast<double>(classes));
}

std::vector<std::uint8_t> ScoreMask::argmax_image() const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_));
  for (int v = 0; v < height_; ++v)
    for (int u = 0; u < width_; ++u) {
      Eigen::Index idx = 0;
      pixel(u, v).maxCoeff(&idx);
      out[static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u)] =
          static_cast<std::uint8_t>(idx);
    }
  return out;
}

std::size_t FusedMask::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

std::optional<ProbabilityVector> bilinear_sample(const ScoreMask& mask, double u, double v) {
  if (!(u >= 0.0 && v >= 0.0 && u <= mask.width() - 1.0 && v <= mask.height() - 1.0)) return std::nullopt;
  const int u0 = std::min(static_cast<int>(std::floor(u)), mask.width() - 1);
  const int v0 = std::min(static_cast<int>(std::floor(v)), mask.height() - 1);
  const double du = u - u0;
  const double dv = v - v0;
  const int u1 = du > 0.0 ? u0 + 1 : u0;
  const int v1 = dv > 0.0 ? v0 + 1 : v0;

  Eigen::VectorXd out = (1.0 - du) * (1.0 - dv) * mask.pixel(u0, v0);
  if (du > 0.0) out += du * (1.0 - dv) * mask.pixel(u1, v0);
  if (dv > 0.0) out += (1.0 - du) * dv * mask.pixel(u0, v1);
  if (du > 0.0 && dv > 0.0) out += du * dv * mask.pixel(u1, v1);
  renormalize_if_drifted(out);
  return ProbabilityVector::unchecked(std::move(out));
}

}  // namespace semfuse
