#pragma once

#include "semfuse/cloud_fusion.hpp"
#include "semfuse/core.hpp"
#include "semfuse/geometry.hpp"
#include "semfuse/voxel_map.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace semfuse {

struct ConfusionCounts {
  std::vector<std::uint64_t> tp, fp, fn;
  std::uint64_t matched = 0;
  std::uint64_t unmatched = 0;

  explicit ConfusionCounts(std::size_t classes = 0) : tp(classes, 0), fp(classes, 0), fn(classes, 0) {}
  std::size_t classes() const noexcept { return tp.size(); }

  void add(ClassId predicted, ClassId truth);
  ConfusionCounts& operator+=(const ConfusionCounts& other);
};

struct PointLabel {
  ClassId predicted = 0;
  std::optional<ClassId> truth;  // nullopt: no ground-truth voxel
};

/// Pairs every point's argmax with the argmax of its containing ground-truth
/// voxel. The cloud must be in the world frame.
std::vector<PointLabel> label_against_map(const SemanticCloud& cloud, const VoxelMap& gt_map);

/// Accumulates labelled points; unmatched points are counted separately and
/// excluded from TP/FP/FN.
ConfusionCounts count_labels(const std::vector<PointLabel>& labels, std::size_t classes);

struct IoUReport {
  std::vector<std::optional<double>> per_class;  // nullopt: TP + FP + FN == 0
  std::optional<double> mean;                    // over classes with defined IoU
};

/// IoU_c = TP_c / (TP_c + FP_c + FN_c)
IoUReport iou(const ConfusionCounts& counts);

/// Keeps points that project into the camera image with positive depth.
/// `chain` maps the cloud's frame into the camera frame.
SemanticCloud restrict_to_fov(const SemanticCloud& cloud, const CameraModel& camera, const RigidTransform& chain);

struct EvaluationRow {
  std::string name;
  IoUReport report;
};

/// Per-class and mean IoU in percent, one row per approach.
void write_results_csv(std::ostream& os, const std::vector<EvaluationRow>& rows, const ClassRegistry& registry);
void write_results_table(std::ostream& os, const std::vector<EvaluationRow>& rows, const ClassRegistry& registry);

}  // namespace semfuse
