#include "semfuse/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace semfuse {

void ConfusionCounts::add(ClassId predicted, ClassId truth) {
  ++matched;
  if (predicted == truth) {
    ++tp.at(static_cast<std::size_t>(truth));
  } else {
    ++fp.at(static_cast<std::size_t>(predicted));
    ++fn.at(static_cast<std::size_t>(truth));
  }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  if (other.classes() != classes()) throw Error("class_mismatch", "confusion counts differ in class count");
  for (std::size_t c = 0; c < classes(); ++c) {
    tp[c] += other.tp[c];
    fp[c] += other.fp[c];
    fn[c] += other.fn[c];
  }
  matched += other.matched;
  unmatched += other.unmatched;
  return *this;
}

std::vector<PointLabel> label_against_map(const SemanticCloud& cloud, const VoxelMap& gt_map) {
  if (cloud.frame != CloudFrame::World) throw Error("invalid_frame", "evaluation expects a world-frame cloud");
  std::vector<PointLabel> out;
  out.reserve(cloud.points.size());
  for (const auto& p : cloud.points) {
    PointLabel label{p.argmax_class, std::nullopt};
    if (auto q = gt_map.query(p.position)) label.truth = q->argmax;
    out.push_back(label);
  }
  return out;
}

ConfusionCounts count_labels(const std::vector<PointLabel>& labels, std::size_t classes) {
  ConfusionCounts counts(classes);
  for (const auto& l : labels) {
    if (l.truth)
      counts.add(l.predicted, *l.truth);
    else
      ++counts.unmatched;
  }
  return counts;
}

IoUReport iou(const ConfusionCounts& counts) {
  IoUReport r;
  r.per_class.resize(counts.classes());
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < counts.classes(); ++c) {
    const std::uint64_t denom = counts.tp[c] + counts.fp[c] + counts.fn[c];
    if (denom == 0) continue;
    const double v = static_cast<double>(counts.tp[c]) / static_cast<double>(denom);
    r.per_class[c] = v;
    sum += v;
    ++defined;
  }
  if (defined) r.mean = sum / static_cast<double>(defined);
  return r;
}

SemanticCloud restrict_to_fov(const SemanticCloud& cloud, const CameraModel& camera, const RigidTransform& chain) {
  SemanticCloud out;
  out.scan_stamp = cloud.scan_stamp;
  out.frame = cloud.frame;
  for (const auto& p : cloud.points)
    if (project_point(camera, chain * p.position).in_image()) out.points.push_back(p);
  return out;
}

namespace {

std::vector<std::size_t> reported_classes(const std::vector<EvaluationRow>& rows, std::size_t classes) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < classes; ++c)
    if (std::any_of(rows.begin(), rows.end(), [&](const EvaluationRow& r) { return r.report.per_class[c].has_value(); }))
      out.push_back(c);
  return out;
}

std::string percent(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1) << *v * 100.0;
  return ss.str();
}

}  // namespace

void write_results_csv(std::ostream& os, const std::vector<EvaluationRow>& rows, const ClassRegistry& registry) {
  const auto cols = reported_classes(rows, registry.size());
  os << "approach";
  for (auto c : cols) os << ',' << registry.name(static_cast<ClassId>(c));
  os << ",mIoU\n";
  for (const auto& row : rows) {
    os << '"' << row.name << '"';
    for (auto c : cols) os << ',' << percent(row.report.per_class[c]);
    os << ',' << percent(row.report.mean) << '\n';
  }
}

void write_results_table(std::ostream& os, const std::vector<EvaluationRow>& rows, const ClassRegistry& registry) {
  const auto cols = reported_classes(rows, registry.size());
  std::size_t name_w = 8;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  os << std::left << std::setw(static_cast<int>(name_w)) << "approach";
  for (auto c : cols) os << ' ' << std::right << std::setw(10) << registry.name(static_cast<ClassId>(c));
  os << ' ' << std::setw(7) << "mIoU" << '\n';
  for (const auto& row : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << row.name;
    for (auto c : cols) os << ' ' << std::right << std::setw(10) << percent(row.report.per_class[c]);
    os << ' ' << std::setw(7) << percent(row.report.mean) << '\n';
  }
}

}  // namespace semfuse
