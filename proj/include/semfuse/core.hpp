#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace semfuse {

/// Base error for every recoverable failure raised by the library. `code` is a
/// short machine-readable tag ("invalid_argument", "io", ...) that the CLI
/// forwards in its JSON error payload.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

using ClassId = int;

/// Ordered list of semantic classes. Index in the list is the class id used in
/// every score vector.
class ClassRegistry {
 public:
  struct Entry {
    std::string name;
    bool dynamic = false;
  };

  explicit ClassRegistry(std::vector<Entry> entries);

  /// road, sidewalk, building, barrier, vegetation, terrain, sky, person,
  /// bicycle, vehicle, water, pole, traffic-sign, animal, object
  static ClassRegistry defaults();
  /// {"classes":[{"name":str,"dynamic":bool}]}
  static ClassRegistry from_json(std::string_view text);
  std::string to_json() const;

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(ClassId id) const { return entries_.at(static_cast<std::size_t>(id)).name; }
  bool is_dynamic(ClassId id) const { return entries_.at(static_cast<std::size_t>(id)).dynamic; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::optional<ClassId> find(std::string_view name) const;
  ClassId index_of(std::string_view name) const;

  /// Maps a detector label (person, vehicle, car, bicycle, ...) into the
  /// registry through the alias table. Unknown labels yield nullopt.
  std::optional<ClassId> resolve_detection_label(std::string_view label) const;

  bool operator==(const ClassRegistry& other) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::string, std::less<>> aliases_;
};

/// Categorical distribution over the registry classes.
class ProbabilityVector {
 public:
  ProbabilityVector() = default;

  /// Validates range and sum (|sum - 1| <= 1e-6).
  static ProbabilityVector from_values(Eigen::VectorXd values);
  /// Scales by the sum; rejects negative or non-finite entries and zero sums.
  static ProbabilityVector normalized(Eigen::VectorXd values);
  /// Caller guarantees validity (hot paths whose inputs are already valid).
  static ProbabilityVector unchecked(Eigen::VectorXd values) { return ProbabilityVector(std::move(values)); }
  static ProbabilityVector uniform(std::size_t count);
  /// One-hot at `cls` with `epsilon` mass on every other class, renormalized.
  static ProbabilityVector one_hot(std::size_t count, ClassId cls, double epsilon = 0.0);

  const Eigen::VectorXd& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  ClassId argmax() const;
  double sum() const { return values_.sum(); }

  bool operator==(const ProbabilityVector& o) const {
    return values_.size() == o.values_.size() && values_ == o.values_;
  }

 private:
  explicit ProbabilityVector(Eigen::VectorXd v) : values_(std::move(v)) {}
  Eigen::VectorXd values_;
};

/// Natural-log twin of ProbabilityVector. Entries are finite; a normalized
/// vector has log-sum-exp equal to zero.
class LogProbabilityVector {
 public:
  LogProbabilityVector() = default;
  static LogProbabilityVector unchecked(Eigen::VectorXd values) { return LogProbabilityVector(std::move(values)); }
  static LogProbabilityVector uniform(std::size_t count);

  const Eigen::VectorXd& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  ClassId argmax() const;

 private:
  explicit LogProbabilityVector(Eigen::VectorXd v) : values_(std::move(v)) {}
  Eigen::VectorXd values_;
};

/// Stable log(sum(exp(x))). The maximum term contributes exp(0) = 1, the rest
/// are accumulated through log1p.
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x);

/// Soft-max via max subtraction. Throws on non-finite input.
ProbabilityVector soft_max(const Eigen::Ref<const Eigen::VectorXd>& raw_scores);

/// log(max(p_i, epsilon)) then renormalized so that log-sum-exp is zero.
LogProbabilityVector to_log(const ProbabilityVector& p, double epsilon_prob);

ProbabilityVector from_log(const LogProbabilityVector& l);

/// Divides by the sum only when it drifted from one by more than `tolerance`.
/// Exact convex combinations pass through bit-for-bit.
void renormalize_if_drifted(Eigen::Ref<Eigen::VectorXd> values, double tolerance = 1e-12);

enum class HorizonMode { Drop, Fold };
enum class ScanMerge { Bayes, Mean };

struct FusionConfig {
  double w_img = 0.5;
  std::vector<double> alpha;  // per class; filled from the registry when empty
  double quantile_q = 0.25;
  double foreground_margin = 0.5;  // meters added to the distance quantile
  double epsilon_prob = 1e-9;
  double voxel_size = 0.25;
  std::size_t deque_len = 5;  // 0 = infinite horizon only
  HorizonMode horizon_mode = HorizonMode::Fold;
  ScanMerge scan_merge = ScanMerge::Bayes;
  bool per_point_chain = true;  // false: one chain per scan at the scan stamp
  double trajectory_slack = 0.1;

  static constexpr double kDynamicAlpha = 0.8;
  static constexpr double kStaticAlpha = 0.3;

  /// Default config with alpha derived from the registry's dynamic flags.
  static FusionConfig defaults(const ClassRegistry& registry);
  /// Throws Error("invalid_config") naming the offending field.
  void validate(std::size_t class_count) const;
};

std::string to_string(HorizonMode mode);
std::string to_string(ScanMerge merge);
HorizonMode horizon_mode_from_string(std::string_view s);
ScanMerge scan_merge_from_string(std::string_view s);

}  // namespace semfuse
