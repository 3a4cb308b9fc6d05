#pragma once

#include "semfuse/cloud_fusion.hpp"
#include "semfuse/core.hpp"

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <unordered_map>
#include <vector>

namespace semfuse {

struct VoxelKey {
  std::int64_t ix = 0, iy = 0, iz = 0;
  auto operator<=>(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept;
};

/// Componentwise floor(position / voxel_size).
VoxelKey voxel_key(const Eigen::Vector3d& position, double voxel_size);

/// Bayes rule in log space: C = L_prev + L_obs, M = max C,
/// N = log(1 + sum_{j != argmax} exp(C_j - M)), L = C - (M + N).
LogProbabilityVector log_bayes_update(const LogProbabilityVector& prev, const LogProbabilityVector& obs);

/// Reference probability-space fusion that keeps the unnormalized running
/// product and normalizes only on read. Underflows under long sequences of
/// conflicting confident observations; kept to demonstrate why the map fuses
/// in log space.
class NaiveProductFusion {
 public:
  explicit NaiveProductFusion(std::size_t classes);
  void update(const ProbabilityVector& obs);
  const Eigen::VectorXd& product() const noexcept { return product_; }
  /// nullopt once every product entry has underflowed to zero.
  std::optional<ProbabilityVector> posterior() const;

 private:
  Eigen::VectorXd product_;
};

struct ScanObservation {
  std::int64_t scan_id = 0;
  LogProbabilityVector log_probs;
  std::size_t point_count = 0;
};

struct Voxel {
  LogProbabilityVector log_probs;  // infinite-horizon state
  Eigen::Vector3d position_sum = Eigen::Vector3d::Zero();
  std::size_t point_count = 0;
  std::deque<ScanObservation> scans;

  Eigen::Vector3d mean_position() const {
    return point_count ? Eigen::Vector3d(position_sum / static_cast<double>(point_count)) : Eigen::Vector3d::Zero();
  }
};

struct IntegrationSummary {
  std::size_t points = 0;
  std::size_t voxels_touched = 0;
  std::size_t voxels_created = 0;
  std::size_t scans_folded = 0;
  std::size_t scans_dropped = 0;
};

struct VoxelQuery {
  ProbabilityVector posterior;
  ClassId argmax = 0;
  std::size_t point_count = 0;
};

struct VoxelRecord {
  VoxelKey key;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  std::size_t count = 0;
  ProbabilityVector posterior;
  ClassId argmax = 0;
};

struct MapOptions {
  double voxel_size = 0.25;
  std::size_t horizon = 5;  // n; 0 keeps only the infinite-horizon state
  HorizonMode mode = HorizonMode::Fold;
  ScanMerge merge = ScanMerge::Bayes;
  double epsilon_prob = 1e-9;

  static MapOptions from(const FusionConfig& cfg);
};

/// Sparse voxel hash map holding log-probabilities per voxel. Single writer;
/// const member functions may run concurrently between integrations.
class VoxelMap {
 public:
  VoxelMap(std::size_t classes, MapOptions options);

  std::size_t classes() const noexcept { return classes_; }
  const MapOptions& options() const noexcept { return options_; }
  double voxel_size() const noexcept { return options_.voxel_size; }
  std::size_t size() const noexcept { return voxels_.size(); }
  bool empty() const noexcept { return voxels_.empty(); }

  /// Merges the points of each voxel into one per-scan observation and pushes
  /// it onto the voxel's deque; overflowing entries are folded or dropped.
  /// Re-integrating the same scan id extends its newest entry.
  IntegrationSummary integrate_cloud(const SemanticCloud& cloud, std::int64_t scan_id);

  std::optional<VoxelQuery> query(const Eigen::Vector3d& position) const;
  std::optional<VoxelQuery> query(const VoxelKey& key) const;
  const Voxel* find(const VoxelKey& key) const;

  /// One record per voxel, sorted by key.
  std::vector<VoxelRecord> export_map() const;

  /// Inserts a voxel with a fixed posterior (map import). Replaces any
  /// existing voxel with the same key.
  void insert_record(const VoxelRecord& record);

  const std::unordered_map<VoxelKey, Voxel, VoxelKeyHash>& voxels() const noexcept { return voxels_; }

 private:
  LogProbabilityVector posterior_log(const Voxel& v) const;

  std::size_t classes_;
  MapOptions options_;
  std::unordered_map<VoxelKey, Voxel, VoxelKeyHash> voxels_;
};

/// Newline-delimited JSON, one record per voxel:
/// {"key":[ix,iy,iz],"mean":[x,y,z],"count":n,"posterior":[...],"argmax":"class"}
void write_map_ndjson(std::ostream& os, const std::vector<VoxelRecord>& records, const ClassRegistry& registry);

/// Little-endian binary export:
///   char[4] "SFVM", u32 version (1), f64 voxel_size, u32 C,
///   C x (u32 length, bytes) class names, u64 record count, then per record
///   i64 ix, iy, iz; f64 mean[3]; u64 count; u32 argmax; f64 posterior[C].
void write_map_binary(std::ostream& os, const std::vector<VoxelRecord>& records, double voxel_size,
                      const ClassRegistry& registry);

struct LoadedMap {
  double voxel_size = 0.0;
  ClassRegistry registry;
  std::vector<VoxelRecord> records;

  /// Rebuilds a queryable map whose voxels carry the exported posteriors.
  VoxelMap to_voxel_map(double epsilon_prob = 1e-9) const;
};

LoadedMap read_map_binary(std::istream& is);

}  // namespace semfuse
