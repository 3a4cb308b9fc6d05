#pragma once

#include "semfuse/cloud_fusion.hpp"
#include "semfuse/core.hpp"
#include "semfuse/evaluation.hpp"
#include "semfuse/image.hpp"
#include "semfuse/recording.hpp"
#include "semfuse/voxel_map.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace semfuse {

/// FIFO with a fixed capacity. push() blocks while full; push_drop_oldest()
/// evicts the oldest entry instead. pop() blocks until an item arrives or the
/// queue is closed and drained.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw Error("invalid_config", "queue capacity must be >= 1");
  }

  bool push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    note_size();
    not_empty_.notify_one();
    return true;
  }

  /// Returns the number of evicted entries (0 or 1).
  std::size_t push_drop_oldest(T item) {
    std::lock_guard lock(mu_);
    if (closed_) return 0;
    std::size_t evicted = 0;
    if (items_.size() >= capacity_) {
      items_.pop_front();
      ++dropped_;
      evicted = 1;
    }
    items_.push_back(std::move(item));
    note_size();
    not_empty_.notify_one();
    return evicted;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }
  std::size_t peak() const {
    std::lock_guard lock(mu_);
    return peak_;
  }
  std::size_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }

 private:
  void note_size() { peak_ = std::max(peak_, items_.size()); }

  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
  std::deque<T> items_;
  bool closed_ = false;
  std::size_t peak_ = 0;
  std::size_t dropped_ = 0;
};

enum class ReplayMode { Offline, Realtime };

struct PipelineOptions {
  ReplayMode mode = ReplayMode::Offline;
  double realtime_factor = 1.0;  // replay speed in realtime mode
  std::size_t image_queue = 4;
  std::size_t cloud_queue = 4;
  std::size_t map_queue = 4;
  std::optional<std::filesystem::path> output_dir;  // fused clouds, masks and the map
  bool export_mask_png = false;                     // argmax index PNG per fused mask
};

struct StageReport {
  std::string name;
  std::size_t received = 0;
  std::size_t processed = 0;
  std::size_t dropped = 0;
  double throughput_hz = 0.0;  // processed / wall time
  double service_ms_mean = 0.0;
  double latency_ms_p50 = 0.0, latency_ms_p90 = 0.0, latency_ms_p99 = 0.0;  // source push -> stage done
  std::size_t queue_capacity = 0;
  std::size_t peak_queue = 0;
  bool monotone = true;  // output stamps strictly increase
};

struct RunReport {
  std::string mode;
  double realtime_factor = 1.0;
  double wall_seconds = 0.0;
  std::vector<StageReport> stages;
  std::size_t dropped_total = 0;
  std::size_t peak_queued_total = 0;  // sum of per-queue peaks
  std::size_t capacity_total = 0;
  bool monotone = true;
  std::vector<std::string> warnings;
  std::string output_digest;  // SHA-256 over fused clouds, fused masks and the final map

  std::string to_json() const;
};

/// Called from the cloud stage for every fused scan, in scan order. `raw` is
/// the recorded scan (LiDAR frame), `fused` has the same points with fused
/// scores (LiDAR frame), `world` is `fused` in the world frame.
using FusedScanObserver = std::function<void(std::size_t scan_index, const ScanMessage& raw,
                                             const SemanticCloud& fused, const SemanticCloud& world)>;

struct PipelineResult {
  RunReport report;
  VoxelMap map;
  std::vector<double> cloud_stamps;  // stamps of the fused scans, output order
  std::vector<double> mask_stamps;   // stamps of the fused masks, output order
};

/// Source -> {image fusion, cloud fusion} -> map integration, each stage on
/// its own thread. Only RGB frames (image stage) and scans (cloud stage) are
/// queued; camera results are latest-value inputs looked up by stamp. The
/// cloud stage fuses every scan with the newest RGB mask and detections and
/// the newest thermal detections stamped at or before the scan. The image
/// stage uses each thermal frame once, with the first RGB frame at or after
/// it. Offline mode blocks on full queues and processes every message;
/// realtime mode paces the source by stamp / realtime_factor and drops the
/// oldest queued message when a queue is full.
/// Throws Error("class_mismatch" | "invalid_config" | "invalid_recording")
/// before any processing starts.
PipelineResult run_pipeline(const Recording& rec, const FusionConfig& cfg, const PipelineOptions& options,
                            const FusedScanObserver& observer = {});

/// Accumulates the per-point comparison of LiDAR-only and fused labels against
/// the ground-truth map, over the full scan and restricted to one camera's
/// field of view (restriction uses the static LiDAR-to-camera extrinsics).
class TableEvaluator {
 public:
  TableEvaluator(const Recording& rec, const FusionConfig& cfg, std::optional<CameraId> fov_camera = CameraId::Rgb);

  void add(const ScanMessage& raw, const SemanticCloud& fused);
  FusedScanObserver observer();

  /// "LiDAR segmentation", "fused semantic cloud", then the same two rows
  /// "reduced to camera FoV" when a camera was given.
  std::vector<EvaluationRow> rows() const;
  const ConfusionCounts& lidar_counts() const noexcept { return lidar_; }
  const ConfusionCounts& fused_counts() const noexcept { return fused_; }
  const ConfusionCounts& lidar_fov_counts() const noexcept { return lidar_fov_; }
  const ConfusionCounts& fused_fov_counts() const noexcept { return fused_fov_; }

 private:
  const Recording* rec_;
  FusionConfig cfg_;
  std::optional<CameraId> camera_;
  VoxelMap gt_;
  ConfusionCounts lidar_, fused_, lidar_fov_, fused_fov_;
};

/// Writes an 8-bit grayscale PNG whose pixel values are class ids.
void write_index_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels, int width, int height);

}  // namespace semfuse
