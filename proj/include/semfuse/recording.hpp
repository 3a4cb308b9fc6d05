#pragma once

#include "semfuse/cloud_fusion.hpp"
#include "semfuse/core.hpp"
#include "semfuse/geometry.hpp"
#include "semfuse/image.hpp"
#include "semfuse/voxel_map.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace semfuse {

struct SensorRates {
  double lidar_hz = 10.0;
  double rgb_hz = 30.0;
  double thermal_hz = 9.0;
};

struct ScanMessage {
  double stamp = 0.0;
  SemanticCloud cloud;  // LiDAR frame, raw per-point scores
};

struct RgbFrame {
  double stamp = 0.0;
  ScoreMask mask;
  DepthImage depth;
  std::vector<DetectionBox> detections;
};

struct ThermalFrame {
  double stamp = 0.0;
  std::vector<DetectionBox> detections;
};

struct Recording {
  ClassRegistry registry = ClassRegistry::defaults();
  Calibration calibration;
  SensorRates rates;
  double sweep_period = 0.1;
  std::vector<TrajectorySample> trajectory;
  std::vector<ScanMessage> scans;
  std::vector<RgbFrame> rgb;
  std::vector<ThermalFrame> thermal;
  std::optional<LoadedMap> ground_truth;

  /// Throws Error("invalid_recording") when a stream is not stamp-monotone,
  /// a stamp is not covered by the trajectory, or a payload's class count
  /// differs from the registry.
  void validate(double slack = 0.1) const;
};

/// Stream files of a recording directory; every file is a sequence of
/// records `f64 stamp | u32 payload length | payload`, little-endian.
namespace stream_files {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kTrajectory = "trajectory.bin";
inline constexpr const char* kLidar = "lidar_scans.bin";
inline constexpr const char* kRgbMask = "rgb_masks.bin";
inline constexpr const char* kRgbDepth = "rgb_depths.bin";
inline constexpr const char* kRgbDetections = "rgb_detections.bin";
inline constexpr const char* kThermalDetections = "thermal_detections.bin";
inline constexpr const char* kGroundTruthMap = "gt_map.bin";
}  // namespace stream_files

// Payload codecs, shared with the pipeline's output files.
std::string encode_pose(const RigidTransform& pose);
RigidTransform decode_pose(std::string_view payload);
std::string encode_cloud(const SemanticCloud& cloud);
SemanticCloud decode_cloud(std::string_view payload, double stamp);
std::string encode_mask(const ScoreMask& mask);
ScoreMask decode_mask(std::string_view payload, double stamp);
std::string encode_depth(const DepthImage& depth);
DepthImage decode_depth(std::string_view payload, double stamp);
std::string encode_detections(const std::vector<DetectionBox>& dets);
std::vector<DetectionBox> decode_detections(std::string_view payload, CameraId camera);

/// Appends `stamp | length | payload` records to a stream file.
class RecordWriter {
 public:
  explicit RecordWriter(const std::filesystem::path& path);
  void write(double stamp, std::string_view payload);
  void close();
  std::size_t records() const noexcept { return records_; }

 private:
  std::filesystem::path path_;
  std::ofstream os_;
  std::size_t records_ = 0;
  double last_stamp_ = 0.0;
};

struct RawRecord {
  double stamp = 0.0;
  std::string payload;
};

/// Reads every record of a stream file; errors name the file and record.
std::vector<RawRecord> read_records(const std::filesystem::path& path);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void update(std::string_view bytes);
  std::string hex();  // finalizes; further updates start a new digest

 private:
  void* ctx_;
};
std::string sha256_file(const std::filesystem::path& path);

/// Writes manifest.json plus one file per stream. Returns the SHA-256 of the
/// manifest, which covers the digests of every stream file.
std::string write_recording(const Recording& rec, const std::filesystem::path& dir);

/// Loads and verifies a recording directory.
Recording read_recording(const std::filesystem::path& dir);

enum class StreamKind { Trajectory = 0, Rgb = 1, Thermal = 2, Lidar = 3 };

struct TrajectoryMessage {
  TrajectorySample sample;
};

using Message = std::variant<TrajectoryMessage, ScanMessage, RgbFrame, ThermalFrame>;

double message_stamp(const Message& m);
StreamKind message_kind(const Message& m);

struct MessageRef {
  double stamp;
  StreamKind kind;
  std::size_t index;
};

/// Global delivery order: stamp, then stream kind, then per-stream index.
std::vector<MessageRef> merged_order(const Recording& rec);

/// Yields the messages of a recording directory in global stamp order,
/// decoding each payload only when it is reached.
class RecordingReader {
 public:
  explicit RecordingReader(const std::filesystem::path& dir);

  const Recording& header() const noexcept { return header_; }  // manifest data, streams empty
  std::size_t size() const noexcept { return order_.size(); }
  std::optional<Message> next();

 private:
  struct Entry {
    double stamp;
    StreamKind kind;
    std::size_t index;
  };
  std::filesystem::path dir_;
  Recording header_;
  std::vector<RawRecord> trajectory_, lidar_, rgb_mask_, rgb_depth_, rgb_dets_, thermal_dets_;
  std::vector<Entry> order_;
  std::size_t cursor_ = 0;
};

}  // namespace semfuse
