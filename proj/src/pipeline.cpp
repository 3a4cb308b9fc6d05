#include "semfuse/pipeline.hpp"

#include "semfuse/image_fusion.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <set>
#include <sstream>
#include <thread>

namespace semfuse {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Item {
  StreamKind kind = StreamKind::Lidar;
  std::size_t index = 0;
  double stamp = 0.0;
  Clock::time_point enqueued;
};

struct MapItem {
  std::size_t scan_index = 0;
  double stamp = 0.0;
  SemanticCloud world;
  Clock::time_point enqueued;
};

// Per-stage bookkeeping, owned by the stage thread until join.
struct StageLog {
  std::size_t received = 0;
  std::size_t processed = 0;
  double busy_ms = 0.0;
  std::vector<double> latency_ms;
  double last_stamp = -std::numeric_limits<double>::infinity();
  bool monotone = true;

  void output(double stamp) {
    if (!(stamp > last_stamp)) monotone = false;
    last_stamp = stamp;
  }
};

// Index of the newest frame stamped at or before t.
template <class Frame>
std::optional<std::size_t> latest_at_or_before(const std::vector<Frame>& frames, double t) {
  auto it = std::upper_bound(frames.begin(), frames.end(), t, [](double s, const Frame& f) { return s < f.stamp; });
  if (it == frames.begin()) return std::nullopt;
  return static_cast<std::size_t>(it - frames.begin() - 1);
}

double ms_since(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

StageReport make_report(const std::string& name, const StageLog& log, std::size_t dropped, std::size_t capacity,
                        std::size_t peak, double wall_s) {
  StageReport r;
  r.name = name;
  r.received = log.received;
  r.processed = log.processed;
  r.dropped = dropped;
  r.throughput_hz = wall_s > 0 ? static_cast<double>(log.processed) / wall_s : 0.0;
  r.service_ms_mean = log.processed ? log.busy_ms / static_cast<double>(log.processed) : 0.0;
  r.latency_ms_p50 = percentile(log.latency_ms, 50);
  r.latency_ms_p90 = percentile(log.latency_ms, 90);
  r.latency_ms_p99 = percentile(log.latency_ms, 99);
  r.queue_capacity = capacity;
  r.peak_queue = peak;
  r.monotone = log.monotone;
  return r;
}

// First error raised by any stage; the other stages are woken by closing the
// queues and the error is rethrown after join.
class ErrorSlot {
 public:
  void set(std::exception_ptr e) {
    std::lock_guard lock(mu_);
    if (!error_) error_ = e;
  }
  void rethrow() {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mu_;
  std::exception_ptr error_;
};

void check_inputs(const Recording& rec, const FusionConfig& cfg, const PipelineOptions& options) {
  const std::size_t C = rec.registry.size();
  cfg.validate(C);
  if (options.mode == ReplayMode::Realtime && !(options.realtime_factor > 0.0))
    throw Error("invalid_config", "pipeline.realtime_factor: must be positive");
  if (options.image_queue == 0 || options.cloud_queue == 0 || options.map_queue == 0)
    throw Error("invalid_config", "pipeline: queue capacities must be >= 1");
  for (const auto& s : rec.scans)
    for (const auto& p : s.cloud.points)
      if (p.scores.size() != C)
        throw Error("class_mismatch", "scan at " + std::to_string(s.stamp) + " carries " +
                                          std::to_string(p.scores.size()) + " classes, registry has " +
                                          std::to_string(C));
  for (const auto& f : rec.rgb)
    if (f.mask.classes() != C)
      throw Error("class_mismatch", "rgb mask at " + std::to_string(f.stamp) + " carries " +
                                        std::to_string(f.mask.classes()) + " classes, registry has " +
                                        std::to_string(C));
  rec.validate(cfg.trajectory_slack);
}

std::string map_bytes(const VoxelMap& map, const ClassRegistry& registry) {
  std::ostringstream os;
  write_map_binary(os, map.export_map(), map.voxel_size(), registry);
  return os.str();
}

}  // namespace

std::string RunReport::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["realtime_factor"] = realtime_factor;
  j["wall_seconds"] = wall_seconds;
  j["dropped_total"] = dropped_total;
  j["peak_queued_total"] = peak_queued_total;
  j["capacity_total"] = capacity_total;
  j["monotone"] = monotone;
  j["output_digest"] = output_digest;
  j["warnings"] = warnings;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : stages) {
    j["stages"].push_back({{"name", s.name},
                           {"received", s.received},
                           {"processed", s.processed},
                           {"dropped", s.dropped},
                           {"throughput_hz", s.throughput_hz},
                           {"service_ms_mean", s.service_ms_mean},
                           {"latency_ms", {{"p50", s.latency_ms_p50}, {"p90", s.latency_ms_p90}, {"p99", s.latency_ms_p99}}},
                           {"queue_capacity", s.queue_capacity},
                           {"peak_queue", s.peak_queue},
                           {"monotone", s.monotone}});
  }
  return j.dump(2);
}

PipelineResult run_pipeline(const Recording& rec, const FusionConfig& cfg, const PipelineOptions& options,
                            const FusedScanObserver& observer) {
  check_inputs(rec, cfg, options);
  const bool realtime = options.mode == ReplayMode::Realtime;
  const ClassRegistry& registry = rec.registry;
  const auto& traj = rec.trajectory;

  std::optional<RecordWriter> cloud_out, mask_out;
  if (options.output_dir) {
    fs::create_directories(*options.output_dir);
    cloud_out.emplace(*options.output_dir / "fused_clouds.bin");
    mask_out.emplace(*options.output_dir / "fused_masks.bin");
    if (options.export_mask_png) fs::create_directories(*options.output_dir / "masks");
  }

  BoundedQueue<Item> image_q(options.image_queue), cloud_q(options.cloud_queue);
  BoundedQueue<MapItem> map_q(options.map_queue);
  ErrorSlot errors;
  auto abort_all = [&] {
    image_q.close();
    cloud_q.close();
    map_q.close();
  };

  StageLog image_log, cloud_log, map_log;
  Sha256 cloud_sha, mask_sha;
  std::vector<double> cloud_stamps, mask_stamps;
  std::vector<std::string> warnings;
  VoxelMap map(registry.size(), MapOptions::from(cfg));

  const auto start = Clock::now();

  std::thread image_thread([&] {
    try {
      ImageFusion fusion(rec.calibration, cfg);
      while (auto item = image_q.pop()) {
        const auto t0 = Clock::now();
        const RgbFrame& f = rec.rgb[item->index];
        // Thermal frames stamped after the previous RGB frame and up to this one.
        const double window_start =
            item->index > 0 ? rec.rgb[item->index - 1].stamp : -std::numeric_limits<double>::infinity();
        std::span<const DetectionBox> th;
        std::optional<double> th_stamp;
        if (auto k = latest_at_or_before(rec.thermal, f.stamp); k && rec.thermal[*k].stamp > window_start) {
          th = rec.thermal[*k].detections;
          th_stamp = rec.thermal[*k].stamp;
        }
        ScoreMask mask = f.mask;
        mask.set_stamp(f.stamp);
        const FusedMask fused = fusion.process(mask, f.depth, f.detections, th, th_stamp, traj);
        const std::string payload = encode_mask(fused.scores);
        mask_sha.update(payload);
        if (mask_out) mask_out->write(f.stamp, payload);
        if (options.output_dir && options.export_mask_png) {
          char name[32];
          std::snprintf(name, sizeof name, "rgb_%06zu.png", item->index);
          write_index_png(*options.output_dir / "masks" / name, fused.scores.argmax_image(), fused.width(),
                          fused.height());
        }
        image_log.output(f.stamp);
        mask_stamps.push_back(f.stamp);
        ++image_log.processed;
        image_log.busy_ms += ms_since(t0);
        image_log.latency_ms.push_back(ms_since(item->enqueued));
      }
    } catch (...) {
      errors.set(std::current_exception());
      abort_all();
    }
  });

  std::thread cloud_thread([&] {
    try {
      std::set<std::string> seen_warnings;
      while (auto item = cloud_q.pop()) {
        const auto t0 = Clock::now();
        const ScanMessage& scan = rec.scans[item->index];
        std::vector<CameraFrame> frames;
        if (auto k = latest_at_or_before(rec.rgb, scan.stamp)) {
          const RgbFrame& f = rec.rgb[*k];
          frames.push_back({CameraId::Rgb, f.stamp, &f.mask, f.detections});
        }
        if (auto k = latest_at_or_before(rec.thermal, scan.stamp)) {
          const ThermalFrame& f = rec.thermal[*k];
          frames.push_back({CameraId::Thermal, f.stamp, nullptr, f.detections});
        }
        SemanticCloud input = scan.cloud;
        input.scan_stamp = scan.stamp;
        AugmentResult fused = augment_scan(input, frames, traj, rec.calibration, cfg);
        for (auto& w : fused.warnings)
          if (seen_warnings.insert(w).second) warnings.push_back(w);
        SemanticCloud world = transform_to_world(fused.cloud, traj, rec.calibration.extrinsics.base_T_lidar,
                                                 cfg.per_point_chain, cfg.trajectory_slack);
        if (observer) observer(item->index, scan, fused.cloud, world);
        const std::string payload = encode_cloud(world);
        cloud_sha.update(payload);
        if (cloud_out) cloud_out->write(scan.stamp, payload);
        cloud_log.output(scan.stamp);
        cloud_stamps.push_back(scan.stamp);
        ++cloud_log.processed;
        cloud_log.busy_ms += ms_since(t0);
        cloud_log.latency_ms.push_back(ms_since(item->enqueued));
        MapItem next{item->index, scan.stamp, std::move(world), item->enqueued};
        ++map_log.received;  // single producer; read after join
        if (realtime)
          map_q.push_drop_oldest(std::move(next));
        else if (!map_q.push(std::move(next)))
          break;
      }
    } catch (...) {
      errors.set(std::current_exception());
      abort_all();
    }
    map_q.close();
  });

  std::thread map_thread([&] {
    try {
      while (auto item = map_q.pop()) {
        const auto t0 = Clock::now();
        map.integrate_cloud(item->world, static_cast<std::int64_t>(item->scan_index));
        map_log.output(item->stamp);
        ++map_log.processed;
        map_log.busy_ms += ms_since(t0);
        map_log.latency_ms.push_back(ms_since(item->enqueued));
      }
    } catch (...) {
      errors.set(std::current_exception());
      abort_all();
    }
  });

  // Source: global stamp order. Camera results are read by the stages as
  // latest-value inputs looked up by stamp, so only RGB frames and scans are
  // queued; the trajectory is available to every stage from the start.
  try {
    const auto order = merged_order(rec);
    std::optional<double> first_stamp;
    for (const auto& ref : order) {
      if (ref.kind != StreamKind::Rgb && ref.kind != StreamKind::Lidar) continue;
      if (realtime) {
        if (!first_stamp) first_stamp = ref.stamp;
        const auto due = start + std::chrono::duration_cast<Clock::duration>(
                                     std::chrono::duration<double>((ref.stamp - *first_stamp) / options.realtime_factor));
        std::this_thread::sleep_until(due);
      }
      Item item{ref.kind, ref.index, ref.stamp, Clock::now()};
      bool ok = true;
      auto send = [&](BoundedQueue<Item>& q) {
        if (realtime)
          q.push_drop_oldest(item);
        else
          ok = ok && q.push(item);
      };
      switch (ref.kind) {
        case StreamKind::Rgb:
          ++image_log.received;
          send(image_q);
          break;
        case StreamKind::Lidar:
          ++cloud_log.received;
          send(cloud_q);
          break;
        case StreamKind::Thermal:
        case StreamKind::Trajectory:
          break;
      }
      if (!ok) break;
    }
  } catch (...) {
    errors.set(std::current_exception());
    abort_all();
  }
  image_q.close();
  cloud_q.close();
  image_thread.join();
  cloud_thread.join();
  map_thread.join();
  errors.rethrow();

  const double wall_s = std::chrono::duration<double>(Clock::now() - start).count();
  if (cloud_out) cloud_out->close();
  if (mask_out) mask_out->close();

  const std::string map_bin = map_bytes(map, registry);
  if (options.output_dir) {
    std::ofstream os(*options.output_dir / "map.bin", std::ios::binary | std::ios::trunc);
    os << map_bin;
    std::ofstream nd(*options.output_dir / "map.ndjson", std::ios::trunc);
    write_map_ndjson(nd, map.export_map(), registry);
    if (!os || !nd) throw Error("io", "cannot write map files to " + options.output_dir->string());
  }

  PipelineResult result{RunReport{}, std::move(map), std::move(cloud_stamps), std::move(mask_stamps)};
  RunReport& r = result.report;
  r.mode = realtime ? "realtime" : "offline";
  r.realtime_factor = realtime ? options.realtime_factor : 0.0;
  r.wall_seconds = wall_s;
  r.stages.push_back(make_report("image_fusion", image_log, image_q.dropped(), image_q.capacity(), image_q.peak(), wall_s));
  r.stages.push_back(make_report("cloud_fusion", cloud_log, cloud_q.dropped(), cloud_q.capacity(), cloud_q.peak(), wall_s));
  r.stages.push_back(make_report("map_integration", map_log, map_q.dropped(), map_q.capacity(), map_q.peak(), wall_s));
  for (const auto& s : r.stages) {
    r.dropped_total += s.dropped;
    r.peak_queued_total += s.peak_queue;
    r.capacity_total += s.queue_capacity;
    r.monotone = r.monotone && s.monotone;
  }
  r.warnings = std::move(warnings);
  r.output_digest = sha256_hex(cloud_sha.hex() + mask_sha.hex() + sha256_hex(map_bin));
  return result;
}

// ---------------------------------------------------------------------------

TableEvaluator::TableEvaluator(const Recording& rec, const FusionConfig& cfg, std::optional<CameraId> fov_camera)
    : rec_(&rec),
      cfg_(cfg),
      camera_(fov_camera),
      gt_(rec.ground_truth ? rec.ground_truth->to_voxel_map(cfg.epsilon_prob)
                           : throw Error("missing_ground_truth", "recording has no ground-truth map")),
      lidar_(rec.registry.size()),
      fused_(rec.registry.size()),
      lidar_fov_(rec.registry.size()),
      fused_fov_(rec.registry.size()) {}

void TableEvaluator::add(const ScanMessage& raw, const SemanticCloud& fused) {
  const std::size_t C = rec_->registry.size();
  const auto& traj = rec_->trajectory;
  const auto& base_T_lidar = rec_->calibration.extrinsics.base_T_lidar;
  SemanticCloud raw_cloud = raw.cloud;
  raw_cloud.scan_stamp = raw.stamp;
  auto count = [&](const SemanticCloud& lidar_frame, ConfusionCounts& into) {
    const SemanticCloud world =
        transform_to_world(lidar_frame, traj, base_T_lidar, cfg_.per_point_chain, cfg_.trajectory_slack);
    into += count_labels(label_against_map(world, gt_), C);
  };
  count(raw_cloud, lidar_);
  count(fused, fused_);
  if (camera_) {
    const RigidTransform chain = rec_->calibration.extrinsics.cam_T_base(*camera_) * base_T_lidar;
    const CameraModel& cam = rec_->calibration.camera(*camera_);
    count(restrict_to_fov(raw_cloud, cam, chain), lidar_fov_);
    count(restrict_to_fov(fused, cam, chain), fused_fov_);
  }
}

FusedScanObserver TableEvaluator::observer() {
  return [this](std::size_t, const ScanMessage& raw, const SemanticCloud& fused, const SemanticCloud&) {
    add(raw, fused);
  };
}

std::vector<EvaluationRow> TableEvaluator::rows() const {
  std::vector<EvaluationRow> out{{"LiDAR segmentation", iou(lidar_)}, {"fused semantic cloud", iou(fused_)}};
  if (camera_) {
    out.push_back({"LiDAR segmentation, reduced to camera FoV", iou(lidar_fov_)});
    out.push_back({"fused semantic cloud, reduced to camera FoV", iou(fused_fov_)});
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_index_png(const fs::path& path, const std::vector<std::uint8_t>& labels, int width, int height) {
  if (labels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw Error("invalid_argument", "label image size does not match its dimensions");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("io", "cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("io", "PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int v = 0; v < height; ++v)
    png_write_row(png, const_cast<png_bytep>(labels.data() + static_cast<std::size_t>(v) * static_cast<std::size_t>(width)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace semfuse
