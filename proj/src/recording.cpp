#include "semfuse/recording.hpp"

#include "semfuse/binary_io.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>

namespace semfuse {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// validation

void Recording::validate(double slack) const {
  const std::size_t classes = registry.size();
  auto fail = [](const std::string& msg) { throw Error("invalid_recording", msg); };
  Trajectory traj(trajectory);  // checks strict stamp order
  auto check_monotone = [&](const auto& stream, const char* name) {
    for (std::size_t i = 1; i < stream.size(); ++i)
      if (stream[i].stamp < stream[i - 1].stamp) fail(std::string(name) + "[" + std::to_string(i) + "]: stamp decreases");
  };
  check_monotone(scans, "lidar");
  check_monotone(rgb, "rgb");
  check_monotone(thermal, "thermal");
  auto check_cover = [&](double t, const std::string& what) {
    if (!traj.covers(t, slack)) fail(what + ": stamp " + std::to_string(t) + " not covered by the trajectory");
  };
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const auto& s = scans[i];
    const std::string what = "lidar[" + std::to_string(i) + "]";
    check_cover(s.stamp, what);
    check_cover(s.stamp + sweep_period, what);
    for (const auto& p : s.cloud.points)
      if (p.scores.size() != classes) fail(what + ": score vector class count differs from the manifest");
  }
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const std::string what = "rgb[" + std::to_string(i) + "]";
    check_cover(rgb[i].stamp, what);
    if (rgb[i].mask.classes() != classes) fail(what + ": mask class count differs from the manifest");
    for (const auto& d : rgb[i].detections)
      if (static_cast<std::size_t>(d.class_id()) >= classes) fail(what + ": detection class out of range");
  }
  for (std::size_t i = 0; i < thermal.size(); ++i) {
    const std::string what = "thermal[" + std::to_string(i) + "]";
    check_cover(thermal[i].stamp, what);
    for (const auto& d : thermal[i].detections)
      if (static_cast<std::size_t>(d.class_id()) >= classes) fail(what + ": detection class out of range");
  }
  if (ground_truth && ground_truth->registry.size() != classes)
    fail("ground truth map class count differs from the manifest");
}

// ---------------------------------------------------------------------------
// payload codecs

std::string encode_pose(const RigidTransform& pose) {
  ByteWriter w;
  const auto& q = pose.rotation();
  const auto& t = pose.translation();
  for (double v : {q.w(), q.x(), q.y(), q.z(), t.x(), t.y(), t.z()}) w.put(v);
  return w.take();
}

RigidTransform decode_pose(std::string_view payload) {
  ByteReader r(payload, "pose");
  std::array<double, 7> v{};
  for (auto& x : v) x = r.get<double>();
  r.expect_done();
  return RigidTransform(Eigen::Quaterniond(v[0], v[1], v[2], v[3]), Eigen::Vector3d(v[4], v[5], v[6]));
}

std::string encode_cloud(const SemanticCloud& cloud) {
  ByteWriter w;
  const std::uint32_t classes = cloud.points.empty() ? 0 : static_cast<std::uint32_t>(cloud.points.front().scores.size());
  w.put(static_cast<std::uint8_t>(cloud.frame == CloudFrame::World ? 1 : 0));
  w.put(static_cast<std::uint32_t>(cloud.points.size()));
  w.put(classes);
  for (const auto& p : cloud.points) {
    if (p.scores.size() != classes) throw Error("class_mismatch", "cloud points differ in class count");
    w.put(p.position.x());
    w.put(p.position.y());
    w.put(p.position.z());
    w.put(p.intensity);
    w.put(p.stamp_offset);
    for (std::size_t i = 0; i < classes; ++i) w.put(p.scores[i]);
  }
  return w.take();
}

SemanticCloud decode_cloud(std::string_view payload, double stamp) {
  ByteReader r(payload, "cloud");
  SemanticCloud cloud;
  cloud.scan_stamp = stamp;
  cloud.frame = r.get<std::uint8_t>() ? CloudFrame::World : CloudFrame::Lidar;
  const auto n = r.get<std::uint32_t>();
  const auto classes = r.get<std::uint32_t>();
  cloud.points.resize(n);
  for (auto& p : cloud.points) {
    p.position.x() = r.get<double>();
    p.position.y() = r.get<double>();
    p.position.z() = r.get<double>();
    p.intensity = r.get<double>();
    p.stamp_offset = r.get<double>();
    Eigen::VectorXd s(classes);
    for (std::uint32_t i = 0; i < classes; ++i) s[i] = r.get<double>();
    p.set_scores(ProbabilityVector::unchecked(std::move(s)));
  }
  r.expect_done();
  return cloud;
}

std::string encode_mask(const ScoreMask& mask) {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(mask.width()));
  w.put(static_cast<std::uint32_t>(mask.height()));
  w.put(static_cast<std::uint32_t>(mask.classes()));
  for (double v : mask.data()) w.put(v);
  return w.take();
}

ScoreMask decode_mask(std::string_view payload, double stamp) {
  ByteReader r(payload, "mask");
  const auto w = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  const auto c = r.get<std::uint32_t>();
  ScoreMask mask(static_cast<int>(w), static_cast<int>(h), c, stamp);
  for (double& v : mask.data()) v = r.get<double>();
  r.expect_done();
  return mask;
}

std::string encode_depth(const DepthImage& depth) {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(depth.width()));
  w.put(static_cast<std::uint32_t>(depth.height()));
  for (double v : depth.data()) w.put(v);
  return w.take();
}

DepthImage decode_depth(std::string_view payload, double stamp) {
  ByteReader r(payload, "depth");
  const auto w = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  DepthImage depth(static_cast<int>(w), static_cast<int>(h), stamp);
  for (double& v : depth.data()) v = r.get<double>();
  r.expect_done();
  return depth;
}

std::string encode_detections(const std::vector<DetectionBox>& dets) {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(dets.size()));
  for (const auto& d : dets) {
    w.put(static_cast<std::int32_t>(d.class_id()));
    w.put(d.score());
    w.put(d.u_min());
    w.put(d.v_min());
    w.put(d.u_max());
    w.put(d.v_max());
  }
  return w.take();
}

std::vector<DetectionBox> decode_detections(std::string_view payload, CameraId camera) {
  ByteReader r(payload, "detections");
  const auto n = r.get<std::uint32_t>();
  std::vector<DetectionBox> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto cls = r.get<std::int32_t>();
    const double score = r.get<double>();
    const double u0 = r.get<double>(), v0 = r.get<double>(), u1 = r.get<double>(), v1 = r.get<double>();
    out.emplace_back(cls, score, u0, v0, u1, v1, camera);
  }
  r.expect_done();
  return out;
}

// ---------------------------------------------------------------------------
// record files

RecordWriter::RecordWriter(const fs::path& path) : path_(path), os_(path, std::ios::binary | std::ios::trunc) {
  if (!os_) throw Error("io", "cannot open " + path.string() + " for writing");
}

void RecordWriter::write(double stamp, std::string_view payload) {
  if (records_ > 0 && stamp < last_stamp_)
    throw Error("invalid_recording", path_.filename().string() + ": stamps must be monotone");
  ByteWriter w;
  w.put(stamp);
  w.put(static_cast<std::uint32_t>(payload.size()));
  os_.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  os_.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!os_) throw Error("io", "write failed: " + path_.string());
  last_stamp_ = stamp;
  ++records_;
}

void RecordWriter::close() {
  os_.close();
  if (!os_) throw Error("io", "close failed: " + path_.string());
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io", "missing file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<RawRecord> read_records(const fs::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes, path.filename().string());
  std::vector<RawRecord> out;
  while (!r.done()) {
    RawRecord rec;
    try {
      rec.stamp = r.get<double>();
      const auto len = r.get<std::uint32_t>();
      rec.payload = std::string(r.get_bytes(len));
    } catch (const Error&) {
      throw Error("corrupt", path.filename().string() + ": record " + std::to_string(out.size()) + " is truncated");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("internal", "SHA-256 computation failed");
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
    throw Error("internal", "SHA-256 initialization failed");
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(std::string_view bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
}

std::string Sha256::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  auto* ctx = static_cast<EVP_MD_CTX*>(ctx_);
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// directory layout

namespace {

struct StreamInfo {
  std::string file;
  std::size_t records;
  std::string sha256;
};

nlohmann::json stream_json(const StreamInfo& s) {
  return {{"file", s.file}, {"records", s.records}, {"sha256", s.sha256}};
}

nlohmann::json manifest_base(const Recording& rec) {
  nlohmann::json m;
  m["format"] = "semfuse-recording";
  m["version"] = 1;
  m["classes"] = nlohmann::json::parse(rec.registry.to_json())["classes"];
  m["calibration"] = nlohmann::json::parse(rec.calibration.to_json());
  m["rates"] = {{"lidar", rec.rates.lidar_hz}, {"rgb", rec.rates.rgb_hz}, {"thermal", rec.rates.thermal_hz}};
  m["sweep_period"] = rec.sweep_period;
  return m;
}

void parse_manifest_base(const nlohmann::json& m, Recording& rec) {
  try {
    if (m.at("format").get<std::string>() != "semfuse-recording")
      throw Error("corrupt", "manifest.json: unknown format");
    rec.registry = ClassRegistry::from_json(nlohmann::json{{"classes", m.at("classes")}}.dump());
    rec.calibration = Calibration::from_json(m.at("calibration").dump());
    rec.rates.lidar_hz = m.at("rates").at("lidar").get<double>();
    rec.rates.rgb_hz = m.at("rates").at("rgb").get<double>();
    rec.rates.thermal_hz = m.at("rates").at("thermal").get<double>();
    rec.sweep_period = m.at("sweep_period").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt", std::string("manifest.json: ") + e.what());
  }
}

nlohmann::json load_manifest(const fs::path& dir) {
  try {
    return nlohmann::json::parse(read_file(dir / stream_files::kManifest));
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt", std::string("manifest.json: ") + e.what());
  }
}

std::vector<RawRecord> load_stream(const fs::path& dir, const nlohmann::json& manifest, const std::string& name) {
  if (!manifest.contains("streams") || !manifest["streams"].contains(name))
    throw Error("corrupt", "manifest.json: missing stream '" + name + "'");
  const auto& s = manifest["streams"][name];
  const fs::path path = dir / s.at("file").get<std::string>();
  const std::string bytes = read_file(path);
  if (sha256_hex(bytes) != s.at("sha256").get<std::string>())
    throw Error("corrupt", path.filename().string() + ": digest mismatch");
  auto records = read_records(path);
  if (records.size() != s.at("records").get<std::size_t>())
    throw Error("corrupt", path.filename().string() + ": record count differs from the manifest");
  return records;
}

}  // namespace

std::string write_recording(const Recording& rec, const fs::path& dir) {
  rec.validate();
  fs::create_directories(dir);
  nlohmann::json manifest = manifest_base(rec);

  auto write_stream = [&](const char* key, const char* file, auto&& emit) {
    RecordWriter w(dir / file);
    emit(w);
    w.close();
    manifest["streams"][key] = stream_json({file, w.records(), sha256_file(dir / file)});
  };
  write_stream("trajectory", stream_files::kTrajectory, [&](RecordWriter& w) {
    for (const auto& s : rec.trajectory) w.write(s.stamp, encode_pose(s.pose));
  });
  write_stream("lidar", stream_files::kLidar, [&](RecordWriter& w) {
    for (const auto& s : rec.scans) w.write(s.stamp, encode_cloud(s.cloud));
  });
  write_stream("rgb_masks", stream_files::kRgbMask, [&](RecordWriter& w) {
    for (const auto& f : rec.rgb) w.write(f.stamp, encode_mask(f.mask));
  });
  write_stream("rgb_depths", stream_files::kRgbDepth, [&](RecordWriter& w) {
    for (const auto& f : rec.rgb) w.write(f.stamp, encode_depth(f.depth));
  });
  write_stream("rgb_detections", stream_files::kRgbDetections, [&](RecordWriter& w) {
    for (const auto& f : rec.rgb) w.write(f.stamp, encode_detections(f.detections));
  });
  write_stream("thermal_detections", stream_files::kThermalDetections, [&](RecordWriter& w) {
    for (const auto& f : rec.thermal) w.write(f.stamp, encode_detections(f.detections));
  });
  if (rec.ground_truth) {
    const fs::path path = dir / stream_files::kGroundTruthMap;
    {
      std::ofstream os(path, std::ios::binary | std::ios::trunc);
      if (!os) throw Error("io", "cannot open " + path.string());
      write_map_binary(os, rec.ground_truth->records, rec.ground_truth->voxel_size, rec.ground_truth->registry);
    }
    manifest["ground_truth"] = {{"file", stream_files::kGroundTruthMap}, {"sha256", sha256_file(path)}};
  }

  const std::string text = manifest.dump(2);
  {
    std::ofstream os(dir / stream_files::kManifest, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("io", "cannot write manifest.json");
    os << text << '\n';
  }
  return sha256_hex(text);
}

Recording read_recording(const fs::path& dir) {
  const nlohmann::json manifest = load_manifest(dir);
  Recording rec;
  parse_manifest_base(manifest, rec);

  for (auto& r : load_stream(dir, manifest, "trajectory")) rec.trajectory.push_back({r.stamp, decode_pose(r.payload)});
  for (auto& r : load_stream(dir, manifest, "lidar")) rec.scans.push_back({r.stamp, decode_cloud(r.payload, r.stamp)});
  auto masks = load_stream(dir, manifest, "rgb_masks");
  auto depths = load_stream(dir, manifest, "rgb_depths");
  auto dets = load_stream(dir, manifest, "rgb_detections");
  if (masks.size() != depths.size() || masks.size() != dets.size())
    throw Error("corrupt", "rgb streams differ in record count");
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].stamp != depths[i].stamp || masks[i].stamp != dets[i].stamp)
      throw Error("corrupt", "rgb record " + std::to_string(i) + ": stamps differ between streams");
    rec.rgb.push_back({masks[i].stamp, decode_mask(masks[i].payload, masks[i].stamp),
                       decode_depth(depths[i].payload, depths[i].stamp),
                       decode_detections(dets[i].payload, CameraId::Rgb)});
  }
  for (auto& r : load_stream(dir, manifest, "thermal_detections"))
    rec.thermal.push_back({r.stamp, decode_detections(r.payload, CameraId::Thermal)});

  if (manifest.contains("ground_truth")) {
    const fs::path path = dir / manifest["ground_truth"].at("file").get<std::string>();
    const std::string bytes = read_file(path);
    if (sha256_hex(bytes) != manifest["ground_truth"].at("sha256").get<std::string>())
      throw Error("corrupt", path.filename().string() + ": digest mismatch");
    std::istringstream is(bytes);
    rec.ground_truth = read_map_binary(is);
  }
  rec.validate();
  return rec;
}

// ---------------------------------------------------------------------------
// ordering

double message_stamp(const Message& m) {
  return std::visit(
      [](const auto& x) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, TrajectoryMessage>)
          return x.sample.stamp;
        else
          return x.stamp;
      },
      m);
}

StreamKind message_kind(const Message& m) {
  switch (m.index()) {
    case 0: return StreamKind::Trajectory;
    case 1: return StreamKind::Lidar;
    case 2: return StreamKind::Rgb;
    default: return StreamKind::Thermal;
  }
}

namespace {

bool ref_less(const MessageRef& a, const MessageRef& b) {
  if (a.stamp != b.stamp) return a.stamp < b.stamp;
  if (a.kind != b.kind) return a.kind < b.kind;
  return a.index < b.index;
}

// Merges already sorted per-stream lists.
std::vector<MessageRef> merge_streams(std::array<std::vector<double>, 4> stamps) {
  std::vector<MessageRef> out;
  std::array<std::size_t, 4> pos{};
  std::size_t total = 0;
  for (const auto& s : stamps) total += s.size();
  out.reserve(total);
  while (out.size() < total) {
    std::optional<MessageRef> best;
    for (int k = 0; k < 4; ++k) {
      if (pos[k] >= stamps[k].size()) continue;
      MessageRef cand{stamps[k][pos[k]], static_cast<StreamKind>(k), pos[k]};
      if (!best || ref_less(cand, *best)) best = cand;
    }
    out.push_back(*best);
    ++pos[static_cast<int>(best->kind)];
  }
  return out;
}

}  // namespace

std::vector<MessageRef> merged_order(const Recording& rec) {
  std::array<std::vector<double>, 4> stamps;
  for (const auto& s : rec.trajectory) stamps[0].push_back(s.stamp);
  for (const auto& f : rec.rgb) stamps[1].push_back(f.stamp);
  for (const auto& f : rec.thermal) stamps[2].push_back(f.stamp);
  for (const auto& s : rec.scans) stamps[3].push_back(s.stamp);
  return merge_streams(std::move(stamps));
}

RecordingReader::RecordingReader(const fs::path& dir) : dir_(dir) {
  const nlohmann::json manifest = load_manifest(dir);
  parse_manifest_base(manifest, header_);
  trajectory_ = load_stream(dir, manifest, "trajectory");
  lidar_ = load_stream(dir, manifest, "lidar");
  rgb_mask_ = load_stream(dir, manifest, "rgb_masks");
  rgb_depth_ = load_stream(dir, manifest, "rgb_depths");
  rgb_dets_ = load_stream(dir, manifest, "rgb_detections");
  thermal_dets_ = load_stream(dir, manifest, "thermal_detections");
  if (rgb_mask_.size() != rgb_depth_.size() || rgb_mask_.size() != rgb_dets_.size())
    throw Error("corrupt", "rgb streams differ in record count");

  std::array<std::vector<double>, 4> stamps;
  for (const auto& r : trajectory_) stamps[0].push_back(r.stamp);
  for (const auto& r : rgb_mask_) stamps[1].push_back(r.stamp);
  for (const auto& r : thermal_dets_) stamps[2].push_back(r.stamp);
  for (const auto& r : lidar_) stamps[3].push_back(r.stamp);
  for (const auto& ref : merge_streams(std::move(stamps))) order_.push_back({ref.stamp, ref.kind, ref.index});
}

std::optional<Message> RecordingReader::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const Entry e = order_[cursor_++];
  switch (e.kind) {
    case StreamKind::Trajectory: {
      const auto& r = trajectory_[e.index];
      return TrajectoryMessage{{r.stamp, decode_pose(r.payload)}};
    }
    case StreamKind::Lidar: {
      const auto& r = lidar_[e.index];
      return ScanMessage{r.stamp, decode_cloud(r.payload, r.stamp)};
    }
    case StreamKind::Rgb: {
      const auto& m = rgb_mask_[e.index];
      return RgbFrame{m.stamp, decode_mask(m.payload, m.stamp),
                      decode_depth(rgb_depth_[e.index].payload, m.stamp),
                      decode_detections(rgb_dets_[e.index].payload, CameraId::Rgb)};
    }
    case StreamKind::Thermal: {
      const auto& r = thermal_dets_[e.index];
      return ThermalFrame{r.stamp, decode_detections(r.payload, CameraId::Thermal)};
    }
  }
  return std::nullopt;
}

}  // namespace semfuse
