#include "semfuse/voxel_map.hpp"

#include "semfuse/binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace semfuse {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

LogProbabilityVector normalize_log(Eigen::VectorXd c) {
  c.array() -= log_sum_exp(c);
  return LogProbabilityVector::unchecked(std::move(c));
}

}  // namespace

std::size_t VoxelKeyHash::operator()(const VoxelKey& k) const noexcept {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(k.ix));
  h = mix64(h ^ static_cast<std::uint64_t>(k.iy));
  h = mix64(h ^ static_cast<std::uint64_t>(k.iz));
  return static_cast<std::size_t>(h);
}

VoxelKey voxel_key(const Eigen::Vector3d& position, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(position.x() / voxel_size)),
          static_cast<std::int64_t>(std::floor(position.y() / voxel_size)),
          static_cast<std::int64_t>(std::floor(position.z() / voxel_size))};
}

LogProbabilityVector log_bayes_update(const LogProbabilityVector& prev, const LogProbabilityVector& obs) {
  if (prev.size() != obs.size()) throw Error("invalid_argument", "log_bayes_update: class counts differ");
  Eigen::VectorXd c = prev.values() + obs.values();
  Eigen::Index imax = 0;
  const double m = c.maxCoeff(&imax);
  double rest = 0.0;
  for (Eigen::Index j = 0; j < c.size(); ++j)
    if (j != imax) rest += std::exp(c[j] - m);
  const double norm = m + std::log1p(rest);
  c.array() -= norm;
  return LogProbabilityVector::unchecked(std::move(c));
}

// ---------------------------------------------------------------------------

NaiveProductFusion::NaiveProductFusion(std::size_t classes)
    : product_(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(classes), 1.0 / static_cast<double>(classes))) {}

void NaiveProductFusion::update(const ProbabilityVector& obs) { product_.array() *= obs.values().array(); }

std::optional<ProbabilityVector> NaiveProductFusion::posterior() const {
  const double s = product_.sum();
  if (!(s > 0.0) || !std::isfinite(s)) return std::nullopt;
  return ProbabilityVector::unchecked(product_ / s);
}

// ---------------------------------------------------------------------------

MapOptions MapOptions::from(const FusionConfig& cfg) {
  return {cfg.voxel_size, cfg.deque_len, cfg.horizon_mode, cfg.scan_merge, cfg.epsilon_prob};
}

VoxelMap::VoxelMap(std::size_t classes, MapOptions options) : classes_(classes), options_(options) {
  if (classes == 0) throw Error("invalid_argument", "voxel map needs at least one class");
  if (!(options_.voxel_size > 0.0)) throw Error("invalid_argument", "voxel size must be positive");
}

IntegrationSummary VoxelMap::integrate_cloud(const SemanticCloud& cloud, std::int64_t scan_id) {
  if (cloud.frame != CloudFrame::World) throw Error("invalid_frame", "integrate_cloud expects a world-frame cloud");

  struct Accum {
    Eigen::VectorXd sum;  // log sum (bayes) or probability sum (mean)
    Eigen::Vector3d position_sum = Eigen::Vector3d::Zero();
    std::size_t count = 0;
  };
  // Keys in first-seen order keep the summary and floating-point sums independent of hashing.
  std::vector<VoxelKey> order;
  std::unordered_map<VoxelKey, Accum, VoxelKeyHash> groups;
  IntegrationSummary summary;
  for (const auto& p : cloud.points) {
    if (p.scores.size() != classes_) throw Error("class_mismatch", "point score vector has the wrong class count");
    if (!p.position.allFinite()) continue;
    const VoxelKey key = voxel_key(p.position, options_.voxel_size);
    auto [it, inserted] = groups.try_emplace(key);
    Accum& acc = it->second;
    if (inserted) {
      order.push_back(key);
      acc.sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes_));
    }
    if (options_.merge == ScanMerge::Bayes)
      acc.sum += p.scores.values().array().max(options_.epsilon_prob).log().matrix();
    else
      acc.sum += p.scores.values();
    acc.position_sum += p.position;
    ++acc.count;
    ++summary.points;
  }

  for (const VoxelKey& key : order) {
    Accum& acc = groups.at(key);
    LogProbabilityVector obs =
        options_.merge == ScanMerge::Bayes
            ? normalize_log(std::move(acc.sum))
            : to_log(ProbabilityVector::unchecked(acc.sum / static_cast<double>(acc.count)), options_.epsilon_prob);

    auto [it, inserted] = voxels_.try_emplace(key);
    Voxel& voxel = it->second;
    if (inserted) {
      voxel.log_probs = LogProbabilityVector::uniform(classes_);
      ++summary.voxels_created;
    }
    ++summary.voxels_touched;
    voxel.position_sum += acc.position_sum;
    voxel.point_count += acc.count;

    if (options_.horizon == 0) {
      voxel.log_probs = log_bayes_update(voxel.log_probs, obs);
      continue;
    }
    if (!voxel.scans.empty() && voxel.scans.back().scan_id == scan_id) {
      ScanObservation& back = voxel.scans.back();
      if (options_.merge == ScanMerge::Bayes) {
        back.log_probs = log_bayes_update(back.log_probs, obs);
      } else {
        const double n0 = static_cast<double>(back.point_count);
        const double n1 = static_cast<double>(acc.count);
        Eigen::VectorXd p = (n0 * from_log(back.log_probs).values() + n1 * from_log(obs).values()) / (n0 + n1);
        back.log_probs = to_log(ProbabilityVector::unchecked(std::move(p)), options_.epsilon_prob);
      }
      back.point_count += acc.count;
      continue;
    }
    voxel.scans.push_back({scan_id, std::move(obs), acc.count});
    while (voxel.scans.size() > options_.horizon) {
      if (options_.mode == HorizonMode::Fold) {
        voxel.log_probs = log_bayes_update(voxel.log_probs, voxel.scans.front().log_probs);
        ++summary.scans_folded;
      } else {
        ++summary.scans_dropped;
      }
      voxel.scans.pop_front();
    }
  }
  return summary;
}

LogProbabilityVector VoxelMap::posterior_log(const Voxel& v) const {
  LogProbabilityVector acc = v.log_probs;
  for (const auto& s : v.scans) acc = log_bayes_update(acc, s.log_probs);
  return acc;
}

const Voxel* VoxelMap::find(const VoxelKey& key) const {
  auto it = voxels_.find(key);
  return it == voxels_.end() ? nullptr : &it->second;
}

std::optional<VoxelQuery> VoxelMap::query(const VoxelKey& key) const {
  const Voxel* v = find(key);
  if (!v) return std::nullopt;
  ProbabilityVector p = from_log(posterior_log(*v));
  const ClassId arg = p.argmax();
  return VoxelQuery{std::move(p), arg, v->point_count};
}

std::optional<VoxelQuery> VoxelMap::query(const Eigen::Vector3d& position) const {
  return query(voxel_key(position, options_.voxel_size));
}

std::vector<VoxelRecord> VoxelMap::export_map() const {
  std::vector<VoxelRecord> out;
  out.reserve(voxels_.size());
  for (const auto& [key, voxel] : voxels_) {
    ProbabilityVector p = from_log(posterior_log(voxel));
    const ClassId arg = p.argmax();
    out.push_back({key, voxel.mean_position(), voxel.point_count, std::move(p), arg});
  }
  std::sort(out.begin(), out.end(), [](const VoxelRecord& a, const VoxelRecord& b) { return a.key < b.key; });
  return out;
}

void VoxelMap::insert_record(const VoxelRecord& record) {
  if (record.posterior.size() != classes_) throw Error("class_mismatch", "record posterior has the wrong class count");
  Voxel v;
  v.log_probs = to_log(record.posterior, options_.epsilon_prob);
  v.point_count = record.count;
  v.position_sum = record.mean * static_cast<double>(record.count);
  voxels_[record.key] = std::move(v);
}

// ---------------------------------------------------------------------------

void write_map_ndjson(std::ostream& os, const std::vector<VoxelRecord>& records, const ClassRegistry& registry) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["key"] = {r.key.ix, r.key.iy, r.key.iz};
    j["mean"] = {r.mean.x(), r.mean.y(), r.mean.z()};
    j["count"] = r.count;
    auto& post = j["posterior"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.posterior.size(); ++i) post.push_back(r.posterior[i]);
    j["argmax"] = registry.name(r.argmax);
    os << j.dump() << '\n';
  }
}

namespace {
constexpr char kMapMagic[4] = {'S', 'F', 'V', 'M'};
constexpr std::uint32_t kMapVersion = 1;
}  // namespace

void write_map_binary(std::ostream& os, const std::vector<VoxelRecord>& records, double voxel_size,
                      const ClassRegistry& registry) {
  ByteWriter w;
  w.put_bytes(std::string_view(kMapMagic, 4));
  w.put(kMapVersion);
  w.put(voxel_size);
  w.put(static_cast<std::uint32_t>(registry.size()));
  for (const auto& e : registry.entries()) w.put_string(e.name);
  w.put(static_cast<std::uint64_t>(records.size()));
  for (const auto& r : records) {
    if (r.posterior.size() != registry.size()) throw Error("class_mismatch", "record posterior has the wrong class count");
    w.put(r.key.ix);
    w.put(r.key.iy);
    w.put(r.key.iz);
    w.put(r.mean.x());
    w.put(r.mean.y());
    w.put(r.mean.z());
    w.put(static_cast<std::uint64_t>(r.count));
    w.put(static_cast<std::uint32_t>(r.argmax));
    for (std::size_t i = 0; i < r.posterior.size(); ++i) w.put(r.posterior[i]);
  }
  os.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!os) throw Error("io", "failed to write binary map");
}

LoadedMap read_map_binary(std::istream& is) {
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ByteReader r(bytes, "binary map");
  if (r.get_bytes(4) != std::string_view(kMapMagic, 4)) throw Error("corrupt", "binary map: bad magic");
  if (r.get<std::uint32_t>() != kMapVersion) throw Error("corrupt", "binary map: unsupported version");
  const double voxel_size = r.get<double>();
  const auto classes = r.get<std::uint32_t>();
  std::vector<ClassRegistry::Entry> entries;
  for (std::uint32_t i = 0; i < classes; ++i) entries.push_back({r.get_string(), false});
  LoadedMap out{voxel_size, ClassRegistry(std::move(entries)), {}};
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    VoxelRecord rec;
    rec.key.ix = r.get<std::int64_t>();
    rec.key.iy = r.get<std::int64_t>();
    rec.key.iz = r.get<std::int64_t>();
    rec.mean.x() = r.get<double>();
    rec.mean.y() = r.get<double>();
    rec.mean.z() = r.get<double>();
    rec.count = static_cast<std::size_t>(r.get<std::uint64_t>());
    rec.argmax = static_cast<ClassId>(r.get<std::uint32_t>());
    Eigen::VectorXd p(classes);
    for (std::uint32_t i = 0; i < classes; ++i) p[i] = r.get<double>();
    rec.posterior = ProbabilityVector::unchecked(std::move(p));
    out.records.push_back(std::move(rec));
  }
  r.expect_done();
  return out;
}

VoxelMap LoadedMap::to_voxel_map(double epsilon_prob) const {
  MapOptions opts;
  opts.voxel_size = voxel_size;
  opts.epsilon_prob = epsilon_prob;
  VoxelMap map(registry.size(), opts);
  for (const auto& r : records) map.insert_record(r);
  return map;
}

}  // namespace semfuse
