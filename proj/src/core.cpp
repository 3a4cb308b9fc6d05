#include "semfuse/core.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace semfuse {

namespace {

constexpr double kSumTolerance = 1e-6;

std::map<std::string, std::string, std::less<>> default_aliases() {
  return {{"person", "person"},   {"pedestrian", "person"}, {"vehicle", "vehicle"},
          {"car", "vehicle"},     {"truck", "vehicle"},     {"bus", "vehicle"},
          {"bicycle", "bicycle"}, {"bike", "bicycle"}};
}

}  // namespace

ClassRegistry::ClassRegistry(std::vector<Entry> entries)
    : entries_(std::move(entries)), aliases_(default_aliases()) {
  if (entries_.empty()) throw Error("invalid_registry", "class registry must not be empty");
  std::set<std::string, std::less<>> seen;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.name.empty())
      throw Error("invalid_registry", "classes[" + std::to_string(i) + "].name is empty");
    if (!seen.insert(e.name).second)
      throw Error("invalid_registry", "duplicate class name '" + e.name + "'");
  }
}

ClassRegistry ClassRegistry::defaults() {
  return ClassRegistry({{"road", false},
                        {"sidewalk", false},
                        {"building", false},
                        {"barrier", false},
                        {"vegetation", false},
                        {"terrain", false},
                        {"sky", false},
                        {"person", true},
                        {"bicycle", true},
                        {"vehicle", true},
                        {"water", false},
                        {"pole", false},
                        {"traffic-sign", false},
                        {"animal", true},
                        {"object", false}});
}

ClassRegistry ClassRegistry::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_registry", std::string("class registry JSON: ") + e.what());
  }
  if (!doc.contains("classes") || !doc["classes"].is_array())
    throw Error("invalid_registry", "class registry JSON: missing array 'classes'");
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < doc["classes"].size(); ++i) {
    const auto& c = doc["classes"][i];
    if (!c.contains("name") || !c["name"].is_string())
      throw Error("invalid_registry", "classes[" + std::to_string(i) + "].name must be a string");
    entries.push_back({c["name"].get<std::string>(), c.value("dynamic", false)});
  }
  return ClassRegistry(std::move(entries));
}

std::string ClassRegistry::to_json() const {
  nlohmann::json doc;
  doc["classes"] = nlohmann::json::array();
  for (const auto& e : entries_) doc["classes"].push_back({{"name", e.name}, {"dynamic", e.dynamic}});
  return doc.dump();
}

std::optional<ClassId> ClassRegistry::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<ClassId>(i);
  return std::nullopt;
}

ClassId ClassRegistry::index_of(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw Error("unknown_class", "class '" + std::string(name) + "' is not in the registry");
}

std::optional<ClassId> ClassRegistry::resolve_detection_label(std::string_view label) const {
  auto it = aliases_.find(label);
  if (it != aliases_.end()) {
    if (auto id = find(it->second)) return id;
  }
  return find(label);
}

bool ClassRegistry::operator==(const ClassRegistry& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name != other.entries_[i].name || entries_[i].dynamic != other.entries_[i].dynamic)
      return false;
  return true;
}

// ---------------------------------------------------------------------------

ProbabilityVector ProbabilityVector::from_values(Eigen::VectorXd values) {
  if (values.size() == 0) throw Error("invalid_probability", "empty probability vector");
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw Error("invalid_probability", "probability entry " + std::to_string(i) + " out of [0,1]");
  }
  if (std::abs(values.sum() - 1.0) > kSumTolerance)
    throw Error("invalid_probability", "probability vector does not sum to 1");
  return ProbabilityVector(std::move(values));
}

ProbabilityVector ProbabilityVector::normalized(Eigen::VectorXd values) {
  if (values.size() == 0) throw Error("invalid_probability", "empty probability vector");
  if (!values.allFinite() || (values.array() < 0.0).any())
    throw Error("invalid_probability", "cannot normalize negative or non-finite scores");
  const double s = values.sum();
  if (!(s > 0.0)) throw Error("invalid_probability", "cannot normalize an all-zero vector");
  values /= s;
  return ProbabilityVector(std::move(values));
}

ProbabilityVector ProbabilityVector::uniform(std::size_t count) {
  return ProbabilityVector(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(count), 1.0 / static_cast<double>(count)));
}

ProbabilityVector ProbabilityVector::one_hot(std::size_t count, ClassId cls, double epsilon) {
  if (cls < 0 || static_cast<std::size_t>(cls) >= count)
    throw Error("invalid_argument", "one_hot class id out of range");
  Eigen::VectorXd v = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(count), epsilon);
  v[cls] = 1.0;
  if (epsilon > 0.0) v /= v.sum();
  return ProbabilityVector(std::move(v));
}

ClassId ProbabilityVector::argmax() const {
  Eigen::Index idx = 0;
  values_.maxCoeff(&idx);
  return static_cast<ClassId>(idx);
}

LogProbabilityVector LogProbabilityVector::uniform(std::size_t count) {
  return LogProbabilityVector(
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(count), -std::log(static_cast<double>(count))));
}

ClassId LogProbabilityVector::argmax() const {
  Eigen::Index idx = 0;
  values_.maxCoeff(&idx);
  return static_cast<ClassId>(idx);
}

// ---------------------------------------------------------------------------

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::Index imax = 0;
  const double m = x.maxCoeff(&imax);
  double rest = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (j != imax) rest += std::exp(x[j] - m);
  return m + std::log1p(rest);
}

ProbabilityVector soft_max(const Eigen::Ref<const Eigen::VectorXd>& raw_scores) {
  if (raw_scores.size() == 0) throw Error("invalid_argument", "soft_max of an empty vector");
  if (!raw_scores.allFinite()) throw Error("invalid_argument", "soft_max input contains non-finite values");
  const double m = raw_scores.maxCoeff();
  Eigen::VectorXd e = (raw_scores.array() - m).exp().matrix();
  e /= e.sum();
  return ProbabilityVector::unchecked(std::move(e));
}

LogProbabilityVector to_log(const ProbabilityVector& p, double epsilon_prob) {
  Eigen::VectorXd l = p.values().array().max(epsilon_prob).log().matrix();
  l.array() -= log_sum_exp(l);
  return LogProbabilityVector::unchecked(std::move(l));
}

ProbabilityVector from_log(const LogProbabilityVector& l) {
  return ProbabilityVector::unchecked(l.values().array().exp().matrix());
}

void renormalize_if_drifted(Eigen::Ref<Eigen::VectorXd> values, double tolerance) {
  const double s = values.sum();
  if (std::abs(s - 1.0) > tolerance && s > 0.0) values /= s;
}

// ---------------------------------------------------------------------------

FusionConfig FusionConfig::defaults(const ClassRegistry& registry) {
  FusionConfig cfg;
  cfg.alpha.resize(registry.size());
  for (std::size_t i = 0; i < registry.size(); ++i)
    cfg.alpha[i] = registry.is_dynamic(static_cast<ClassId>(i)) ? kDynamicAlpha : kStaticAlpha;
  return cfg;
}

void FusionConfig::validate(std::size_t class_count) const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error("invalid_config", "fusion." + field + ": " + msg);
  };
  if (!(w_img >= 0.0 && w_img <= 1.0)) fail("w_img", "must lie in [0,1]");
  if (alpha.size() != class_count)
    fail("alpha", "expected " + std::to_string(class_count) + " entries, got " + std::to_string(alpha.size()));
  for (std::size_t i = 0; i < alpha.size(); ++i)
    if (!(alpha[i] >= 0.0 && alpha[i] <= 1.0)) fail("alpha[" + std::to_string(i) + "]", "must lie in [0,1]");
  if (!(quantile_q > 0.0 && quantile_q <= 1.0)) fail("quantile_q", "must lie in (0,1]");
  if (!(foreground_margin >= 0.0)) fail("foreground_margin", "must be non-negative");
  if (!(epsilon_prob > 0.0 && epsilon_prob < 1.0)) fail("epsilon_prob", "must lie in (0,1)");
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) fail("voxel_size", "must be positive");
  if (!(trajectory_slack >= 0.0)) fail("trajectory_slack", "must be non-negative");
}

std::string to_string(HorizonMode mode) { return mode == HorizonMode::Drop ? "drop" : "fold"; }
std::string to_string(ScanMerge merge) { return merge == ScanMerge::Bayes ? "bayes" : "mean"; }

HorizonMode horizon_mode_from_string(std::string_view s) {
  if (s == "drop") return HorizonMode::Drop;
  if (s == "fold") return HorizonMode::Fold;
  throw Error("invalid_config", "fusion.horizon_mode: expected 'drop' or 'fold'");
}

ScanMerge scan_merge_from_string(std::string_view s) {
  if (s == "bayes") return ScanMerge::Bayes;
  if (s == "mean") return ScanMerge::Mean;
  throw Error("invalid_config", "fusion.scan_merge: expected 'bayes' or 'mean'");
}

}  // namespace semfuse
