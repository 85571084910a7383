#include "brnlab/data_model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace brnlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'B', 'R', 'N', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::size_t kFeatureHeaderBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void validate_instance(const ActionInstance& inst, int num_classes, const std::string& video_id,
                       std::size_t index) {
  const auto where = "video '" + video_id + "' instance " + std::to_string(index) + ": ";
  if (!(inst.interval.start < inst.interval.end)) {
    throw ValidationError(where + "start must be < end");
  }
  if (!inst.interval.valid()) throw ValidationError(where + "interval outside [0,1]");
  if (inst.label < 1) throw ValidationError(where + "label must be >= 1 (0 is background)");
  if (inst.label > num_classes) {
    throw ValidationError(where + "label " + std::to_string(inst.label) + " exceeds K=" +
                          std::to_string(num_classes));
  }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& context) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError(context + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(context + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

Interval Interval::make(double start, double end) {
  Interval iv{start, end};
  if (!iv.valid()) {
    std::ostringstream msg;
    msg << "invalid interval [" << start << ", " << end << "]";
    throw ValidationError(msg.str());
  }
  return iv;
}

double temporal_iou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

const VideoAnnotation* AnnotationSet::find(const std::string& video_id) const {
  for (const auto& v : videos) {
    if (v.video_id == video_id) return &v;
  }
  return nullptr;
}

void FeatureSequence::validate() const {
  if (length < 2) throw ValidationError("feature sequence '" + video_id + "' shorter than 2");
  if (dim < 1) throw ValidationError("feature sequence '" + video_id + "' has zero dim");
  if (values.size() != length * dim) {
    throw ValidationError("feature sequence '" + video_id + "' payload size mismatch");
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw ValidationError("feature sequence '" + video_id + "' not finite");
  }
}

void validate_annotations(const AnnotationSet& set) {
  for (const auto& video : set.videos) {
    if (video.video_id.empty()) throw ValidationError("empty video_id");
    if (!(video.duration_seconds > 0.0)) {
      throw ValidationError("video '" + video.video_id + "': duration_seconds must be positive");
    }
    for (std::size_t i = 0; i < video.instances.size(); ++i) {
      validate_instance(video.instances[i], set.num_classes(), video.video_id, i);
    }
  }
}

void write_features(const FeatureSequence& seq, const fs::path& path) {
  seq.validate();
  std::string out;
  out.reserve(kFeatureHeaderBytes + seq.values.size() * 4);
  out.append(kFeatureMagic.begin(), kFeatureMagic.end());
  put_u32(out, kFeatureVersion);
  put_u32(out, static_cast<std::uint32_t>(seq.length));
  put_u32(out, static_cast<std::uint32_t>(seq.dim));
  for (float v : seq.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  write_text_atomic(path, out);
}

FeatureSequence read_features(const fs::path& path) {
  return read_features(path, path.stem().string());
}

FeatureSequence read_features(const fs::path& path, const std::string& video_id) {
  const std::string bytes = read_bytes(path);
  const auto ctx = path.string() + ": ";
  if (bytes.size() < kFeatureHeaderBytes) throw FormatError(ctx + "truncated header");
  if (!std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), bytes.begin())) {
    throw FormatError(ctx + "bad magic (expected BRNF)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFeatureVersion) {
    throw FormatError(ctx + "unsupported version " + std::to_string(version));
  }
  FeatureSequence seq;
  seq.video_id = video_id;
  seq.length = get_u32(bytes, 8);
  seq.dim = get_u32(bytes, 12);
  if (seq.length < 2) throw FormatError(ctx + "length L must be >= 2");
  if (seq.dim < 1) throw FormatError(ctx + "dimension D must be >= 1");
  const std::size_t expected = seq.length * seq.dim * 4;
  const std::size_t payload = bytes.size() - kFeatureHeaderBytes;
  if (payload < expected) {
    throw FormatError(ctx + "truncated payload: expected " + std::to_string(expected) +
                      " bytes for L=" + std::to_string(seq.length) + ", D=" +
                      std::to_string(seq.dim) + ", found " + std::to_string(payload));
  }
  if (payload > expected) {
    throw FormatError(ctx + "payload longer than L*D*4 (" + std::to_string(payload) + " > " +
                      std::to_string(expected) + ")");
  }
  seq.values.resize(seq.length * seq.dim);
  for (std::size_t i = 0; i < seq.values.size(); ++i) {
    seq.values[i] = std::bit_cast<float>(get_u32(bytes, kFeatureHeaderBytes + 4 * i));
  }
  return seq;
}

std::string annotations_to_json(const AnnotationSet& set) {
  json doc;
  doc["classes"] = set.classes;
  json videos = json::array();
  for (const auto& v : set.videos) {
    json instances = json::array();
    for (const auto& inst : v.instances) {
      instances.push_back(
          {{"start", inst.interval.start}, {"end", inst.interval.end}, {"label", inst.label}});
    }
    videos.push_back({{"video_id", v.video_id},
                      {"duration_seconds", v.duration_seconds},
                      {"instances", std::move(instances)}});
  }
  doc["videos"] = std::move(videos);
  return doc.dump(2) + "\n";
}

AnnotationSet annotations_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("annotation JSON: ") + e.what());
  }
  AnnotationSet set;
  set.classes = require<std::vector<std::string>>(doc, "classes", "annotations");
  if (!doc.contains("videos") || !doc["videos"].is_array()) {
    throw FormatError("annotations: missing array 'videos'");
  }
  for (const auto& jv : doc["videos"]) {
    VideoAnnotation v;
    v.video_id = require<std::string>(jv, "video_id", "video");
    v.duration_seconds = require<double>(jv, "duration_seconds", "video '" + v.video_id + "'");
    if (!jv.contains("instances") || !jv["instances"].is_array()) {
      throw FormatError("video '" + v.video_id + "': missing array 'instances'");
    }
    for (const auto& ji : jv["instances"]) {
      const auto ctx = "video '" + v.video_id + "' instance";
      ActionInstance inst;
      inst.interval.start = require<double>(ji, "start", ctx);
      inst.interval.end = require<double>(ji, "end", ctx);
      inst.label = require<int>(ji, "label", ctx);
      v.instances.push_back(inst);
    }
    set.videos.push_back(std::move(v));
  }
  validate_annotations(set);
  return set;
}

AnnotationSet read_annotations(const fs::path& path) {
  return annotations_from_json(read_text(path));
}

void write_annotations(const AnnotationSet& set, const fs::path& path) {
  validate_annotations(set);
  write_text_atomic(path, annotations_to_json(set));
}

std::string detections_to_json(const DetectionSet& detections) {
  json results = json::object();
  for (const auto& [video_id, dets] : detections) {
    std::vector<const Detection*> order;
    for (const auto& d : dets) order.push_back(&d);
    std::stable_sort(order.begin(), order.end(),
                     [](const Detection* a, const Detection* b) { return a->score > b->score; });
    json arr = json::array();
    for (const auto* d : order) {
      arr.push_back({{"start", d->interval.start},
                     {"end", d->interval.end},
                     {"label", d->label},
                     {"score", d->score}});
    }
    results[video_id] = std::move(arr);
  }
  json doc;
  doc["results"] = std::move(results);
  return doc.dump(2) + "\n";
}

void write_detections(const DetectionSet& detections, const fs::path& path) {
  write_text_atomic(path, detections_to_json(detections));
}

DetectionSet read_detections(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!doc.contains("results") || !doc["results"].is_object()) {
    throw FormatError(path.string() + ": missing object 'results'");
  }
  DetectionSet out;
  for (const auto& [video_id, arr] : doc["results"].items()) {
    auto& dets = out[video_id];
    for (const auto& jd : arr) {
      const auto ctx = "detection of '" + video_id + "'";
      Detection d;
      d.video_id = video_id;
      d.interval.start = require<double>(jd, "start", ctx);
      d.interval.end = require<double>(jd, "end", ctx);
      d.label = require<int>(jd, "label", ctx);
      d.score = require<double>(jd, "score", ctx);
      if (!d.interval.valid()) throw ValidationError(ctx + ": invalid interval");
      if (!std::isfinite(d.score)) throw ValidationError(ctx + ": non-finite score");
      dets.push_back(d);
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
  }
  return out;
}

DetectionSet detections_from_annotations(const AnnotationSet& set) {
  DetectionSet out;
  for (const auto& v : set.videos) {
    auto& dets = out[v.video_id];
    for (const auto& inst : v.instances) dets.push_back({v.video_id, inst.interval, inst.label, 1.0});
  }
  return out;
}

void write_text_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) { return read_bytes(path); }

}  // namespace brnlab
