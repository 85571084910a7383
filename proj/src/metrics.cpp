#include "brnlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace brnlab {

using json = nlohmann::json;

namespace {

constexpr double kBoundaryEps = 1e-9;

std::vector<std::size_t> rank_by_score(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

// Greedy matching; returns, per detection (input order), the matched ground-truth index or -1.
std::vector<long> greedy_match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                               double threshold) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < gts.size(); ++i) by_video[gts[i].video_id].push_back(i);
  std::vector<bool> used(gts.size(), false);
  std::vector<long> match(dets.size(), -1);
  for (std::size_t di : rank_by_score(dets)) {
    const auto it = by_video.find(dets[di].video_id);
    if (it == by_video.end()) continue;
    double best_iou = -1.0;
    long best = -1;
    for (std::size_t gi : it->second) {
      if (used[gi]) continue;
      const double iou = temporal_iou(dets[di].interval, gts[gi].interval);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<long>(gi);
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      used[static_cast<std::size_t>(best)] = true;
      match[di] = best;
    }
  }
  return match;
}

std::string fmt(double v, int precision = 2) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

void check_detections(const DetectionSet& detections, const AnnotationSet& annotations) {
  const int K = annotations.num_classes();
  for (const auto& [vid, dets] : detections) {
    if (annotations.find(vid) == nullptr) {
      throw ValidationError("detections reference unknown video '" + vid + "'");
    }
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].label < 1 || dets[i].label > K) {
        throw ValidationError("video " + vid + ", detection " + std::to_string(i) + ": label " +
                              std::to_string(dets[i].label) + " outside 1.." + std::to_string(K));
      }
    }
  }
}

}  // namespace

std::vector<bool> match_detections(const std::vector<Detection>& detections,
                                   const std::vector<GroundTruth>& ground_truths, double tiou_threshold) {
  const auto match = greedy_match(detections, ground_truths, tiou_threshold);
  std::vector<bool> tp(match.size());
  for (std::size_t i = 0; i < match.size(); ++i) tp[i] = match[i] >= 0;
  return tp;
}

ApResult average_precision(const std::vector<Detection>& detections,
                           const std::vector<GroundTruth>& ground_truths, double tiou_threshold) {
  if (ground_truths.empty()) return {0.0, true};
  const auto tp = match_detections(detections, ground_truths, tiou_threshold);
  const auto order = rank_by_score(detections);
  const std::size_t n = order.size();
  // Precision / recall after each ranked detection, padded like the usual toolkit.
  std::vector<double> prec(n + 2, 0.0), rec(n + 2, 0.0);
  double hits = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (tp[order[k]]) hits += 1.0;
    prec[k + 1] = hits / static_cast<double>(k + 1);
    rec[k + 1] = hits / static_cast<double>(ground_truths.size());
  }
  rec[n + 1] = 1.0;
  for (std::size_t i = n + 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 0; i + 1 < n + 2; ++i) {
    if (rec[i + 1] != rec[i]) ap += (rec[i + 1] - rec[i]) * prec[i + 1];
  }
  return {ap, false};
}

EvalPreset parse_eval_preset(const std::string& name) {
  if (name == "anet") return EvalPreset::anet;
  if (name == "thumos") return EvalPreset::thumos;
  throw std::invalid_argument("unknown evaluation preset '" + name + "' (expected anet or thumos)");
}

std::string to_string(EvalPreset preset) { return preset == EvalPreset::anet ? "anet" : "thumos"; }

std::vector<double> tiou_grid(EvalPreset preset) {
  std::vector<double> out;
  if (preset == EvalPreset::anet) {
    for (int i = 0; i < 10; ++i) out.push_back((50.0 + 5.0 * i) / 100.0);
  } else {
    for (int i = 0; i < 5; ++i) out.push_back((3.0 + i) / 10.0);
  }
  return out;
}

MapResult map_suite(const DetectionSet& detections, const AnnotationSet& annotations,
                    const std::vector<double>& thresholds, const InstanceFilter& filter) {
  check_detections(detections, annotations);
  const int K = annotations.num_classes();
  MapResult result;
  result.thresholds = thresholds;
  result.map.assign(thresholds.size(), 0.0);

  std::vector<std::vector<GroundTruth>> gts(static_cast<std::size_t>(K) + 1);
  for (const auto& v : annotations.videos) {
    for (std::size_t i = 0; i < v.instances.size(); ++i) {
      if (filter && !filter(v, i)) continue;
      gts[static_cast<std::size_t>(v.instances[i].label)].push_back({v.video_id, v.instances[i].interval});
    }
  }
  std::vector<std::vector<Detection>> dets(static_cast<std::size_t>(K) + 1);
  for (const auto& [vid, list] : detections) {
    const VideoAnnotation* ann = annotations.find(vid);
    for (const auto& d : list) {
      if (filter) {
        // Attribute the detection to its best-overlapping same-class instance.
        double best_iou = 0.0;
        long best = -1;
        for (std::size_t i = 0; i < ann->instances.size(); ++i) {
          if (ann->instances[i].label != d.label) continue;
          const double iou = temporal_iou(d.interval, ann->instances[i].interval);
          if (iou > best_iou) {
            best_iou = iou;
            best = static_cast<long>(i);
          }
        }
        if (best >= 0 && !filter(*ann, static_cast<std::size_t>(best))) continue;
      }
      dets[static_cast<std::size_t>(d.label)].push_back(d);
    }
  }
  for (int c = 1; c <= K; ++c) {
    if (!gts[static_cast<std::size_t>(c)].empty()) result.evaluated_classes.push_back(c);
  }
  if (result.evaluated_classes.empty()) return result;
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    double sum = 0.0;
    for (int c : result.evaluated_classes) {
      sum += average_precision(dets[static_cast<std::size_t>(c)], gts[static_cast<std::size_t>(c)], thresholds[ti]).ap;
    }
    result.map[ti] = 100.0 * sum / static_cast<double>(result.evaluated_classes.size());
  }
  if (!thresholds.empty()) {
    result.average = std::accumulate(result.map.begin(), result.map.end(), 0.0) /
                     static_cast<double>(thresholds.size());
  }
  return result;
}

std::string to_string(CoverageGroup group) {
  switch (group) {
    case CoverageGroup::XS:
      return "XS";
    case CoverageGroup::S:
      return "S";
    case CoverageGroup::M:
      return "M";
    case CoverageGroup::L:
      return "L";
    case CoverageGroup::XL:
      return "XL";
  }
  return "XL";
}

CoverageGroup coverage_group(const ActionInstance& gt) {
  const double c = gt.interval.length();
  if (c <= 0.2 + kBoundaryEps) return CoverageGroup::XS;
  if (c <= 0.4 + kBoundaryEps) return CoverageGroup::S;
  if (c <= 0.6 + kBoundaryEps) return CoverageGroup::M;
  if (c <= 0.8 + kBoundaryEps) return CoverageGroup::L;
  return CoverageGroup::XL;
}

std::optional<double> false_negative_rate(const DetectionSet& detections, const AnnotationSet& annotations,
                                          CoverageGroup group) {
  check_detections(detections, annotations);
  std::size_t members = 0;
  for (const auto& v : annotations.videos) {
    for (const auto& inst : v.instances) members += coverage_group(inst) == group ? 1 : 0;
  }
  if (members == 0) return std::nullopt;
  const auto grid = tiou_grid(EvalPreset::anet);
  double total = 0.0;
  for (double thr : grid) {
    std::size_t missed = 0;
    for (const auto& v : annotations.videos) {
      std::vector<Detection> top;
      if (const auto it = detections.find(v.video_id); it != detections.end()) {
        top = it->second;
        std::stable_sort(top.begin(), top.end(),
                         [](const Detection& a, const Detection& b) { return a.score > b.score; });
        if (top.size() > v.instances.size()) top.resize(v.instances.size());
      }
      for (int c = 1; c <= annotations.num_classes(); ++c) {
        std::vector<GroundTruth> gts;
        std::vector<std::size_t> index;
        for (std::size_t i = 0; i < v.instances.size(); ++i) {
          if (v.instances[i].label != c) continue;
          gts.push_back({v.video_id, v.instances[i].interval});
          index.push_back(i);
        }
        if (gts.empty()) continue;
        std::vector<Detection> dc;
        for (const auto& d : top) {
          if (d.label == c) dc.push_back(d);
        }
        std::vector<bool> hit(gts.size(), false);
        for (long m : greedy_match(dc, gts, thr)) {
          if (m >= 0) hit[static_cast<std::size_t>(m)] = true;
        }
        for (std::size_t k = 0; k < gts.size(); ++k) {
          if (!hit[k] && coverage_group(v.instances[index[k]]) == group) ++missed;
        }
      }
    }
    total += static_cast<double>(missed) / static_cast<double>(members);
  }
  return total / static_cast<double>(grid.size());
}

std::string to_string(DistanceBucket bucket) {
  switch (bucket) {
    case DistanceBucket::near:
      return "<=0.25";
    case DistanceBucket::mid:
      return "0.25-0.50";
    case DistanceBucket::far:
      return ">0.50";
  }
  return ">0.50";
}

std::optional<double> distance_ratio(const VideoAnnotation& annotation, std::size_t index) {
  const auto& a = annotation.instances.at(index).interval;
  std::optional<double> best;
  for (std::size_t j = 0; j < annotation.instances.size(); ++j) {
    if (j == index) continue;
    const auto& b = annotation.instances[j].interval;
    const double gap = std::max({0.0, b.start - a.end, a.start - b.end});
    if (!best || gap < *best) best = gap;
  }
  return best;
}

DistanceBucket distance_bucket(double ratio) {
  if (ratio <= 0.25 + kBoundaryEps) return DistanceBucket::near;
  if (ratio <= 0.5 + kBoundaryEps) return DistanceBucket::mid;
  return DistanceBucket::far;
}

std::vector<NeighborPair> neighbor_pairs(const AnnotationSet& annotations) {
  std::vector<NeighborPair> out;
  for (const auto& v : annotations.videos) {
    std::vector<std::size_t> order(v.instances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& ia = v.instances[a].interval;
      const auto& ib = v.instances[b].interval;
      return ia.start != ib.start ? ia.start < ib.start : ia.end < ib.end;
    });
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
      const auto& a = v.instances[order[k]];
      const auto& b = v.instances[order[k + 1]];
      if (a.label != b.label) continue;
      const double gap = std::max(0.0, b.interval.start - a.interval.end);
      if (gap > 0.25 + kBoundaryEps) continue;
      out.push_back({v.video_id, order[k], order[k + 1],
                     {std::min(a.interval.start, b.interval.start), std::max(a.interval.end, b.interval.end)}});
    }
  }
  return out;
}

std::optional<double> merge_rate(const DetectionSet& detections, const AnnotationSet& annotations) {
  check_detections(detections, annotations);
  const auto pairs = neighbor_pairs(annotations);
  if (pairs.empty()) return std::nullopt;
  std::size_t merged = 0;
  for (const auto& p : pairs) {
    const auto it = detections.find(p.video_id);
    if (it == detections.end()) continue;
    const VideoAnnotation* ann = annotations.find(p.video_id);
    const auto& a = ann->instances[p.first];
    const auto& b = ann->instances[p.second].interval;
    const Detection* top = nullptr;
    for (const auto& d : it->second) {
      if (d.label != a.label) continue;
      const bool overlaps = temporal_iou(d.interval, p.union_interval) >= 0.5 ||
                            temporal_iou(d.interval, a.interval) >= 0.5 ||
                            temporal_iou(d.interval, b) >= 0.5;
      if (overlaps && (top == nullptr || d.score > top->score)) top = &d;
    }
    if (top != nullptr && temporal_iou(top->interval, p.union_interval) >= 0.5 &&
        temporal_iou(top->interval, a.interval) < 0.5 && temporal_iou(top->interval, b) < 0.5) {
      ++merged;
    }
  }
  return static_cast<double>(merged) / static_cast<double>(pairs.size());
}

EvalReport evaluate(const DetectionSet& detections, const AnnotationSet& annotations, EvalPreset preset) {
  EvalReport r;
  r.preset = preset;
  const auto grid = tiou_grid(preset);
  r.overall = map_suite(detections, annotations, grid);
  for (auto group : kCoverageGroups) {
    GroupStats stats;
    for (const auto& v : annotations.videos) {
      for (const auto& inst : v.instances) stats.count += coverage_group(inst) == group ? 1 : 0;
    }
    if (stats.count > 0) {
      stats.map = map_suite(detections, annotations, grid, [group](const VideoAnnotation& v, std::size_t i) {
                    return coverage_group(v.instances[i]) == group;
                  }).average;
      stats.fnr = false_negative_rate(detections, annotations, group);
    }
    r.coverage[to_string(group)] = stats;
  }
  for (auto bucket : kDistanceBuckets) {
    auto in_bucket = [bucket](const VideoAnnotation& v, std::size_t i) {
      const auto d = distance_ratio(v, i);
      return d && distance_bucket(*d) == bucket;
    };
    GroupStats stats;
    for (const auto& v : annotations.videos) {
      for (std::size_t i = 0; i < v.instances.size(); ++i) stats.count += in_bucket(v, i) ? 1 : 0;
    }
    if (stats.count > 0) stats.map = map_suite(detections, annotations, grid, in_bucket).average;
    r.distance[to_string(bucket)] = stats;
  }
  r.merge_rate = merge_rate(detections, annotations);
  r.neighbor_pairs = neighbor_pairs(annotations).size();
  return r;
}

json to_json(const EvalReport& r) {
  json coverage = json::object();
  for (const auto& [k, s] : r.coverage) {
    coverage[k] = {{"count", s.count}, {"map", opt_json(s.map)}, {"fnr", opt_json(s.fnr)}};
  }
  json distance = json::object();
  for (const auto& [k, s] : r.distance) distance[k] = {{"count", s.count}, {"map", opt_json(s.map)}};
  return {{"preset", to_string(r.preset)},
          {"thresholds", r.overall.thresholds},
          {"map", r.overall.map},
          {"average_map", r.overall.average},
          {"classes", r.overall.evaluated_classes},
          {"coverage", coverage},
          {"distance", distance},
          {"merge_rate", opt_json(r.merge_rate)},
          {"neighbor_pairs", r.neighbor_pairs}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.preset = parse_eval_preset(j.at("preset").get<std::string>());
  r.overall.thresholds = j.at("thresholds").get<std::vector<double>>();
  r.overall.map = j.at("map").get<std::vector<double>>();
  r.overall.average = j.at("average_map").get<double>();
  if (j.contains("classes")) r.overall.evaluated_classes = j["classes"].get<std::vector<int>>();
  for (const auto& [k, s] : j.at("coverage").items()) {
    r.coverage[k] = {opt_from(s, "map"), opt_from(s, "fnr"), s.at("count").get<std::size_t>()};
  }
  for (const auto& [k, s] : j.at("distance").items()) {
    r.distance[k] = {opt_from(s, "map"), std::nullopt, s.at("count").get<std::size_t>()};
  }
  r.merge_rate = opt_from(j, "merge_rate");
  if (j.contains("neighbor_pairs")) r.neighbor_pairs = j["neighbor_pairs"].get<std::size_t>();
  return r;
}

std::string to_text(const EvalReport& r) {
  std::ostringstream os;
  const std::size_t w = 8;
  auto cell = [&](const std::optional<double>& v, int prec = 2) { return pad(v ? fmt(*v, prec) : "-", w); };

  os << pad("tIoU", 10);
  for (double t : r.overall.thresholds) os << pad(fmt(t), w);
  os << pad("Avg.", w) << "\n";
  os << pad("mAP", 10);
  for (double m : r.overall.map) os << pad(fmt(m), w);
  os << pad(fmt(r.overall.average), w) << "\n\n";

  os << pad("coverage", 10) << pad("count", w) << pad("mAP", w) << pad("FNR", w) << "\n";
  for (auto g : kCoverageGroups) {
    const auto it = r.coverage.find(to_string(g));
    if (it == r.coverage.end()) continue;
    const auto& s = it->second;
    os << pad(it->first, 10) << pad(std::to_string(s.count), w) << cell(s.map)
       << cell(s.fnr ? std::optional<double>(*s.fnr * 100.0) : std::nullopt) << "\n";
  }
  os << "\n" << pad("distance", 10) << pad("count", w) << pad("mAP", w) << "\n";
  for (auto b : kDistanceBuckets) {
    const auto it = r.distance.find(to_string(b));
    if (it == r.distance.end()) continue;
    os << pad(it->first, 10) << pad(std::to_string(it->second.count), w) << cell(it->second.map) << "\n";
  }
  os << "\nmerge rate " << (r.merge_rate ? fmt(*r.merge_rate, 4) : std::string("-")) << " over "
     << r.neighbor_pairs << " neighboring pairs\n";
  return os.str();
}

}  // namespace brnlab
