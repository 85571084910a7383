#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "brnlab/data_model.hpp"

namespace brnlab {

/// A ground-truth interval tagged with its video.
struct GroundTruth {
  std::string video_id;
  Interval interval;
};

struct ApResult {
  double ap = 0.0;
  bool no_ground_truth = false;  // AP reported as 0
};

/// Matches detections to ground truth of one class. A detection is a true
/// positive when the best-IoU still unmatched ground truth of the same video
/// reaches the threshold. Detections are ranked by descending score (stable).
std::vector<bool> match_detections(const std::vector<Detection>& detections,
                                   const std::vector<GroundTruth>& ground_truths, double tiou_threshold);

/// Area under the all-points interpolated precision/recall curve.
ApResult average_precision(const std::vector<Detection>& detections,
                           const std::vector<GroundTruth>& ground_truths, double tiou_threshold);

enum class EvalPreset { anet, thumos };
EvalPreset parse_eval_preset(const std::string& name);
std::string to_string(EvalPreset preset);

/// {0.5, 0.55, ..., 0.95} or {0.3, 0.4, ..., 0.7}.
std::vector<double> tiou_grid(EvalPreset preset);

struct MapResult {
  std::vector<double> thresholds;
  std::vector<double> map;  // percent, per threshold
  double average = 0.0;     // percent
  std::vector<int> evaluated_classes;
};

/// Keeps a ground-truth instance: (video annotation, instance index).
using InstanceFilter = std::function<bool(const VideoAnnotation&, std::size_t)>;

/// Mean over classes having at least one ground truth of AP at each threshold.
/// With a filter, only the selected instances are ground truth and a detection
/// is dropped when its best-overlapping same-class instance is not selected.
MapResult map_suite(const DetectionSet& detections, const AnnotationSet& annotations,
                    const std::vector<double>& thresholds, const InstanceFilter& filter = {});

enum class CoverageGroup { XS, S, M, L, XL };
inline constexpr std::array<CoverageGroup, 5> kCoverageGroups = {CoverageGroup::XS, CoverageGroup::S,
                                                                 CoverageGroup::M, CoverageGroup::L,
                                                                 CoverageGroup::XL};
std::string to_string(CoverageGroup group);

/// Bucket of the instance length (coverage): XS <= 0.2 < S <= 0.4 < M <= 0.6 < L <= 0.8 < XL.
CoverageGroup coverage_group(const ActionInstance& gt);

/// Fraction of group instances left unmatched, averaged over {0.5:0.05:0.95}.
/// Each video contributes its top-n detections (n = its instance count),
/// matched greedily per class. Empty group gives nullopt.
std::optional<double> false_negative_rate(const DetectionSet& detections, const AnnotationSet& annotations,
                                          CoverageGroup group);

enum class DistanceBucket { near, mid, far };  // <= 0.25, (0.25, 0.5], > 0.5
inline constexpr std::array<DistanceBucket, 3> kDistanceBuckets = {DistanceBucket::near, DistanceBucket::mid,
                                                                   DistanceBucket::far};
std::string to_string(DistanceBucket bucket);

/// Smallest boundary gap to another instance of the video; nullopt without neighbors.
std::optional<double> distance_ratio(const VideoAnnotation& annotation, std::size_t index);
DistanceBucket distance_bucket(double ratio);

/// Same-class instances adjacent in start order with gap <= 0.25.
struct NeighborPair {
  std::string video_id;
  std::size_t first = 0;
  std::size_t second = 0;
  Interval union_interval;
};
std::vector<NeighborPair> neighbor_pairs(const AnnotationSet& annotations);

/// Fraction of neighbor pairs whose top-scoring same-class detection among those
/// overlapping the pair (IoU >= 0.5 with the union or a member) covers the union
/// (IoU >= 0.5) while missing both members (IoU < 0.5). nullopt without pairs.
std::optional<double> merge_rate(const DetectionSet& detections, const AnnotationSet& annotations);

struct GroupStats {
  std::optional<double> map;  // average mAP in percent
  std::optional<double> fnr;
  std::size_t count = 0;
};

struct EvalReport {
  EvalPreset preset = EvalPreset::anet;
  MapResult overall;
  std::map<std::string, GroupStats> coverage;  // keyed XS..XL
  std::map<std::string, GroupStats> distance;  // keyed by bucket name
  std::optional<double> merge_rate;
  std::size_t neighbor_pairs = 0;
};

EvalReport evaluate(const DetectionSet& detections, const AnnotationSet& annotations, EvalPreset preset);

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
/// Aligned-column table.
std::string to_text(const EvalReport& report);

}  // namespace brnlab
