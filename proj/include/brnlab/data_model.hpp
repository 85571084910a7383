#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace brnlab {

/// Raised when a binary or JSON file does not follow its declared layout.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when well-formed input violates a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on tensor/sequence shape mismatches.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Closed time interval in normalized video coordinates.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  bool valid() const { return 0.0 <= start && start < end && end <= 1.0; }

  /// Builds a validated interval; throws ValidationError otherwise.
  static Interval make(double start, double end);

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Temporal intersection-over-union; 0 for disjoint intervals.
double temporal_iou(const Interval& a, const Interval& b);

struct ActionInstance {
  Interval interval;
  int label = 0;  // 1..K; 0 is background and never annotated

  friend bool operator==(const ActionInstance&, const ActionInstance&) = default;
};

struct VideoAnnotation {
  std::string video_id;
  double duration_seconds = 1.0;
  std::vector<ActionInstance> instances;

  friend bool operator==(const VideoAnnotation&, const VideoAnnotation&) = default;
};

struct AnnotationSet {
  std::vector<std::string> classes;  // index i holds the name of label i+1
  std::vector<VideoAnnotation> videos;

  int num_classes() const { return static_cast<int>(classes.size()); }
  const VideoAnnotation* find(const std::string& video_id) const;

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

/// Per-video temporal features, time-major `length x dim`.
struct FeatureSequence {
  std::string video_id;
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  float at(std::size_t t, std::size_t c) const { return values[t * dim + c]; }
  float& at(std::size_t t, std::size_t c) { return values[t * dim + c]; }

  /// Throws ValidationError on size mismatch, non-finite values or length < 2.
  void validate() const;

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

struct Detection {
  std::string video_id;
  Interval interval;
  int label = 0;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Detections keyed by video id, each list sorted by descending score.
using DetectionSet = std::map<std::string, std::vector<Detection>>;

/// Checks label range and interval validity for every instance.
void validate_annotations(const AnnotationSet& set);

// Feature files: "BRNF", u32 version, u32 length, u32 dim, then float32 payload (all little endian).
void write_features(const FeatureSequence& seq, const std::filesystem::path& path);
FeatureSequence read_features(const std::filesystem::path& path);
FeatureSequence read_features(const std::filesystem::path& path, const std::string& video_id);

AnnotationSet read_annotations(const std::filesystem::path& path);
void write_annotations(const AnnotationSet& set, const std::filesystem::path& path);
std::string annotations_to_json(const AnnotationSet& set);
AnnotationSet annotations_from_json(const std::string& text);

DetectionSet read_detections(const std::filesystem::path& path);
void write_detections(const DetectionSet& detections, const std::filesystem::path& path);
std::string detections_to_json(const DetectionSet& detections);

/// Ground truth converted to score-1 detections.
DetectionSet detections_from_annotations(const AnnotationSet& set);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text(const std::filesystem::path& path);

}  // namespace brnlab
