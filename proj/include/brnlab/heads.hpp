#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "brnlab/autograd.hpp"
#include "brnlab/data_model.hpp"

namespace brnlab {

struct HeadConfig {
  std::size_t num_classes = 3;  // K foreground classes; logits carry K + 1 channels
  std::size_t num_layers = 3;
  std::size_t kernel_size = 3;
  bool scale_conv = true;  // false: every scale row is processed independently
  double background_prior = 0.99;

  void validate() const;
};

struct HeadOutputs {
  Var class_logits;  // S x T x (K + 1), channel 0 = background
  Var reg_raw;       // S x T x 2, pre-sigmoid distances to start / end
};

/// Classification and regression heads: `num_layers` x (scale conv -> time
/// conv -> ReLU) followed by a kernel-1 projection; the heads share nothing.
template <typename Real>
class PredictionHeads {
 public:
  PredictionHeads(std::size_t dim, const HeadConfig& config, ParameterSet<Real>& params);

  void initialize(std::mt19937_64& rng);
  HeadOutputs forward(Graph<Real>& g, Var features) const;

  const HeadConfig& config() const { return config_; }

 private:
  struct Tower {
    std::vector<Parameter<Real>*> scale_w, scale_b, time_w, time_b;
    Parameter<Real>* pred_w = nullptr;
    Parameter<Real>* pred_b = nullptr;
  };

  Tower make_tower(const std::string& prefix, std::size_t outputs, ParameterSet<Real>& params);
  void init_tower(Tower& tower, std::mt19937_64& rng, double pred_bound);
  Var run_tower(Graph<Real>& g, const Tower& tower, Var x) const;

  std::size_t dim_;
  HeadConfig config_;
  Tower cls_;
  Tower reg_;
};

// ------------------------------------------------------------------ decoding

/// Normalized anchor of time step t on a grid of T steps.
inline double anchor_time(std::size_t t, std::size_t steps) {
  return (static_cast<double>(t) + 0.5) / static_cast<double>(steps);
}

/// Interval [clip(anchor - d_start), clip(anchor + d_end)] and whether it is non-degenerate.
struct DecodedInterval {
  Interval interval;
  bool valid = false;
};

DecodedInterval decode_interval(double anchor, double d_start, double d_end);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// --------------------------------------------------------------- assignment

/// Per-level instance-length ranges: level i accepts lengths in (bounds[i-1], bounds[i]].
struct LevelRanges {
  std::vector<double> upper;  // strictly increasing, last == 1

  /// (0, 2^-(S-1)], ..., (1/4, 1/2], (1/2, 1]
  static LevelRanges geometric(std::size_t num_levels);
  std::size_t size() const { return upper.size(); }
  double lower(std::size_t level) const { return level == 0 ? 0.0 : upper[level - 1]; }
  bool contains(std::size_t level, double length) const {
    return length > lower(level) && length <= upper[level];
  }
  /// Level whose range contains `length`; lengths outside (0, 1] have none.
  std::optional<std::size_t> level_of(double length) const;
};

enum class AssignmentMode {
  dynamic_iou,  // highest IoU against the current prediction, shorter GT on ties
  shortest,     // shortest containing instance
};

struct TargetMap {
  std::size_t scales = 0;
  std::size_t steps = 0;
  std::vector<int> class_target;                 // 0 = background
  std::vector<std::optional<Interval>> matched;  // present iff positive

  bool positive(std::size_t s, std::size_t t) const { return class_target[s * steps + t] != 0; }
  std::size_t num_positive() const;
};

/// Position (s, t) is positive iff an instance contains its anchor and that
/// instance's length lies in level s's range. `reg_raw` holds pre-sigmoid
/// distances (S x T x 2) and is only read in dynamic mode.
template <typename Real>
TargetMap assign_targets(const VideoAnnotation& annotation, const Tensor<Real>& reg_raw,
                         const LevelRanges& ranges, AssignmentMode mode = AssignmentMode::dynamic_iou);

// -------------------------------------------------------------------- losses

/// -(1 - p)^alpha * log(max(p, 1e-12)) for one position.
double focal_term(double p, double alpha);

/// Mean focal loss over all S x T positions, background included as a class.
template <typename Real>
Var focal_loss(Graph<Real>& g, Var class_logits, const TargetMap& targets, double alpha);

/// Mean of 1 - tIoU(matched, decoded prediction) over positive positions; 0 without positives.
template <typename Real>
Var iou_loss(Graph<Real>& g, Var reg_raw, const TargetMap& targets);

/// l_cls + lambda * l_reg
template <typename Real>
Var total_loss(Graph<Real>& g, Var l_cls, Var l_reg, double lambda);

inline double total_loss(double l_cls, double l_reg, double lambda) { return l_cls + lambda * l_reg; }

}  // namespace brnlab
