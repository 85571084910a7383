#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "brnlab/data_model.hpp"
#include "brnlab/model.hpp"
#include "brnlab/tensor.hpp"

namespace brnlab {

struct InferenceConfig {
  double nms_iou_threshold = 0.65;
  std::size_t pre_nms_topk = 2000;
  std::size_t final_topk = 100;
  double min_score = 1e-4;
  bool per_class_nms = false;

  static InferenceConfig anet() { return {}; }
  static InferenceConfig thumos() {
    InferenceConfig c;
    c.nms_iou_threshold = 0.50;
    c.final_topk = 200;
    return c;
  }
  /// "anet" or "thumos"
  static InferenceConfig preset(const std::string& name);

  void validate() const;
};

nlohmann::json to_json(const InferenceConfig& config);
/// Missing keys keep the values of `base`.
InferenceConfig inference_config_from_json(const nlohmann::json& j, InferenceConfig base = {});

/// Candidate detections from raw head outputs (S x T x (K+1) logits, S x T x 2
/// pre-sigmoid distances), best first. The order does not depend on the scan
/// order of positions: ties are broken on (start, end, label).
template <typename Real>
std::vector<Detection> decode_detections(const Tensor<Real>& class_logits, const Tensor<Real>& reg_raw,
                                         const std::string& video_id, const InferenceConfig& config);

/// Strict total order used for ranking detections of one video.
bool detection_before(const Detection& a, const Detection& b);

/// Greedy suppression; removes detections with IoU strictly above the threshold
/// against an already kept one. Output sorted by descending score.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// NMS (class-agnostic unless configured otherwise) followed by top-k truncation.
std::vector<Detection> postprocess(std::vector<Detection> candidates, const InferenceConfig& config);

/// Full per-video pipeline: resize to the model length, forward, decode, NMS.
std::vector<Detection> detect(const Model<float>& model, const FeatureSequence& features,
                              const InferenceConfig& config);

/// Runs `detect` over every sequence, using up to `threads` workers.
DetectionSet detect_all(const Model<float>& model, const std::vector<FeatureSequence>& features,
                        const InferenceConfig& config, std::size_t threads = 1);

}  // namespace brnlab
