#include "brnlab/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "brnlab/parallel.hpp"

namespace brnlab {

InferenceConfig InferenceConfig::preset(const std::string& name) {
  if (name == "anet") return anet();
  if (name == "thumos") return thumos();
  throw std::invalid_argument("unknown inference preset '" + name + "' (expected anet or thumos)");
}

void InferenceConfig::validate() const {
  if (!(nms_iou_threshold >= 0.0 && nms_iou_threshold <= 1.0)) {
    throw std::invalid_argument("nms_iou_threshold must be in [0,1]");
  }
  if (!(min_score >= 0.0 && min_score <= 1.0)) throw std::invalid_argument("min_score must be in [0,1]");
  if (pre_nms_topk < 1 || final_topk < 1) throw std::invalid_argument("top-k limits must be >= 1");
}

nlohmann::json to_json(const InferenceConfig& c) {
  return {{"nms_iou_threshold", c.nms_iou_threshold},
          {"pre_nms_topk", c.pre_nms_topk},
          {"final_topk", c.final_topk},
          {"min_score", c.min_score},
          {"per_class_nms", c.per_class_nms}};
}

InferenceConfig inference_config_from_json(const nlohmann::json& j, InferenceConfig c) {
  if (j.contains("nms_iou_threshold")) c.nms_iou_threshold = j["nms_iou_threshold"].get<double>();
  if (j.contains("pre_nms_topk")) c.pre_nms_topk = j["pre_nms_topk"].get<std::size_t>();
  if (j.contains("final_topk")) c.final_topk = j["final_topk"].get<std::size_t>();
  if (j.contains("min_score")) c.min_score = j["min_score"].get<double>();
  if (j.contains("per_class_nms")) c.per_class_nms = j["per_class_nms"].get<bool>();
  return c;
}

bool detection_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.interval.start != b.interval.start) return a.interval.start < b.interval.start;
  if (a.interval.end != b.interval.end) return a.interval.end < b.interval.end;
  return a.label < b.label;
}

template <typename Real>
std::vector<Detection> decode_detections(const Tensor<Real>& class_logits, const Tensor<Real>& reg_raw,
                                         const std::string& video_id, const InferenceConfig& config) {
  if (class_logits.scales != reg_raw.scales || class_logits.steps != reg_raw.steps ||
      reg_raw.channels != 2 || class_logits.channels < 2) {
    throw ShapeError("decode_detections: logits " + class_logits.shape_string() + " and regression " +
                     reg_raw.shape_string() + " do not match");
  }
  const std::size_t S = class_logits.scales;
  const std::size_t T = class_logits.steps;
  const std::size_t C = class_logits.channels;
  std::vector<Detection> out;
  std::vector<double> prob(C);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      double zmax = class_logits(s, t, 0);
      for (std::size_t c = 1; c < C; ++c) zmax = std::max<double>(zmax, class_logits(s, t, c));
      double sum = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        prob[c] = std::exp(static_cast<double>(class_logits(s, t, c)) - zmax);
        sum += prob[c];
      }
      std::size_t best = 1;
      for (std::size_t c = 2; c < C; ++c) {
        if (prob[c] > prob[best]) best = c;
      }
      const double score = prob[best] / sum;
      if (score < config.min_score) continue;
      const auto dec = decode_interval(anchor_time(t, T), sigmoid(reg_raw(s, t, 0)), sigmoid(reg_raw(s, t, 1)));
      if (!dec.valid) continue;
      out.push_back({video_id, dec.interval, static_cast<int>(best), score});
    }
  }
  std::sort(out.begin(), out.end(), detection_before);
  if (out.size() > config.pre_nms_topk) out.resize(config.pre_nms_topk);
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::sort(dets.begin(), dets.end(), detection_before);
  std::vector<Detection> kept;
  for (auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (temporal_iou(d.interval, k.interval) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

std::vector<Detection> postprocess(std::vector<Detection> candidates, const InferenceConfig& config) {
  std::vector<Detection> kept;
  if (config.per_class_nms) {
    std::vector<int> labels;
    for (const auto& d : candidates) labels.push_back(d.label);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    for (int label : labels) {
      std::vector<Detection> subset;
      for (const auto& d : candidates) {
        if (d.label == label) subset.push_back(d);
      }
      auto part = nms(std::move(subset), config.nms_iou_threshold);
      kept.insert(kept.end(), part.begin(), part.end());
    }
    std::sort(kept.begin(), kept.end(), detection_before);
  } else {
    kept = nms(std::move(candidates), config.nms_iou_threshold);
  }
  if (kept.size() > config.final_topk) kept.resize(config.final_topk);
  return kept;
}

std::vector<Detection> detect(const Model<float>& model, const FeatureSequence& features,
                              const InferenceConfig& config) {
  const auto input = resize_features(features, model.config().input_length);
  Graph<float> g(model.params().count());
  const auto out = model.forward(g, input);
  auto candidates = decode_detections(g.value(out.heads.class_logits), g.value(out.heads.reg_raw),
                                      features.video_id, config);
  return postprocess(std::move(candidates), config);
}

DetectionSet detect_all(const Model<float>& model, const std::vector<FeatureSequence>& features,
                        const InferenceConfig& config, std::size_t threads) {
  config.validate();
  std::vector<std::vector<Detection>> results(features.size());
  parallel_for(features.size(), threads,
               [&](std::size_t i) { results[i] = detect(model, features[i], config); });
  DetectionSet out;
  for (std::size_t i = 0; i < features.size(); ++i) out[features[i].video_id] = std::move(results[i]);
  return out;
}

template std::vector<Detection> decode_detections<float>(const Tensor<float>&, const Tensor<float>&,
                                                         const std::string&, const InferenceConfig&);
template std::vector<Detection> decode_detections<double>(const Tensor<double>&, const Tensor<double>&,
                                                          const std::string&, const InferenceConfig&);

}  // namespace brnlab
