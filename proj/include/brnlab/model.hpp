#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "brnlab/backbone.hpp"
#include "brnlab/heads.hpp"
#include "brnlab/scaletime.hpp"

namespace brnlab {

enum class ModelPreset { baseline, brn };

/// Architecture of the detector. `use_stb == false` with per-row heads is the
/// multi-scale FCOS-style baseline.
struct ModelConfig {
  BackboneConfig backbone;
  StbConfig stb;
  HeadConfig heads;
  bool use_stb = true;
  std::size_t input_length = 256;
  AssignmentMode assignment = AssignmentMode::dynamic_iou;

  /// Full-size architecture: D = 256, S = 5, N = 3.
  static ModelConfig paper(std::size_t input_dim, std::size_t num_classes);
  /// Reduced width used for CPU-scale experiments on the synthetic benchmark.
  static ModelConfig desk(std::size_t input_dim, std::size_t num_classes);

  void apply_preset(ModelPreset preset);
  /// One of: no-scale, no-time, no-selection, no-dilation, k3-rates-1234.
  void apply_ablation(const std::string& name);

  std::size_t stf_length() const { return input_length / 2; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

ModelPreset parse_preset(const std::string& name);
std::string to_string(ModelPreset preset);

template <typename Real>
struct ModelOutputs {
  std::vector<Var> levels;  // backbone outputs B_1..B_S
  Var stf;                  // scale-time features before the blocks
  Var features;             // input to the heads
  HeadOutputs heads;
  SelectionTrace selection;
};

template <typename Real>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ModelOutputs<Real> forward(Graph<Real>& g, Var input, bool trace_selection = false) const;
  ModelOutputs<Real> forward(Graph<Real>& g, const FeatureSequence& seq,
                             bool trace_selection = false) const;

  ParameterSet<Real>& params() { return params_; }
  const ParameterSet<Real>& params() const { return params_; }
  const ModelConfig& config() const { return config_; }
  const LevelRanges& level_ranges() const { return ranges_; }

  /// Copies parameter values from a model of identical architecture.
  template <typename Other>
  void copy_parameters_from(const Model<Other>& other);

 private:
  ModelConfig config_;
  ParameterSet<Real> params_;
  Backbone<Real> backbone_;
  ScaleTimeFeatures<Real> stf_;
  std::optional<ScaleTimeBlocks<Real>> blocks_;
  PredictionHeads<Real> heads_;
  LevelRanges ranges_;
};

/// Linear resize of a feature sequence to `length` steps (identity if equal).
FeatureSequence resize_features(const FeatureSequence& seq, std::size_t length);

}  // namespace brnlab
