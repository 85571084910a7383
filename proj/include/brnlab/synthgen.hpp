#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "brnlab/data_model.hpp"

namespace brnlab {

/// Raised when a configuration cannot produce a valid video.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Synthetic benchmark parameters. Lengths and gaps are in normalized time.
struct SynthConfig {
  int num_classes = 3;
  int num_videos = 250;
  int feature_dim = 16;
  int sequence_length = 256;
  double duration_seconds = 120.0;

  // Regular instances: log-uniform length in [min_action_length, max_action_length].
  double min_action_length = 0.03;
  double max_action_length = 0.6;
  int max_regular_instances = 3;
  double min_separation = 0.06;  // background between regular instances / groups

  // Short same-class pairs separated by a short background gap.
  double pair_min_length = 0.03;
  double pair_max_length = 0.08;
  double min_gap = 0.008;
  double max_gap = 0.03;
  double vbp_pair_fraction = 0.5;

  double amplitude = 1.5;
  double noise_std = 0.3;
  double ramp_fraction = 0.1;  // raised-cosine ramp at each end of an instance
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
  /// Number of videos that carry a short neighboring pair.
  int num_vbp_videos() const;
};

nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// K unit-norm prototypes fully determined by the seed.
std::vector<std::vector<float>> make_class_prototypes(int num_classes, int feature_dim,
                                                      std::uint64_t seed);

struct GeneratedVideo {
  FeatureSequence features;
  VideoAnnotation annotation;
};

/// Per-video RNG stream derived from (seed, video index).
std::mt19937_64 video_rng(std::uint64_t seed, std::uint64_t index);

std::string video_name(int index);

/// One video. `vbp` forces a same-class pair with gap <= max_gap.
GeneratedVideo generate_video(const SynthConfig& config,
                              const std::vector<std::vector<float>>& prototypes, int index,
                              bool vbp, std::mt19937_64& rng);

/// Indices of the videos that carry a VBP pair (exactly num_vbp_videos of them).
std::vector<bool> vbp_assignment(const SynthConfig& config);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

nlohmann::json to_json(const SplitManifest& split);
SplitManifest read_split(const std::filesystem::path& path);

struct Dataset {
  AnnotationSet annotations;
  std::vector<FeatureSequence> features;  // same order as annotations.videos
  SplitManifest split;
};

/// Everything in memory; generate_dataset writes exactly this.
Dataset make_dataset(const SynthConfig& config);

/// Writes features/<id>.brnf, annotations.json, split.json and synth_config.json under `out_dir`.
void generate_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

/// Loads a directory written by generate_dataset.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace brnlab
