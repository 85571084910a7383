#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "brnlab/inference.hpp"
#include "brnlab/metrics.hpp"
#include "brnlab/model.hpp"
#include "brnlab/synthgen.hpp"

namespace brnlab {

/// Raised when training produces a NaN or infinity.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::vector<std::size_t> milestones{40, 50};
  double decay = 0.1;
  double lambda = 1.0;  // weight of the regression loss
  double alpha = 4.0;   // focal exponent
  std::uint64_t seed = 0;
  std::size_t crop_window = 256;

  ModelPreset preset = ModelPreset::brn;
  std::vector<std::string> ablations;
  std::size_t hidden_dim = 32;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;

  std::size_t checkpoint_every = 0;  // epochs between extra checkpoints; 0 writes only the final one
  std::size_t threads = 0;           // 0: worker_count()

  void validate() const;
  /// Architecture for a dataset with the given feature width and class count.
  ModelConfig model_config(std::size_t input_dim, std::size_t num_classes) const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Base rate times `decay` for every milestone already reached.
double lr_at(std::size_t epoch, const TrainConfig& config);

/// Random contiguous window of `window` steps. Instances are clipped to the
/// window and renormalized; those keeping less than half their length are dropped.
std::pair<FeatureSequence, VideoAnnotation> random_crop(const FeatureSequence& features,
                                                        const VideoAnnotation& annotation, std::size_t window,
                                                        std::mt19937_64& rng);

/// Adam with bias correction; decoupled weight decay when configured.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps, double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(ParameterSet<float>& params, const Gradients<float>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double l_cls = 0.0;
  double l_reg = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

std::string loss_log_csv(const std::vector<EpochLog>& log);
std::vector<EpochLog> read_loss_log(const std::filesystem::path& path);

struct TrainResult {
  std::unique_ptr<Model<float>> model;
  std::vector<EpochLog> log;
  std::string rng_state;
};

/// Per-sample losses and gradients for one (already cropped) video.
struct SampleLoss {
  double l_cls = 0.0;
  double l_reg = 0.0;
  double total = 0.0;
};
SampleLoss sample_loss(const Model<float>& model, const FeatureSequence& features,
                       const VideoAnnotation& annotation, const TrainConfig& config, Gradients<float>* grads);

/// Trains on the dataset's train split. With `out_dir`, writes loss.csv,
/// the final checkpoint under `checkpoint/` and periodic ones under `checkpoint_epoch<N>/`.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model, const TrainConfig& config,
                     std::size_t epoch, const std::string& rng_state);

struct LoadedCheckpoint {
  std::unique_ptr<Model<float>> model;
  TrainConfig train_config;
  std::size_t epoch = 0;
  std::string rng_state;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// ---------------------------------------------------------------- grad check

struct GroupError {
  std::string name;
  std::size_t size = 0;
  double max_abs_diff = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GroupError> groups;
  double max_rel_error = 0.0;  // 0 for a fragment without parameters

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
  std::string report(double tolerance) const;
};

/// Central finite differences of `loss` against its analytic parameter
/// gradients, one group per parameter. Relative error of a group:
/// max|analytic - numeric| / max(max|analytic|, max|numeric|, floor).
GradCheckResult grad_check(ParameterSet<double>& params, const std::function<Var(Graph<double>&)>& loss,
                           double step = 1e-5, double floor = 1e-7);

// ---------------------------------------------------------------- experiments

/// Restricts a dataset to the listed ids (in the given order).
std::pair<AnnotationSet, std::vector<FeatureSequence>> select_videos(const Dataset& dataset,
                                                                     const std::vector<std::string>& ids);

struct ExperimentResult {
  TrainResult training;
  DetectionSet detections;  // validation split
  EvalReport report;
};

/// Trains, detects on the validation split and evaluates.
ExperimentResult run_experiment(const Dataset& dataset, const TrainConfig& config,
                                EvalPreset preset = EvalPreset::anet);

}  // namespace brnlab
