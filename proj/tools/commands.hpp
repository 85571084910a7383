#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace brnlab::cli {

struct Common {
  std::vector<std::string> argv;
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
};

struct GenOptions : Common {};

struct TrainOptions : Common {
  std::filesystem::path data;
  std::optional<std::string> model;
  std::vector<std::string> ablate;
  std::optional<std::size_t> epochs;
};

struct DetectOptions : Common {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::string split = "val";
  std::string preset = "anet";
};

/// Ground truth comes either from an annotation file or from a dataset directory and split.
struct GroundTruthSource {
  std::optional<std::filesystem::path> annotations;
  std::optional<std::filesystem::path> data;
  std::string split = "val";
};

struct EvalOptions : Common {
  std::filesystem::path detections;
  GroundTruthSource truth;
  std::string preset = "anet";
};

struct DiagnoseOptions : Common {
  std::filesystem::path baseline;
  std::filesystem::path brn;
  GroundTruthSource truth;
  std::string preset = "anet";
};

struct PlotOptions : Common {
  std::string kind;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> run;  // training output directory holding loss.csv
  std::optional<std::filesystem::path> log;
  std::vector<std::filesystem::path> detections;
  GroundTruthSource truth;
  std::optional<std::string> video;
  std::optional<std::string> block;
  std::size_t top = 5;
};

int cmd_gen(const GenOptions& o);
int cmd_train(const TrainOptions& o);
int cmd_detect(const DetectOptions& o);
int cmd_eval(const EvalOptions& o);
int cmd_diagnose_vbp(const DiagnoseOptions& o);
int cmd_plot(const PlotOptions& o);

}  // namespace brnlab::cli
