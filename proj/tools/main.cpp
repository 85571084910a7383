#include <iostream>
#include <stdexcept>

#include <CLI11.hpp>

#include "brnlab/data_model.hpp"
#include "brnlab/synthgen.hpp"
#include "brnlab/trainer.hpp"
#include "commands.hpp"

namespace {

using namespace brnlab::cli;

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Random seed (overrides the configuration)");
  auto* out = cmd->add_option("--out", c.out, "Output path");
  if (out_required) out->required();
}

void add_truth(CLI::App* cmd, GroundTruthSource& t) {
  cmd->add_option("--annotations", t.annotations, "Ground-truth annotation file")->check(CLI::ExistingFile);
  cmd->add_option("--data", t.data, "Dataset directory (ground truth taken from --split)")
      ->check(CLI::ExistingDirectory);
  cmd->add_option("--split", t.split, "Split of --data: train, val or all")
      ->check(CLI::IsMember({"train", "val", "all"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal action detection on synthetic features with scale-time blocks"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen_cmd, gen);

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a detector");
  add_common(train_cmd, tr);
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--model", tr.model, "Model preset")->check(CLI::IsMember({"baseline", "brn"}));
  train_cmd->add_option("--ablate", tr.ablate, "Ablation variant (repeatable)")
      ->check(CLI::IsMember({"no-scale", "no-time", "no-selection", "no-dilation", "k3-rates-1234"}));
  train_cmd->add_option("--epochs", tr.epochs, "Number of epochs (drops later decay milestones)")
      ->check(CLI::PositiveNumber);

  DetectOptions det;
  auto* detect_cmd = app.add_subcommand("detect", "Run a checkpoint over a dataset split");
  add_common(detect_cmd, det);
  detect_cmd->add_option("--checkpoint", det.checkpoint, "Checkpoint directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  detect_cmd->add_option("--data", det.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  detect_cmd->add_option("--split", det.split, "train, val or all")->check(CLI::IsMember({"train", "val", "all"}));
  detect_cmd->add_option("--preset", det.preset, "Post-processing preset")
      ->check(CLI::IsMember({"anet", "thumos"}));

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate detections against ground truth");
  add_common(eval_cmd, ev);
  eval_cmd->add_option("--detections", ev.detections, "Detections file")->required()->check(CLI::ExistingFile);
  add_truth(eval_cmd, ev.truth);
  eval_cmd->add_option("--preset", ev.preset, "tIoU grid")->check(CLI::IsMember({"anet", "thumos"}));

  DiagnoseOptions dg;
  auto* diag_cmd = app.add_subcommand("diagnose-vbp", "Compare baseline and scale-time detections");
  add_common(diag_cmd, dg);
  diag_cmd->add_option("--baseline", dg.baseline, "Baseline detections")->required()->check(CLI::ExistingFile);
  diag_cmd->add_option("--brn", dg.brn, "Scale-time model detections")->required()->check(CLI::ExistingFile);
  add_truth(diag_cmd, dg.truth);
  diag_cmd->add_option("--preset", dg.preset, "tIoU grid")->check(CLI::IsMember({"anet", "thumos"}));

  PlotOptions pl;
  auto* plot_cmd = app.add_subcommand("plot", "Write a CSV and SVG figure");
  add_common(plot_cmd, pl);
  plot_cmd->add_option("kind", pl.kind, "selection-weights, detections-timeline or loss-curve")
      ->required()
      ->check(CLI::IsMember({"selection-weights", "detections-timeline", "loss-curve"}));
  plot_cmd->add_option("--checkpoint", pl.checkpoint, "Checkpoint directory")->check(CLI::ExistingDirectory);
  plot_cmd->add_option("--run", pl.run, "Training output directory")->check(CLI::ExistingDirectory);
  plot_cmd->add_option("--log", pl.log, "Loss log CSV")->check(CLI::ExistingFile);
  plot_cmd->add_option("--detections", pl.detections, "Detections file (repeatable)")->check(CLI::ExistingFile);
  add_truth(plot_cmd, pl.truth);
  plot_cmd->add_option("--video", pl.video, "Video id");
  plot_cmd->add_option("--block", pl.block, "Selection trace key, for example stb3.scale");
  plot_cmd->add_option("--top", pl.top, "Detections shown per source")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (e.get_exit_code() == 0) return 0;
    (void)code;
    return 1;
  }

  try {
    for (Common* c : std::initializer_list<Common*>{&gen, &tr, &det, &ev, &dg, &pl}) c->argv = args;
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*detect_cmd) return cmd_detect(det);
    if (*eval_cmd) return cmd_eval(ev);
    if (*diag_cmd) return cmd_diagnose_vbp(dg);
    if (*plot_cmd) return cmd_plot(pl);
  } catch (const brnlab::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const brnlab::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const brnlab::GenerationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
