#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "brnlab/data_model.hpp"
#include "brnlab/synthgen.hpp"
#include "test_util.hpp"

using namespace brnlab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Runs the command-line tool with its output captured in `dir`/log.txt; returns the exit status.
int run(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" BRNLAB_CLI "' " + args + " > log.txt 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kSynth = R"({"num_videos":12,"sequence_length":64,"feature_dim":6,"num_classes":2})";
const char* kTrain = R"({"epochs":2,"milestones":[1],"batch_size":4,"crop_window":64,"hidden_dim":6,"threads":1})";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen writes the dataset, a checksummed manifest and is reproducible") {
    testing::TempDir tmp("cli_gen");
    write(tmp.path() / "synth.json", kSynth);
    REQUIRE(run(tmp.path(), "gen --config synth.json --seed 5 --out a") == 0);
    REQUIRE(run(tmp.path(), "gen --config synth.json --seed 5 --out b") == 0);
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(tmp.path() / "a" / "features")) n += e.is_regular_file();
    CHECK(n == 12);
    for (const char* f : {"annotations.json", "split.json", "synth_config.json"}) {
      CHECK(slurp(tmp.path() / "a" / f) == slurp(tmp.path() / "b" / f));
    }
    const auto m = json::parse(slurp(tmp.path() / "a" / "run_manifest.json"));
    CHECK(m["command"] == "gen");
    CHECK(m["seed"] == 5);
    CHECK(m["config"]["num_videos"] == 12);
    CHECK(m["outputs"].size() == 15);
    for (const auto& o : m["outputs"]) CHECK(o["sha256"].get<std::string>().size() == 64);
    CHECK(m["inputs"].size() == 1);
  }

  TEST_CASE("eval of ground-truth detections scores 100 and diagnose of identical files has zero deltas") {
    testing::TempDir tmp("cli_eval");
    write(tmp.path() / "synth.json", kSynth);
    REQUIRE(run(tmp.path(), "gen --config synth.json --out data") == 0);
    const auto all = read_annotations(tmp.path() / "data" / "annotations.json");
    const auto split = read_split(tmp.path() / "data" / "split.json");
    AnnotationSet val;
    val.classes = all.classes;
    for (const auto& id : split.val) val.videos.push_back(*all.find(id));
    write_detections(detections_from_annotations(val), tmp.path() / "gt_dets.json");

    REQUIRE(run(tmp.path(), "eval --detections gt_dets.json --data data --out report") == 0);
    const auto report = json::parse(slurp(tmp.path() / "report.json"));
    CHECK(report["average_map"].get<double>() == doctest::Approx(100.0));
    CHECK(fs::exists(tmp.path() / "report.txt"));
    CHECK(fs::exists(tmp.path() / "report.manifest.json"));

    REQUIRE(run(tmp.path(), "eval --detections gt_dets.json --annotations data/annotations.json --out whole") == 0);
    // Detections cover only the validation videos, so the whole-set score is lower.
    const auto whole = json::parse(slurp(tmp.path() / "whole.json"));
    CHECK(whole["average_map"].get<double>() < 100.0);

    REQUIRE(run(tmp.path(), "diagnose-vbp --baseline gt_dets.json --brn gt_dets.json --data data --out diag") == 0);
    const auto d = json::parse(slurp(tmp.path() / "diag.json"))["delta"];
    CHECK(d["average_map"].get<double>() == 0.0);
    for (const auto& v : d["map"]) CHECK(v.get<double>() == 0.0);
    if (!d["merge_rate"].is_null()) CHECK(d["merge_rate"].get<double>() == 0.0);
    for (const auto& [k, g] : d["coverage"].items()) {
      for (const char* f : {"map", "fnr"}) {
        if (!g[f].is_null()) CHECK(g[f].get<double>() == 0.0);
      }
    }
    for (const auto& [k, g] : d["distance"].items()) {
      if (!g["map"].is_null()) CHECK(g["map"].get<double>() == 0.0);
    }
    CHECK(fs::exists(tmp.path() / "diag.txt"));
  }

  TEST_CASE("train, detect and plot run end to end and training is reproducible") {
    testing::TempDir tmp("cli_train");
    write(tmp.path() / "synth.json", kSynth);
    write(tmp.path() / "train.json", kTrain);
    REQUIRE(run(tmp.path(), "gen --config synth.json --out data") == 0);
    REQUIRE(run(tmp.path(), "train --config train.json --data data --seed 4 --out r1") == 0);
    REQUIRE(run(tmp.path(), "train --config train.json --data data --seed 4 --out r2") == 0);
    CHECK(slurp(tmp.path() / "r1/checkpoint/params.bin") == slurp(tmp.path() / "r2/checkpoint/params.bin"));
    CHECK(slurp(tmp.path() / "r1/loss.csv") == slurp(tmp.path() / "r2/loss.csv"));
    CHECK(fs::exists(tmp.path() / "r1/run_manifest.json"));

    REQUIRE(run(tmp.path(), "train --config train.json --data data --model baseline --epochs 1 --out base") == 0);
    REQUIRE(run(tmp.path(), "train --config train.json --data data --ablate no-time --out abl") == 0);
    const auto abl = json::parse(slurp(tmp.path() / "abl/run_manifest.json"));
    CHECK(abl["config"]["ablations"] == json::array({"no-time"}));

    REQUIRE(run(tmp.path(), "detect --checkpoint r1/checkpoint --data data --out d1.json") == 0);
    REQUIRE(run(tmp.path(), "detect --checkpoint r1/checkpoint --data data --out d2.json") == 0);
    CHECK(slurp(tmp.path() / "d1.json") == slurp(tmp.path() / "d2.json"));
    const auto dets = read_detections(tmp.path() / "d1.json");
    const auto split = read_split(tmp.path() / "data" / "split.json");
    for (const auto& [vid, list] : dets) {
      CHECK(std::find(split.val.begin(), split.val.end(), vid) != split.val.end());
    }
    REQUIRE(run(tmp.path(), "detect --checkpoint base/checkpoint --data data --out b.json") == 0);

    REQUIRE(run(tmp.path(), "plot selection-weights --checkpoint r1/checkpoint --data data --out sel") == 0);
    REQUIRE(run(tmp.path(), "plot detections-timeline --detections b.json --detections d1.json --data data --out tl") == 0);
    REQUIRE(run(tmp.path(), "plot loss-curve --run r1 --out loss") == 0);
    for (const char* f : {"sel", "tl", "loss"}) {
      CHECK(fs::file_size(tmp.path() / (std::string(f) + ".csv")) > 0);
      CHECK(slurp(tmp.path() / (std::string(f) + ".svg")).rfind("<svg", 0) == 0);
      CHECK(fs::exists(tmp.path() / (std::string(f) + ".manifest.json")));
    }
    // The baseline has no selection to plot.
    CHECK(run(tmp.path(), "plot selection-weights --checkpoint base/checkpoint --data data --out s2") == 1);
    CHECK(run(tmp.path(), "plot selection-weights --checkpoint r1/checkpoint --data data --block nope --out s3") == 1);
  }

  TEST_CASE("usage errors exit with status 1 and help with 0") {
    testing::TempDir tmp("cli_err");
    write(tmp.path() / "bad.json", "{not json");
    write(tmp.path() / "invalid.json", R"({"num_videos":0})");
    CHECK(run(tmp.path(), "--help") == 0);
    CHECK(run(tmp.path(), "gen --help") == 0);
    CHECK(run(tmp.path(), "") == 1);
    CHECK(run(tmp.path(), "frobnicate") == 1);
    CHECK(run(tmp.path(), "gen --out x --bogus") == 1);
    CHECK(run(tmp.path(), "gen --config missing.json --out x") == 1);
    CHECK(run(tmp.path(), "gen --config bad.json --out x") == 1);
    CHECK(run(tmp.path(), "gen --config invalid.json --out x") == 1);
    CHECK(run(tmp.path(), "train --data nowhere --out x") == 1);
    CHECK(run(tmp.path(), "train --data . --model huge --out x") == 1);
    CHECK(run(tmp.path(), "eval --detections missing.json --annotations missing.json --out x") == 1);
    CHECK(run(tmp.path(), "plot pie --out x") == 1);
    CHECK(slurp(tmp.path() / "log.txt").find("pie") != std::string::npos);
  }
}
