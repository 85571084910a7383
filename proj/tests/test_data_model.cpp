#include <doctest.h>

#include <fstream>
#include <random>

#include "brnlab/data_model.hpp"
#include "test_util.hpp"

using namespace brnlab;

TEST_SUITE("data-model") {

TEST_CASE("temporal_iou examples") {
  CHECK(temporal_iou({0.2, 0.6}, {0.2, 0.6}) == doctest::Approx(1.0));
  CHECK(temporal_iou({0.0, 0.1}, {0.5, 0.6}) == 0.0);
  CHECK(temporal_iou({0.2, 0.6}, {0.4, 0.8}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("temporal_iou is symmetric, 1 only on equality, and decays with translation") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    double a0 = u(rng), a1 = u(rng), b0 = u(rng), b1 = u(rng);
    if (a0 == a1 || b0 == b1) continue;
    const Interval a{std::min(a0, a1), std::max(a0, a1)};
    const Interval b{std::min(b0, b1), std::max(b0, b1)};
    CHECK(temporal_iou(a, b) == temporal_iou(b, a));
    CHECK(temporal_iou(a, b) >= 0.0);
    CHECK(temporal_iou(a, b) <= 1.0);
    if (!(a == b)) CHECK(temporal_iou(a, b) < 1.0);
  }
  const Interval a{0.3, 0.5};
  double prev = 1.0;
  for (int k = 1; k <= 30; ++k) {
    const double shift = 0.01 * k;
    const double iou = temporal_iou(a, {0.3 + shift, 0.5 + shift});
    CHECK(iou <= prev);
    prev = iou;
  }
  CHECK(prev == 0.0);
}

TEST_CASE("Interval::make rejects degenerate and out-of-range intervals") {
  CHECK_THROWS_AS(Interval::make(0.5, 0.5), ValidationError);
  CHECK_THROWS_AS(Interval::make(0.6, 0.5), ValidationError);
  CHECK_THROWS_AS(Interval::make(-0.1, 0.5), ValidationError);
  CHECK_THROWS_AS(Interval::make(0.1, 1.5), ValidationError);
  CHECK(Interval::make(0.0, 1.0) == Interval{0.0, 1.0});
}

TEST_CASE("feature files round-trip bit-exactly") {
  testing::TempDir dir("features");
  std::mt19937_64 rng(5);
  auto seq = testing::random_sequence("vid", 7, 3, rng);
  seq.values[4] = -0.0f;
  seq.values[5] = 1e-38f;
  write_features(seq, dir.path() / "vid.brnf");
  const auto back = read_features(dir.path() / "vid.brnf");
  CHECK(back == seq);
  CHECK(std::signbit(back.values[4]));
}

TEST_CASE("feature file errors name the offending field") {
  testing::TempDir dir("badfeat");
  auto write_raw = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(dir.path() / name, std::ios::binary) << bytes;
    return dir.path() / name;
  };
  auto header = [](const char* magic, std::uint32_t version, std::uint32_t L, std::uint32_t D) {
    std::string s(magic, 4);
    for (std::uint32_t v : {version, L, D}) {
      for (int k = 0; k < 4; ++k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
    }
    return s;
  };
  SUBCASE("wrong magic") {
    const auto p = write_raw("a.brnf", header("XXXX", 1, 3, 2) + std::string(24, '\0'));
    CHECK_THROWS_WITH_AS(read_features(p), doctest::Contains("magic"), FormatError);
  }
  SUBCASE("wrong version") {
    const auto p = write_raw("b.brnf", header("BRNF", 2, 3, 2) + std::string(24, '\0'));
    CHECK_THROWS_WITH_AS(read_features(p), doctest::Contains("version"), FormatError);
  }
  SUBCASE("header L=3, D=2 with 20 payload bytes is truncated") {
    const auto p = write_raw("c.brnf", header("BRNF", 1, 3, 2) + std::string(20, '\0'));
    CHECK_THROWS_WITH_AS(read_features(p), doctest::Contains("expected 24 bytes"), FormatError);
  }
  SUBCASE("trailing bytes") {
    const auto p = write_raw("d.brnf", header("BRNF", 1, 3, 2) + std::string(28, '\0'));
    CHECK_THROWS_AS(read_features(p), FormatError);
  }
}

TEST_CASE("annotation validation lists video id and instance index") {
  AnnotationSet set;
  set.classes = {"a", "b"};
  set.videos.push_back({"clip7", 10.0, {{{0.1, 0.2}, 1}, {{0.5, 0.5}, 2}}});
  CHECK_THROWS_WITH_AS(validate_annotations(set), doctest::Contains("clip7"), ValidationError);
  CHECK_THROWS_WITH_AS(validate_annotations(set), doctest::Contains("instance 1"), ValidationError);
  set.videos[0].instances[1] = {{0.5, 0.6}, 0};
  CHECK_THROWS_AS(validate_annotations(set), ValidationError);
  set.videos[0].instances[1] = {{0.5, 0.6}, 3};
  CHECK_THROWS_AS(validate_annotations(set), ValidationError);
  set.videos[0].instances[1] = {{0.5, 0.6}, 2};
  CHECK_NOTHROW(validate_annotations(set));
}

TEST_CASE("annotations round-trip, including empty instance lists") {
  testing::TempDir dir("ann");
  AnnotationSet set;
  set.classes = {"jump", "run"};
  set.videos.push_back({"v1", 12.5, {{{0.1, 0.25}, 1}, {{0.3, 0.9}, 2}}});
  set.videos.push_back({"v2", 3.0, {}});
  write_annotations(set, dir.path() / "a.json");
  const auto back = read_annotations(dir.path() / "a.json");
  CHECK(back == set);
  write_annotations(back, dir.path() / "b.json");
  CHECK(read_text(dir.path() / "a.json") == read_text(dir.path() / "b.json"));
}

TEST_CASE("reading a degenerate annotation fails validation") {
  const std::string doc =
      R"({"classes":["a"],"videos":[{"video_id":"v","duration_seconds":1.0,"instances":[{"start":0.5,"end":0.5,"label":1}]}]})";
  CHECK_THROWS_AS(annotations_from_json(doc), ValidationError);
  CHECK_THROWS_AS(annotations_from_json("{not json"), FormatError);
}

TEST_CASE("detections are written sorted by descending score and read back") {
  testing::TempDir dir("det");
  DetectionSet set;
  set["v"] = {{"v", {0.1, 0.2}, 1, 0.3}, {"v", {0.2, 0.4}, 2, 0.9}, {"v", {0.5, 0.7}, 1, 0.6}};
  write_detections(set, dir.path() / "d.json");
  const auto back = read_detections(dir.path() / "d.json");
  REQUIRE(back.at("v").size() == 3);
  CHECK(back.at("v")[0].score == 0.9);
  CHECK(back.at("v")[1].score == 0.6);
  CHECK(back.at("v")[2].score == 0.3);
  CHECK(back.at("v")[0].interval == Interval{0.2, 0.4});
}

TEST_CASE("ground truth converts to score-1 detections") {
  AnnotationSet set;
  set.classes = {"a"};
  set.videos.push_back({"v", 1.0, {{{0.1, 0.2}, 1}}});
  const auto dets = detections_from_annotations(set);
  REQUIRE(dets.at("v").size() == 1);
  CHECK(dets.at("v")[0].score == 1.0);
  CHECK(dets.at("v")[0].label == 1);
}

}  // TEST_SUITE
