#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "brnlab/trainer.hpp"
#include "test_util.hpp"

using namespace brnlab;

namespace {

// Small dataset and schedule so full training runs take seconds.
Dataset small_dataset() {
  SynthConfig sc;
  sc.num_videos = 10;
  sc.sequence_length = 64;
  sc.feature_dim = 6;
  sc.num_classes = 2;
  return make_dataset(sc);
}

TrainConfig small_train_config() {
  TrainConfig c;
  c.epochs = 5;
  c.milestones = {3};
  c.batch_size = 4;
  c.crop_window = 64;
  c.hidden_dim = 6;
  c.seed = 11;
  c.threads = 2;
  return c;
}

FeatureSequence ramp_sequence(std::size_t length) {
  FeatureSequence f{"r", length, 1, {}};
  for (std::size_t t = 0; t < length; ++t) f.values.push_back(static_cast<float>(t));
  return f;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("step schedule: milestones 80 and 100") {
  TrainConfig c;
  c.epochs = 120;
  c.milestones = {80, 100};
  CHECK(lr_at(50, c) == doctest::Approx(1e-3));
  CHECK(lr_at(79, c) == doctest::Approx(1e-3));
  CHECK(lr_at(80, c) == doctest::Approx(1e-4));
  CHECK(lr_at(90, c) == doctest::Approx(1e-4));
  CHECK(lr_at(110, c) == doctest::Approx(1e-5));
}

TEST_CASE("train config defaults and validation") {
  TrainConfig c;
  CHECK(c.epochs == 60);
  CHECK(c.milestones == std::vector<std::size_t>{40, 50});
  CHECK(c.batch_size == 16);
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.lambda == 1.0);
  CHECK(c.alpha == 4.0);
  CHECK(c.weight_decay == 0.0);
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.milestones = {50, 40};
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.milestones = {60};
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.lambda = -1.0;
  CHECK_THROWS(bad.validate());
  c.ablations = {"no-time"};
  c.seed = 5;
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("random crop: full window is the identity") {
  const auto f = ramp_sequence(8);
  const VideoAnnotation a{"r", 8.0, {{{0.25, 0.5}, 1}}};
  std::mt19937_64 rng(1);
  const auto [cf, ca] = random_crop(f, a, 8, rng);
  CHECK(cf == f);
  CHECK(ca == a);
  CHECK_THROWS_AS(random_crop(f, a, 9, rng), std::invalid_argument);
}

TEST_CASE("random crop: outside instances drop, exactly half retained is kept") {
  const auto f = ramp_sequence(8);
  // frames [2,4) and [7,8)
  const VideoAnnotation a{"r", 8.0, {{{0.25, 0.5}, 1}, {{0.875, 1.0}, 2}}};
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 200 && !seen; ++seed) {
    std::mt19937_64 rng(seed);
    const auto [cf, ca] = random_crop(f, a, 4, rng);
    REQUIRE(cf.length == 4);
    if (cf.values[0] != 3.0f) continue;  // want the window [3, 7)
    seen = true;
    REQUIRE(ca.instances.size() == 1);
    CHECK(ca.instances[0].label == 1);
    CHECK(ca.instances[0].interval.start == 0.0);
    CHECK(ca.instances[0].interval.end == doctest::Approx(0.25));
    CHECK(ca.duration_seconds == doctest::Approx(4.0));
  }
  CHECK(seen);
}

TEST_CASE("random crop keeps feature rows aligned with the shifted annotation") {
  std::mt19937_64 rng(2);
  const auto f = ramp_sequence(64);
  const VideoAnnotation a{"r", 64.0, {{{0.5, 0.75}, 1}}};
  for (int i = 0; i < 50; ++i) {
    const auto [cf, ca] = random_crop(f, a, 32, rng);
    const double off = cf.values[0];
    for (const auto& inst : ca.instances) {
      CHECK(inst.interval.start * 32.0 + off == doctest::Approx(std::max(32.0, off)));
      CHECK(inst.interval.end * 32.0 + off == doctest::Approx(std::min(48.0, off + 32.0)));
    }
  }
}

TEST_CASE("Adam with zero gradient leaves parameters unchanged") {
  ParameterSet<float> ps;
  auto& p = ps.add("p", {5});
  p.values = {1.0f, -2.0f, 0.5f, 0.0f, 3.25f};
  const auto before = p.values;
  Adam adam(0.9, 0.999, 1e-8);
  Gradients<float> zero(1);
  zero.values[0].assign(5, 0.0f);
  for (int i = 0; i < 10; ++i) adam.step(ps, zero, 1e-3);
  CHECK(p.values == before);
  CHECK(adam.steps() == 10);
  // a non-zero gradient moves every coordinate against its sign by about lr
  zero.values[0] = {1.0f, -1.0f, 1.0f, -1.0f, 1.0f};
  Adam fresh(0.9, 0.999, 1e-8);
  fresh.step(ps, zero, 1e-3);
  CHECK(p.values[0] == doctest::Approx(1.0f - 1e-3f));
  CHECK(p.values[1] == doctest::Approx(-2.0f + 1e-3f));
}

TEST_CASE("loss log CSV round-trips") {
  std::vector<EpochLog> log = {{0, 0.5, 0.25, 0.75, 1e-3}, {1, 0.125, 0.0625, 0.1875, 1e-4}};
  testing::TempDir dir("log");
  write_text_atomic(dir.path() / "loss.csv", loss_log_csv(log));
  const auto back = read_loss_log(dir.path() / "loss.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].epoch == 1);
  CHECK(back[1].l_cls == 0.125);
  CHECK(back[1].lr == doctest::Approx(1e-4));
  CHECK(loss_log_csv(back) == loss_log_csv(log));
}

TEST_CASE("same seed gives identical loss curves; a different seed does not") {
  const auto ds = small_dataset();
  auto cfg = small_train_config();
  const auto a = train(ds, cfg);
  cfg.threads = 1;
  const auto b = train(ds, cfg);
  REQUIRE(a.log.size() == 5);
  CHECK(loss_log_csv(a.log) == loss_log_csv(b.log));
  CHECK(a.rng_state == b.rng_state);
  cfg.seed = 12;
  const auto c = train(ds, cfg);
  CHECK(loss_log_csv(a.log) != loss_log_csv(c.log));
  CHECK(a.log[3].lr == doctest::Approx(1e-4));
}

TEST_CASE("baseline has strictly fewer parameters than BRN") {
  TrainConfig c;
  c.preset = ModelPreset::baseline;
  const Model<float> base(c.model_config(16, 3), 0);
  c.preset = ModelPreset::brn;
  const Model<float> brn(c.model_config(16, 3), 0);
  CHECK(base.params().total_size() < brn.params().total_size());
  CHECK(base.params().find("stb1.scale.branch0.weight") == nullptr);
}

TEST_CASE("lambda = 0 leaves the regression head untouched and still lowers the classification loss") {
  const auto ds = small_dataset();
  auto cfg = small_train_config();
  cfg.lambda = 0.0;
  cfg.epochs = 20;
  cfg.milestones = {};
  const auto r = train(ds, cfg);
  // a run whose updates vanish in float precision recovers the initial parameters
  TrainConfig same = cfg;
  same.epochs = 1;
  same.learning_rate = 1e-30;
  const auto untouched = train(ds, same);
  std::size_t reg_groups = 0;
  for (std::size_t i = 0; i < r.model->params().count(); ++i) {
    const auto& p = r.model->params()[i];
    if (p.name.rfind("head.reg", 0) != 0) continue;
    ++reg_groups;
    CHECK(p.values == untouched.model->params()[i].values);
  }
  CHECK(reg_groups > 0);
  CHECK(r.log.back().l_reg > 0.0);
  CHECK(r.log.back().l_cls < r.log.front().l_cls);
}

TEST_CASE("checkpoint round-trip reproduces outputs bit-identically") {
  const auto ds = small_dataset();
  auto cfg = small_train_config();
  cfg.epochs = 2;
  cfg.milestones = {};
  cfg.checkpoint_every = 1;
  testing::TempDir dir("ckpt");
  const auto r = train(ds, cfg, dir.path());
  CHECK(std::filesystem::exists(dir.path() / "loss.csv"));
  CHECK(std::filesystem::exists(dir.path() / "checkpoint_epoch1" / "manifest.json"));
  CHECK(read_loss_log(dir.path() / "loss.csv").size() == 2);
  const auto loaded = load_checkpoint(dir.path() / "checkpoint");
  CHECK(loaded.epoch == 2);
  CHECK(loaded.rng_state == r.rng_state);
  CHECK(to_json(loaded.train_config) == to_json(cfg));
  for (const auto& f : ds.features) {
    Graph<float> g1, g2;
    const auto o1 = r.model->forward(g1, f);
    const auto o2 = loaded.model->forward(g2, f);
    CHECK(g1.value(o1.heads.class_logits).data == g2.value(o2.heads.class_logits).data);
    CHECK(g1.value(o1.heads.reg_raw).data == g2.value(o2.heads.reg_raw).data);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  testing::TempDir dir("badckpt");
  const auto ds = small_dataset();
  auto cfg = small_train_config();
  cfg.epochs = 1;
  cfg.milestones = {};
  train(ds, cfg, dir.path());
  const auto bin = dir.path() / "checkpoint" / "params.bin";
  std::filesystem::resize_file(bin, std::filesystem::file_size(bin) - 4);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "checkpoint"), FormatError);
  CHECK_THROWS(load_checkpoint(dir.path() / "missing"));
}

TEST_CASE("a non-finite loss names the video and the first bad tensor") {
  const auto ds = small_dataset();
  auto cfg = small_train_config();
  Model<float> model(cfg.model_config(6, 2), 3);
  model.params().find("head.cls.pred.bias")->values[1] = std::numeric_limits<float>::quiet_NaN();
  const auto& f = ds.features[0];
  try {
    sample_loss(model, f, ds.annotations.videos[0], cfg, nullptr);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(f.video_id) != std::string::npos);
    CHECK(msg.find("head.cls") != std::string::npos);
  }
}

TEST_CASE("full model gradient check (S=2, T=16, D=4, K=2) for both presets") {
  for (auto preset : {ModelPreset::brn, ModelPreset::baseline}) {
    auto cfg = testing::tiny_model_config();
    cfg.apply_preset(preset);
    Model<double> model(cfg, 4);
    std::mt19937_64 rng(5);
    testing::jitter(model.params(), rng);
    const auto x = testing::random_tensor(1, 32, 3, rng);
    const VideoAnnotation a{"v", 1.0, {{{0.1, 0.3}, 1}, {{0.4, 0.95}, 2}}};
    TargetMap targets;
    {
      Graph<double> g;
      const auto out = model.forward(g, g.constant(x));
      targets = assign_targets(a, g.value(out.heads.reg_raw), model.level_ranges());
    }
    REQUIRE(targets.num_positive() > 0);
    const auto res = grad_check(model.params(), [&](Graph<double>& g) {
      const auto out = model.forward(g, g.constant(x));
      return total_loss(g, focal_loss(g, out.heads.class_logits, targets, 4.0), iou_loss(g, out.heads.reg_raw, targets), 1.0);
    });
    INFO(res.report(1e-3));
    CHECK(res.passed(1e-3));
  }
}

TEST_CASE("selection module alone passes the gradient check") {
  ParameterSet<double> ps;
  SelectionModule<double> sel("sel", 4, 4, Axis::scale, 5, ps);
  std::mt19937_64 rng(6);
  sel.initialize(rng);
  testing::jitter(ps, rng);
  const auto x = testing::random_tensor(3, 8, 4, rng, 2.0);
  std::vector<Tensor<double>> br;
  for (int i = 0; i < 4; ++i) br.push_back(testing::random_tensor(3, 8, 4, rng));
  const auto probe = testing::random_tensor(3, 8, 4, rng);
  const auto res = grad_check(ps, [&](Graph<double>& g) {
    std::vector<Var> b;
    for (const auto& t : br) b.push_back(g.constant(t));
    return ops::dot(g, sel.forward(g, g.constant(x), b), probe);
  });
  INFO(res.report(1e-3));
  CHECK(res.passed(1e-3));
}

TEST_CASE("run_experiment evaluates on the validation split") {
  const auto ds = small_dataset();
  auto cfg = small_train_config();
  cfg.epochs = 1;
  cfg.milestones = {};
  const auto r = run_experiment(ds, cfg);
  for (const auto& [vid, dets] : r.detections) {
    CHECK(std::find(ds.split.val.begin(), ds.split.val.end(), vid) != ds.split.val.end());
  }
  CHECK(r.report.overall.thresholds.size() == 10);
}

}  // TEST_SUITE
