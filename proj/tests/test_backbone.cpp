#include <doctest.h>

#include "brnlab/backbone.hpp"
#include "brnlab/trainer.hpp"
#include "test_util.hpp"

using namespace brnlab;

TEST_SUITE("backbone") {

TEST_CASE("level lengths halve from the input length") {
  CHECK(level_lengths(256, 5) == std::vector<std::size_t>{128, 64, 32, 16, 8});
  CHECK(level_lengths(16, 2) == std::vector<std::size_t>{8, 4});
}

TEST_CASE("indivisible input length is a shape error naming the divisor") {
  CHECK_THROWS_WITH_AS(check_divisible(100, 5), doctest::Contains("2^5 = 32"), ShapeError);
  CHECK_NOTHROW(check_divisible(64, 5));
  BackboneConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dim = 4;
  cfg.num_levels = 3;
  ParameterSet<double> ps;
  Backbone<double> bb(cfg, ps);
  Graph<double> g;
  CHECK_THROWS_AS(bb.forward(g, g.constant(Tensor<double>(1, 20, 2))), ShapeError);
}

TEST_CASE("default shapes: 256 steps, five levels, 256 channels") {
  BackboneConfig cfg;
  CHECK(cfg.hidden_dim == 256);
  CHECK(cfg.num_levels == 5);
  ParameterSet<float> ps;
  Backbone<float> bb(cfg, ps);
  std::mt19937_64 rng(1);
  bb.initialize(rng);
  Graph<float> g;
  const auto levels = bb.forward(g, g.constant(Tensor<float>(1, 256, cfg.input_dim, 0.5f)));
  REQUIRE(levels.size() == 5);
  const std::size_t expected[] = {128, 64, 32, 16, 8};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(g.value(levels[i]).scales == 1);
    CHECK(g.value(levels[i]).steps == expected[i]);
    CHECK(g.value(levels[i]).channels == 256);
  }
}

TEST_CASE("zero input with zero biases gives zero at every level") {
  BackboneConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dim = 8;
  cfg.num_levels = 3;
  ParameterSet<double> ps;
  Backbone<double> bb(cfg, ps);
  std::mt19937_64 rng(2);
  bb.initialize(rng);
  Graph<double> g;
  for (Var v : bb.forward(g, g.constant(Tensor<double>(1, 32, 3)))) {
    for (double x : g.value(v).data) CHECK(x == 0.0);
  }
}

TEST_CASE("the transformer variant is a named hook that is rejected") {
  BackboneConfig cfg;
  cfg.kind = BackboneKind::transformer;
  CHECK_THROWS_AS(cfg.validate(), std::logic_error);
  BackboneConfig one;
  one.num_levels = 1;
  CHECK_THROWS(one.validate());
}

TEST_CASE("backbone gradient check (T_in=16, D=4, S=2)") {
  BackboneConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dim = 4;
  cfg.num_levels = 2;
  ParameterSet<double> ps;
  Backbone<double> bb(cfg, ps);
  std::mt19937_64 rng(3);
  bb.initialize(rng);
  testing::jitter(ps, rng);
  const auto x = testing::random_tensor(1, 16, 3, rng);
  std::vector<Tensor<double>> probes = {testing::random_tensor(1, 8, 4, rng), testing::random_tensor(1, 4, 4, rng)};
  const auto res = grad_check(ps, [&](Graph<double>& g) {
    const auto levels = bb.forward(g, g.constant(x));
    return ops::combine(g, ops::dot(g, levels[0], probes[0]), 1.0, ops::dot(g, levels[1], probes[1]), 1.0);
  });
  INFO(res.report(1e-3));
  CHECK(res.passed(1e-3));
}

}  // TEST_SUITE
