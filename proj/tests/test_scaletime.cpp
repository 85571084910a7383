#include <doctest.h>

#include <random>

#include "brnlab/scaletime.hpp"
#include "brnlab/trainer.hpp"
#include "test_util.hpp"

using namespace brnlab;
using testing::random_tensor;

namespace {

void zero(Parameter<double>& p) { std::fill(p.values.begin(), p.values.end(), 0.0); }

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_SUITE("scaletime") {

TEST_CASE("resize_linear preserves constants and ramps exactly") {
  const std::vector<double> c(7, 2.5);
  for (std::size_t to : {2u, 5u, 7u, 13u, 128u}) {
    for (double v : resize_linear(c, to)) CHECK(v == 2.5);
  }
  const std::vector<double> ramp = {0.0, 1.0, 2.0, 3.0};
  const auto up = resize_linear(ramp, 8);
  REQUIRE(up.size() == 8);
  for (std::size_t j = 0; j < 8; ++j) CHECK(up[j] == doctest::Approx(static_cast<double>(j) * 3.0 / 7.0).epsilon(1e-15));
  // a ramp on a grid of integers stays exact at all sample points it shares
  std::vector<double> big(9);
  for (std::size_t i = 0; i < 9; ++i) big[i] = 2.0 * static_cast<double>(i) - 1.0;
  const auto r = resize_linear(big, 17);
  for (std::size_t j = 0; j < 17; ++j) CHECK(r[j] == static_cast<double>(j) - 1.0);
}

TEST_CASE("resize_linear: identity at equal length, endpoints always exact") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t from : {2u, 3u, 8u, 16u}) {
    std::vector<double> x(from);
    for (auto& v : x) v = n(rng);
    CHECK(resize_linear(x, from) == x);
    for (std::size_t to : {2u, 4u, 9u, 128u}) {
      const auto y = resize_linear(x, to);
      CHECK(y.front() == x.front());
      CHECK(y.back() == x.back());
    }
  }
}

TEST_CASE("upsampling by an integer grid factor then subsampling returns the input") {
  std::vector<double> x = {0.3, -1.2, 4.0, 0.0, 2.2};
  const auto up = resize_linear(x, 17);  // (5-1)*4 + 1
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(up[4 * i] == x[i]);
}

TEST_CASE("resize_linear rejects sequences shorter than two") {
  const std::vector<double> one = {1.0};
  CHECK_THROWS_AS(resize_linear(one, 4), ShapeError);
  const std::vector<double> two = {1.0, 2.0};
  CHECK_THROWS_AS(resize_linear(two, 1), ShapeError);
}

TEST_CASE("resize_time gradient") {
  std::mt19937_64 rng(2);
  ParameterSet<double> ps;
  auto& w = ps.add("w", {1, 2, 2});
  fill_uniform(w, 1.0, rng);
  const auto x = random_tensor(1, 5, 2, rng);
  const auto probe = random_tensor(1, 12, 2, rng);
  const auto res = grad_check(ps, [&](Graph<double>& g) {
    return ops::dot(g, resize_time(g, ops::conv<double>(g, g.constant(x), w, nullptr, Axis::time), 12), probe);
  });
  CHECK(res.passed(1e-6));
}

TEST_CASE("scale-time features stack every level at the finest length") {
  std::mt19937_64 rng(3);
  ParameterSet<double> ps;
  ScaleTimeFeatures<double> stf(5, 3, 4, ps);
  stf.initialize(rng);
  Graph<double> g;
  std::vector<Var> levels;
  for (std::size_t len : {32u, 16u, 8u, 4u, 2u}) levels.push_back(g.constant(random_tensor(1, len, 3, rng)));
  const auto& out = g.value(stf.forward(g, levels, 32));
  CHECK(out.scales == 5);
  CHECK(out.steps == 32);
  CHECK(out.channels == 4);

  Graph<double> z;
  std::vector<Var> zeros;
  for (std::size_t len : {32u, 16u, 8u, 4u, 2u}) zeros.push_back(z.constant(Tensor<double>(1, len, 3)));
  for (double v : z.value(stf.forward(z, zeros, 32)).data) CHECK(v == 0.0);
  CHECK_THROWS_AS(stf.forward(z, {zeros[0]}, 32), ShapeError);
}

TEST_CASE("selection weights form a distribution at every position") {
  std::mt19937_64 rng(4);
  for (Axis axis : {Axis::scale, Axis::time}) {
    ParameterSet<double> ps;
    SelectionModule<double> sel("sel", 6, 4, axis, 5, ps);
    sel.initialize(rng);
    testing::jitter(ps, rng, 0.5);
    Graph<double> g;
    const auto& w = g.value(sel.weights(g, g.constant(random_tensor(5, 16, 6, rng, 3.0))));
    CHECK(w.channels == 4);
    for (std::size_t s = 0; s < w.scales; ++s) {
      for (std::size_t t = 0; t < w.steps; ++t) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
          CHECK(w(s, t, i) >= 0.0);
          sum += w(s, t, i);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("zero selection parameters give exactly uniform quarter weights") {
  std::mt19937_64 rng(5);
  ParameterSet<double> ps;
  SelectionModule<double> sel("sel", 4, 4, Axis::scale, 5, ps);
  Graph<double> g;
  for (double v : g.value(sel.weights(g, g.constant(random_tensor(3, 7, 4, rng)))).data) CHECK(v == 0.25);
}

TEST_CASE("saturated logits reproduce the single selected branch") {
  std::mt19937_64 rng(6);
  ParameterSet<double> ps;
  SelectionModule<double> sel("sel", 4, 4, Axis::time, 5, ps);
  sel.initialize(rng);
  zero(sel.logit_weight());
  sel.logit_bias().values = {0.0, 0.0, 60.0, 0.0};
  Graph<double> g;
  const Var x = g.constant(random_tensor(3, 9, 4, rng));
  std::vector<Var> branches;
  for (int i = 0; i < 4; ++i) branches.push_back(g.constant(random_tensor(3, 9, 4, rng)));
  const auto& out = g.value(sel.forward(g, x, branches));
  CHECK(max_abs_diff(out, g.value(branches[2])) <= 1e-6);
  CHECK_THROWS_AS(sel.forward(g, x, {branches[0]}), ShapeError);
}

TEST_CASE("selected output lies within the branch envelope") {
  std::mt19937_64 rng(7);
  ParameterSet<double> ps;
  SelectionModule<double> sel("sel", 4, 3, Axis::scale, 5, ps);
  sel.initialize(rng);
  testing::jitter(ps, rng, 1.0);
  Graph<double> g;
  const Var x = g.constant(random_tensor(4, 6, 4, rng));
  std::vector<Var> br;
  for (int i = 0; i < 3; ++i) br.push_back(g.constant(random_tensor(4, 6, 4, rng)));
  const auto& out = g.value(sel.forward(g, x, br));
  for (std::size_t k = 0; k < out.size(); ++k) {
    double lo = 1e300, hi = -1e300;
    for (Var b : br) {
      lo = std::min(lo, g.value(b).data[k]);
      hi = std::max(hi, g.value(b).data[k]);
    }
    CHECK(out.data[k] >= lo - 1e-12);
    CHECK(out.data[k] <= hi + 1e-12);
  }
}

TEST_CASE("one identity branch with residual gives ReLU(2X)") {
  SubBlockConfig cfg;
  cfg.axis = Axis::time;
  cfg.branches = {{1, 1}};
  cfg.selection = false;
  ParameterSet<double> ps;
  SubBlock<double> sb("sb", 3, cfg, ps);
  auto& w = sb.branch_weight(0);
  zero(w);
  for (std::size_t c = 0; c < 3; ++c) w.values[c * 3 + c] = 1.0;
  std::mt19937_64 rng(8);
  const auto x = random_tensor(2, 5, 3, rng);
  Graph<double> g;
  const auto& y = g.value(sb.forward(g, g.constant(x)));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == std::max(0.0, 2.0 * x.data[i]));
}

TEST_CASE("disabled selection averages branches uniformly") {
  SubBlockConfig cfg;
  cfg.axis = Axis::scale;
  cfg.selection = false;
  cfg.residual = false;
  ParameterSet<double> ps;
  SubBlock<double> sb("sb", 3, cfg, ps);
  CHECK(sb.selection() == nullptr);
  std::mt19937_64 rng(9);
  sb.initialize(rng);
  const auto x = random_tensor(5, 6, 3, rng);
  Graph<double> g;
  const Var xv = g.constant(x);
  SelectionTrace trace;
  const auto y = g.value(sb.forward(g, xv, &trace));
  REQUIRE(trace.size() == 1);
  for (double v : g.value(trace[0].second).data) CHECK(v == 0.25);
  Tensor<double> ref(5, 6, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& b = g.value(ops::conv(g, xv, sb.branch_weight(i), &sb.branch_bias(i), Axis::scale,
                                      cfg.branches[i].dilation));
    for (std::size_t k = 0; k < ref.size(); ++k) ref.data[k] += 0.25 * b.data[k];
  }
  for (std::size_t k = 0; k < ref.size(); ++k) CHECK(y.data[k] == doctest::Approx(std::max(0.0, ref.data[k])).epsilon(1e-12));
}

TEST_CASE("sub-blocks only mix along their own axis within the receptive field") {
  std::mt19937_64 rng(10);
  for (Axis axis : {Axis::scale, Axis::time}) {
    SubBlockConfig cfg;
    cfg.axis = axis;
    ParameterSet<double> ps;
    SubBlock<double> sb("sb", 3, cfg, ps);
    sb.initialize(rng);
    testing::jitter(ps, rng, 0.3);
    auto x = random_tensor(5, 24, 3, rng);
    Graph<double> g0;
    const auto base = g0.value(sb.forward(g0, g0.constant(x)));
    x(0, 10, 1) += 5.0;
    Graph<double> g1;
    const auto& bumped = g1.value(sb.forward(g1, g1.constant(x)));
    for (std::size_t s = 0; s < 5; ++s) {
      for (std::size_t t = 0; t < 24; ++t) {
        const bool reach = axis == Axis::scale ? (t == 10 && s <= 2)
                                               : (s == 0 && t >= 8 && t <= 12);
        if (reach) continue;
        for (std::size_t c = 0; c < 3; ++c) CHECK(bumped(s, t, c) == base(s, t, c));
      }
    }
  }
}

TEST_CASE("stacked blocks preserve shape; disabling both axes is the identity") {
  std::mt19937_64 rng(11);
  const auto x = random_tensor(5, 16, 4, rng);
  {
    StbConfig cfg;
    ParameterSet<double> ps;
    ScaleTimeBlocks<double> stb(4, cfg, ps);
    stb.initialize(rng);
    Graph<double> g;
    SelectionTrace trace;
    const auto& y = g.value(stb.forward(g, g.constant(x), &trace));
    CHECK(y.scales == 5);
    CHECK(y.steps == 16);
    CHECK(y.channels == 4);
    CHECK(trace.size() == 6);
  }
  {
    StbConfig cfg;
    cfg.disable_scale = true;
    cfg.disable_time = true;
    ParameterSet<double> ps;
    ScaleTimeBlocks<double> stb(4, cfg, ps);
    CHECK(ps.count() == 0);
    Graph<double> g;
    CHECK(g.value(stb.forward(g, g.constant(x))) == x);
  }
}

TEST_CASE("unified dilation sets every rate to one; the k3 preset uses rates 1 to 4") {
  StbConfig cfg;
  cfg.unified_dilation = true;
  for (const auto& b : cfg.sub_block(Axis::time).branches) CHECK(b.dilation == 1);
  const auto k3 = k3_rates_1234_branches();
  REQUIRE(k3.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(k3[i].kernel == 3);
    CHECK(k3[i].dilation == i + 1);
  }
  SubBlockConfig even;
  even.branches = {{2, 1}};
  CHECK_THROWS(even.validate());
  StbConfig attn;
  attn.aggregation = ScaleAggregation::self_attention;
  CHECK_THROWS_AS(attn.validate(), std::logic_error);
}

TEST_CASE("scale-time block gradients under every ablation combination (S=3, T=8, D=4)") {
  for (int mask = 0; mask < 32; ++mask) {
    StbConfig cfg;
    cfg.num_blocks = 2;
    cfg.disable_scale = mask & 1;
    cfg.disable_time = mask & 2;
    cfg.disable_selection = mask & 4;
    cfg.unified_dilation = mask & 8;
    if (mask & 16) cfg.scale_branches = cfg.time_branches = k3_rates_1234_branches();
    CAPTURE(mask);
    std::mt19937_64 rng(100 + static_cast<std::uint64_t>(mask));
    ParameterSet<double> ps;
    ScaleTimeBlocks<double> stb(4, cfg, ps);
    stb.initialize(rng);
    testing::jitter(ps, rng);
    const auto x = random_tensor(3, 8, 4, rng);
    const auto probe = random_tensor(3, 8, 4, rng);
    const auto res = grad_check(ps, [&](Graph<double>& g) {
      return ops::dot(g, stb.forward(g, g.constant(x)), probe);
    });
    INFO(res.report(1e-3));
    CHECK(res.passed(1e-3));
  }
}

}  // TEST_SUITE
