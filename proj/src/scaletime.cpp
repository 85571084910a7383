#include "brnlab/scaletime.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>

#include "brnlab/data_model.hpp"

namespace brnlab {

std::vector<ResizeTap> resize_taps(std::size_t from, std::size_t to) {
  if (from < 2) throw ShapeError("resize: source length must be >= 2, got " + std::to_string(from));
  if (to < 2) throw ShapeError("resize: target length must be >= 2, got " + std::to_string(to));
  std::vector<ResizeTap> taps(to);
  const std::size_t den = to - 1;
  for (std::size_t j = 0; j < to; ++j) {
    // Integer numerator keeps grid-aligned samples exact.
    const std::size_t num = j * (from - 1);
    const std::size_t index = num / den;
    const std::size_t rem = num % den;
    if (rem == 0) {
      taps[j] = {index, 0.0};
    } else {
      taps[j] = {index, static_cast<double>(rem) / static_cast<double>(den)};
    }
  }
  return taps;
}

std::vector<double> resize_linear(std::span<const double> x, std::size_t to) {
  const auto taps = resize_taps(x.size(), to);
  std::vector<double> y(to);
  for (std::size_t j = 0; j < to; ++j) {
    const auto [i, w] = taps[j];
    y[j] = w == 0.0 ? x[i] : x[i] + w * (x[i + 1] - x[i]);
  }
  return y;
}

template <typename Real>
Var resize_time(Graph<Real>& g, Var x, std::size_t to) {
  const auto& in = g.value(x);
  auto taps = resize_taps(in.steps, to);
  const std::size_t C = in.channels;
  Tensor<Real> out(in.scales, to, C);
  for (std::size_t s = 0; s < in.scales; ++s) {
    for (std::size_t j = 0; j < to; ++j) {
      const auto [i, w] = taps[j];
      const Real wr = static_cast<Real>(w);
      for (std::size_t c = 0; c < C; ++c) {
        const Real a = in(s, i, c);
        out(s, j, c) = w == 0.0 ? a : a + wr * (in(s, i + 1, c) - a);
      }
    }
  }
  return g.record("resize", std::move(out), {x},
                  [x, taps = std::move(taps), C](Graph<Real>& gr, const Tensor<Real>& gy,
                                                 const Tensor<Real>&) {
                    if (!gr.requires_grad(x)) return;
                    auto& dx = gr.grad(x);
                    for (std::size_t s = 0; s < gy.scales; ++s) {
                      for (std::size_t j = 0; j < gy.steps; ++j) {
                        const auto [i, w] = taps[j];
                        const Real wr = static_cast<Real>(w);
                        for (std::size_t c = 0; c < C; ++c) {
                          const Real d = gy(s, j, c);
                          if (w == 0.0) {
                            dx(s, i, c) += d;
                          } else {
                            dx(s, i, c) += (Real(1) - wr) * d;
                            dx(s, i + 1, c) += wr * d;
                          }
                        }
                      }
                    }
                  });
}

// ------------------------------------------------------------------- configs

std::vector<Branch> default_branches() { return {{1, 1}, {3, 1}, {3, 2}, {5, 1}}; }

std::vector<Branch> k3_rates_1234_branches() { return {{3, 1}, {3, 2}, {3, 3}, {3, 4}}; }

void SubBlockConfig::validate() const {
  if (branches.empty()) throw std::invalid_argument("sub-block needs at least one branch");
  for (const auto& b : branches) {
    if (b.kernel % 2 == 0) throw std::invalid_argument("branch kernel sizes must be odd");
    if (b.dilation < 1) throw std::invalid_argument("branch dilation must be >= 1");
  }
  if (pool_kernel % 2 == 0) throw std::invalid_argument("selection pool kernel must be odd");
}

void StbConfig::validate() const {
  if (num_blocks < 1) throw std::invalid_argument("need at least one scale-time block");
  if (aggregation != ScaleAggregation::convolution) {
    throw std::logic_error("only convolutional scale aggregation is implemented");
  }
  sub_block(Axis::scale).validate();
  sub_block(Axis::time).validate();
}

SubBlockConfig StbConfig::sub_block(Axis axis) const {
  SubBlockConfig c;
  c.axis = axis;
  c.branches = axis == Axis::scale ? scale_branches : time_branches;
  if (unified_dilation) {
    for (auto& b : c.branches) b.dilation = 1;
  }
  c.pool_kernel = pool_kernel;
  c.selection = !disable_selection;
  c.residual = residual;
  return c;
}

// ------------------------------------------------------------------ features

template <typename Real>
ScaleTimeFeatures<Real>::ScaleTimeFeatures(std::size_t num_levels, std::size_t in_dim,
                                           std::size_t out_dim, ParameterSet<Real>& params)
    : in_dim_(in_dim) {
  for (std::size_t i = 1; i <= num_levels; ++i) {
    const auto prefix = "stf.embed" + std::to_string(i);
    weights_.push_back(&params.add(prefix + ".weight", {1, in_dim, out_dim}));
    biases_.push_back(&params.add(prefix + ".bias", {out_dim}));
  }
}

template <typename Real>
void ScaleTimeFeatures<Real>::initialize(std::mt19937_64& rng) {
  for (auto* w : weights_) fill_uniform(*w, init_bound(static_cast<double>(in_dim_), 1.0), rng);
}

template <typename Real>
Var ScaleTimeFeatures<Real>::forward(Graph<Real>& g, const std::vector<Var>& levels,
                                     std::size_t steps) const {
  if (levels.size() != weights_.size()) {
    throw ShapeError("scale-time features: expected " + std::to_string(weights_.size()) +
                     " levels, got " + std::to_string(levels.size()));
  }
  typename Graph<Real>::Scope scope(g, "stf");
  std::vector<Var> rows;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    Var e = ops::conv(g, levels[i], *weights_[i], biases_[i], Axis::time);
    rows.push_back(g.value(e).steps == steps ? e : resize_time(g, e, steps));
  }
  return ops::stack_scales(g, rows);
}

// ----------------------------------------------------------------- selection

template <typename Real>
SelectionModule<Real>::SelectionModule(const std::string& prefix, std::size_t dim,
                                       std::size_t branches, Axis axis, std::size_t pool_kernel,
                                       ParameterSet<Real>& params)
    : dim_(dim), branches_(branches), axis_(axis), pool_kernel_(pool_kernel) {
  fc1_w_ = &params.add(prefix + ".fc1.weight", {1, dim, dim});
  fc1_b_ = &params.add(prefix + ".fc1.bias", {dim});
  fc2_w_ = &params.add(prefix + ".fc2.weight", {1, dim, branches});
  fc2_b_ = &params.add(prefix + ".fc2.bias", {branches});
}

template <typename Real>
void SelectionModule<Real>::initialize(std::mt19937_64& rng) {
  fill_uniform(*fc1_w_, init_bound(static_cast<double>(dim_), 2.0), rng);
  fill_uniform(*fc2_w_, 1.0 / std::sqrt(static_cast<double>(dim_)), rng);
}

template <typename Real>
Var SelectionModule<Real>::weights(Graph<Real>& g, Var x) const {
  Var agg = ops::avg_pool(g, x, axis_, pool_kernel_);
  Var h = ops::relu(g, ops::conv(g, agg, *fc1_w_, fc1_b_, Axis::time));
  Var logits = ops::conv(g, h, *fc2_w_, fc2_b_, Axis::time);
  return ops::softmax_channels(g, logits);
}

template <typename Real>
Var SelectionModule<Real>::forward(Graph<Real>& g, Var x, const std::vector<Var>& branches,
                                   SelectionTrace* trace, const std::string& key) const {
  if (branches.size() != branches_) {
    throw ShapeError("selection module built for " + std::to_string(branches_) +
                     " branches, got " + std::to_string(branches.size()));
  }
  typename Graph<Real>::Scope scope(g, "select");
  Var w = weights(g, x);
  if (trace != nullptr) trace->emplace_back(key, w);
  return ops::mix(g, w, branches);
}

// ----------------------------------------------------------------- sub-block

namespace {

const char* axis_name(Axis axis) { return axis == Axis::scale ? "scale" : "time"; }

}  // namespace

template <typename Real>
SubBlock<Real>::SubBlock(const std::string& prefix, std::size_t dim, const SubBlockConfig& config,
                         ParameterSet<Real>& params)
    : prefix_(prefix), dim_(dim), config_(config) {
  config_.validate();
  for (std::size_t i = 0; i < config_.branches.size(); ++i) {
    const auto name = prefix + ".branch" + std::to_string(i);
    branch_w_.push_back(&params.add(name + ".weight", {config_.branches[i].kernel, dim, dim}));
    branch_b_.push_back(&params.add(name + ".bias", {dim}));
  }
  if (config_.selection) {
    selection_.emplace(prefix + ".select", dim, config_.branches.size(), config_.axis,
                       config_.pool_kernel, params);
  }
}

template <typename Real>
void SubBlock<Real>::initialize(std::mt19937_64& rng) {
  for (std::size_t i = 0; i < branch_w_.size(); ++i) {
    const double fan_in = static_cast<double>(config_.branches[i].kernel * dim_);
    fill_uniform(*branch_w_[i], init_bound(fan_in, 1.0), rng);
  }
  if (selection_) selection_->initialize(rng);
}

template <typename Real>
Var SubBlock<Real>::forward(Graph<Real>& g, Var x, SelectionTrace* trace) const {
  typename Graph<Real>::Scope scope(g, axis_name(config_.axis));
  std::vector<Var> outs;
  for (std::size_t i = 0; i < config_.branches.size(); ++i) {
    outs.push_back(ops::conv(g, x, *branch_w_[i], branch_b_[i], config_.axis,
                             config_.branches[i].dilation));
  }
  Var fused;
  if (selection_) {
    fused = selection_->forward(g, x, outs, trace, prefix_);
  } else {
    const auto& v = g.value(x);
    const std::size_t m = outs.size();
    Var w = g.constant(Tensor<Real>(v.scales, v.steps, m, Real(1) / static_cast<Real>(m)));
    if (trace != nullptr) trace->emplace_back(prefix_, w);
    fused = ops::mix(g, w, outs);
  }
  if (config_.residual) fused = ops::add(g, x, fused);
  return ops::relu(g, fused);
}

// ---------------------------------------------------------------- block stack

template <typename Real>
ScaleTimeBlocks<Real>::ScaleTimeBlocks(std::size_t dim, const StbConfig& config,
                                       ParameterSet<Real>& params)
    : config_(config) {
  config_.validate();
  scale_.resize(config_.num_blocks);
  time_.resize(config_.num_blocks);
  for (std::size_t n = 0; n < config_.num_blocks; ++n) {
    const auto prefix = "stb" + std::to_string(n + 1);
    if (!config_.disable_scale) {
      scale_[n].emplace(prefix + ".scale", dim, config_.sub_block(Axis::scale), params);
    }
    if (!config_.disable_time) {
      time_[n].emplace(prefix + ".time", dim, config_.sub_block(Axis::time), params);
    }
  }
}

template <typename Real>
void ScaleTimeBlocks<Real>::initialize(std::mt19937_64& rng) {
  for (std::size_t n = 0; n < config_.num_blocks; ++n) {
    if (scale_[n]) scale_[n]->initialize(rng);
    if (time_[n]) time_[n]->initialize(rng);
  }
}

template <typename Real>
Var ScaleTimeBlocks<Real>::forward(Graph<Real>& g, Var stf, SelectionTrace* trace) const {
  Var h = stf;
  for (std::size_t n = 0; n < config_.num_blocks; ++n) {
    typename Graph<Real>::Scope scope(g, "stb" + std::to_string(n + 1));
    if (scale_[n]) h = scale_[n]->forward(g, h, trace);
    if (time_[n]) h = time_[n]->forward(g, h, trace);
  }
  return h;
}

template Var resize_time<float>(Graph<float>&, Var, std::size_t);
template Var resize_time<double>(Graph<double>&, Var, std::size_t);
template class ScaleTimeFeatures<float>;
template class ScaleTimeFeatures<double>;
template class SelectionModule<float>;
template class SelectionModule<double>;
template class SubBlock<float>;
template class SubBlock<double>;
template class ScaleTimeBlocks<float>;
template class ScaleTimeBlocks<double>;

}  // namespace brnlab
