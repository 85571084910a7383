#include "brnlab/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace brnlab {

void BackboneConfig::validate() const {
  if (kind == BackboneKind::transformer) {
    throw std::logic_error("transformer backbone is not implemented; use the convolution backbone");
  }
  if (num_levels < 2) throw std::invalid_argument("backbone needs at least 2 levels");
  if (hidden_dim < 1 || input_dim < 1) throw std::invalid_argument("backbone dims must be >= 1");
  if (kernel_size % 2 == 0) throw std::invalid_argument("backbone kernel size must be odd");
}

void check_divisible(std::size_t input_length, std::size_t num_levels) {
  const std::size_t factor = std::size_t{1} << num_levels;
  if (input_length == 0 || input_length % factor != 0) {
    throw ShapeError("input length " + std::to_string(input_length) + " must be divisible by 2^" +
                     std::to_string(num_levels) + " = " + std::to_string(factor));
  }
}

std::vector<std::size_t> level_lengths(std::size_t input_length, std::size_t num_levels) {
  check_divisible(input_length, num_levels);
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i <= num_levels; ++i) out.push_back(input_length >> i);
  return out;
}

template <typename Real>
Tensor<Real> to_tensor(const FeatureSequence& seq) {
  Tensor<Real> t(1, seq.length, seq.dim);
  for (std::size_t i = 0; i < seq.values.size(); ++i) t.data[i] = static_cast<Real>(seq.values[i]);
  return t;
}

template <typename Real>
Backbone<Real>::Backbone(const BackboneConfig& config, ParameterSet<Real>& params)
    : config_(config) {
  config_.validate();
  const auto D = config_.hidden_dim;
  proj_w_ = &params.add("backbone.proj.weight", {1, config_.input_dim, D});
  proj_b_ = &params.add("backbone.proj.bias", {D});
  for (std::size_t i = 1; i <= config_.num_levels; ++i) {
    const auto prefix = "backbone.level" + std::to_string(i);
    level_w_.push_back(&params.add(prefix + ".conv.weight", {config_.kernel_size, D, D}));
    level_b_.push_back(&params.add(prefix + ".conv.bias", {D}));
  }
}

template <typename Real>
void Backbone<Real>::initialize(std::mt19937_64& rng) {
  fill_uniform(*proj_w_, init_bound(static_cast<double>(config_.input_dim), 1.0), rng);
  const double fan_in = static_cast<double>(config_.kernel_size * config_.hidden_dim);
  for (auto* w : level_w_) fill_uniform(*w, init_bound(fan_in, 2.0), rng);
}

template <typename Real>
std::vector<Var> Backbone<Real>::forward(Graph<Real>& g, Var input) const {
  const auto& x = g.value(input);
  if (x.channels != config_.input_dim) {
    throw ShapeError("backbone expects " + std::to_string(config_.input_dim) +
                     " input channels, got " + std::to_string(x.channels));
  }
  check_divisible(x.steps, config_.num_levels);
  typename Graph<Real>::Scope scope(g, "backbone");
  Var h = ops::conv(g, input, *proj_w_, proj_b_, Axis::time);
  std::vector<Var> levels;
  for (std::size_t i = 0; i < config_.num_levels; ++i) {
    typename Graph<Real>::Scope level(g, "level" + std::to_string(i + 1));
    h = ops::conv(g, h, *level_w_[i], level_b_[i], Axis::time);
    h = ops::relu(g, h);
    h = ops::max_pool_time(g, h);
    levels.push_back(h);
  }
  return levels;
}

template Tensor<float> to_tensor<float>(const FeatureSequence&);
template Tensor<double> to_tensor<double>(const FeatureSequence&);
template class Backbone<float>;
template class Backbone<double>;

}  // namespace brnlab
