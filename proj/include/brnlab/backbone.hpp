#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "brnlab/autograd.hpp"
#include "brnlab/data_model.hpp"

namespace brnlab {

enum class BackboneKind { convolution, transformer };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::convolution;
  std::size_t input_dim = 16;
  std::size_t hidden_dim = 256;
  std::size_t num_levels = 5;
  std::size_t kernel_size = 3;

  void validate() const;
};

/// Lengths of B_1..B_S for an input of `input_length` steps.
std::vector<std::size_t> level_lengths(std::size_t input_length, std::size_t num_levels);

/// Throws ShapeError unless `input_length` is divisible by 2^num_levels.
void check_divisible(std::size_t input_length, std::size_t num_levels);

/// Feature sequence as a single-row tensor.
template <typename Real>
Tensor<Real> to_tensor(const FeatureSequence& seq);

/// Projection followed by `num_levels` layers of conv -> ReLU -> stride-2 max pool.
/// Only the convolutional variant exists; the transformer kind is rejected.
template <typename Real>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, ParameterSet<Real>& params);

  void initialize(std::mt19937_64& rng);

  /// One 1 x (T_in / 2^i) x D node per level, finest first.
  std::vector<Var> forward(Graph<Real>& g, Var input) const;

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  Parameter<Real>* proj_w_;
  Parameter<Real>* proj_b_;
  std::vector<Parameter<Real>*> level_w_;
  std::vector<Parameter<Real>*> level_b_;
};

}  // namespace brnlab
