#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "brnlab/autograd.hpp"

namespace brnlab {

// ------------------------------------------------------------ interpolation

/// Source index and blend weight for one output sample of an endpoint-aligned
/// linear resize: y[j] = x[index] + weight * (x[index + 1] - x[index]).
struct ResizeTap {
  std::size_t index;
  double weight;
};

std::vector<ResizeTap> resize_taps(std::size_t from, std::size_t to);

/// Endpoint-aligned linear interpolation of one channel to `to` samples.
std::vector<double> resize_linear(std::span<const double> x, std::size_t to);

/// Per-channel time resize of every scale row of `x`.
template <typename Real>
Var resize_time(Graph<Real>& g, Var x, std::size_t to);

// -------------------------------------------------------- scale-time blocks

struct Branch {
  std::size_t kernel = 1;
  std::size_t dilation = 1;

  friend bool operator==(const Branch&, const Branch&) = default;
};

/// {(1,1), (3,1), (3,2), (5,1)}
std::vector<Branch> default_branches();
/// Kernel 3 with dilation rates 1, 2, 3, 4.
std::vector<Branch> k3_rates_1234_branches();

struct SubBlockConfig {
  Axis axis = Axis::scale;
  std::vector<Branch> branches = default_branches();
  std::size_t pool_kernel = 5;
  bool selection = true;  // false: uniform 1/m averaging of branch outputs
  bool residual = true;

  void validate() const;
};

/// How scale information is fused. Only convolution is implemented; the
/// other values name ablation variants that are rejected at construction.
enum class ScaleAggregation { convolution, self_attention, merged_kernel };

struct StbConfig {
  std::size_t num_blocks = 3;
  std::vector<Branch> scale_branches = default_branches();
  std::vector<Branch> time_branches = default_branches();
  std::size_t pool_kernel = 5;
  bool disable_scale = false;
  bool disable_time = false;
  bool disable_selection = false;
  bool unified_dilation = false;
  bool residual = true;
  ScaleAggregation aggregation = ScaleAggregation::convolution;

  void validate() const;
  SubBlockConfig sub_block(Axis axis) const;
};

/// Selection weights recorded during a forward pass, keyed like "stb3.scale".
using SelectionTrace = std::vector<std::pair<std::string, Var>>;

/// Kernel-1 embedding of every backbone level, resized to T and stacked into S x T x D.
template <typename Real>
class ScaleTimeFeatures {
 public:
  ScaleTimeFeatures(std::size_t num_levels, std::size_t in_dim, std::size_t out_dim,
                    ParameterSet<Real>& params);

  void initialize(std::mt19937_64& rng);
  Var forward(Graph<Real>& g, const std::vector<Var>& levels, std::size_t steps) const;

 private:
  std::size_t in_dim_;
  std::vector<Parameter<Real>*> weights_;
  std::vector<Parameter<Real>*> biases_;
};

/// Attention-style pooling over m branch outputs: zero-padded average pooling
/// of the input along the block axis, two kernel-1 convolutions (D->D, ReLU,
/// D->m), softmax over branches, then a per-position convex combination.
template <typename Real>
class SelectionModule {
 public:
  SelectionModule(const std::string& prefix, std::size_t dim, std::size_t branches, Axis axis,
                  std::size_t pool_kernel, ParameterSet<Real>& params);

  void initialize(std::mt19937_64& rng);
  /// S x T x m softmax weights.
  Var weights(Graph<Real>& g, Var x) const;
  Var forward(Graph<Real>& g, Var x, const std::vector<Var>& branches,
              SelectionTrace* trace = nullptr, const std::string& key = {}) const;

  Parameter<Real>& hidden_weight() { return *fc1_w_; }
  Parameter<Real>& hidden_bias() { return *fc1_b_; }
  Parameter<Real>& logit_weight() { return *fc2_w_; }
  Parameter<Real>& logit_bias() { return *fc2_b_; }

 private:
  std::size_t dim_;
  std::size_t branches_;
  Axis axis_;
  std::size_t pool_kernel_;
  Parameter<Real>* fc1_w_;
  Parameter<Real>* fc1_b_;
  Parameter<Real>* fc2_w_;
  Parameter<Real>* fc2_b_;
};

/// Parallel dilated convolutions along one axis fused by selection, then ReLU(X + fused).
template <typename Real>
class SubBlock {
 public:
  SubBlock(const std::string& prefix, std::size_t dim, const SubBlockConfig& config,
           ParameterSet<Real>& params);

  void initialize(std::mt19937_64& rng);
  Var forward(Graph<Real>& g, Var x, SelectionTrace* trace = nullptr) const;

  const SubBlockConfig& config() const { return config_; }
  Parameter<Real>& branch_weight(std::size_t i) { return *branch_w_[i]; }
  Parameter<Real>& branch_bias(std::size_t i) { return *branch_b_[i]; }
  SelectionModule<Real>* selection() { return selection_.has_value() ? &*selection_ : nullptr; }

 private:
  std::string prefix_;
  std::size_t dim_;
  SubBlockConfig config_;
  std::vector<Parameter<Real>*> branch_w_;
  std::vector<Parameter<Real>*> branch_b_;
  std::optional<SelectionModule<Real>> selection_;
};

/// N blocks of (scale sub-block, time sub-block); disabled sub-blocks are identities.
template <typename Real>
class ScaleTimeBlocks {
 public:
  ScaleTimeBlocks(std::size_t dim, const StbConfig& config, ParameterSet<Real>& params);

  void initialize(std::mt19937_64& rng);
  Var forward(Graph<Real>& g, Var stf, SelectionTrace* trace = nullptr) const;

  const StbConfig& config() const { return config_; }

 private:
  StbConfig config_;
  std::vector<std::optional<SubBlock<Real>>> scale_;
  std::vector<std::optional<SubBlock<Real>>> time_;
};

}  // namespace brnlab
