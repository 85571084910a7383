#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "brnlab/tensor.hpp"

namespace brnlab {

/// A named, trainable array. Convolution kernels are shaped
/// {kernel, in_channels, out_channels}; biases {out_channels}.
template <typename Real>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<Real> values;
  std::size_t index = 0;

  std::size_t size() const { return values.size(); }
};

/// Owns all parameters of a model. Element addresses are stable, so layers
/// may keep plain pointers into the set.
template <typename Real>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter<Real>& add(std::string name, std::vector<std::size_t> shape);

  Parameter<Real>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *params_[i]; }
  Parameter<Real>* find(std::string_view name);
  const Parameter<Real>* find(std::string_view name) const;

  std::size_t count() const { return params_.size(); }
  std::size_t total_size() const;

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
};

/// Per-parameter gradient buffers aligned with a ParameterSet by index.
/// Buffers stay empty until something writes to them.
template <typename Real>
struct Gradients {
  std::vector<std::vector<Real>> values;

  explicit Gradients(std::size_t num_params = 0) : values(num_params) {}
  std::vector<Real>& at(const Parameter<Real>& p);
  void add(const Gradients& other);
  void scale(Real factor);
};

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Each recorded node keeps its value and a closure that
/// pushes its output gradient to its parents and to parameter gradients.
template <typename Real>
class Graph {
 public:
  /// Receives the node's output gradient and its output value.
  using BackwardFn = std::function<void(Graph&, const Tensor<Real>&, const Tensor<Real>&)>;

  explicit Graph(std::size_t num_params = 0) : grads_(num_params) {}

  Var constant(Tensor<Real> value);
  Var variable(Tensor<Real> value);
  Var record(std::string_view op, Tensor<Real> value, std::vector<Var> parents, BackwardFn fn,
             bool uses_params = false);

  const Tensor<Real>& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<Real>& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.data.empty(); }

  /// Seeds d(out)/d(out) = 1 for a single-element node and runs the tape backwards.
  void backward(Var out);

  std::vector<Real>& param_grad(const Parameter<Real>& p) { return grads_.at(p); }
  Gradients<Real>& gradients() { return grads_; }
  const Gradients<Real>& gradients() const { return grads_; }

  /// Name of the first recorded node holding a NaN or infinity.
  std::optional<std::string> first_non_finite() const;
  std::string node_name(Var v) const { return nodes_[v.id].name; }
  std::size_t size() const { return nodes_.size(); }

  /// RAII name prefix applied to nodes recorded while alive.
  class Scope {
   public:
    Scope(Graph& g, std::string_view name) : g_(g), saved_(g.scope_) {
      g_.scope_ += std::string(name) + "/";
    }
    ~Scope() { g_.scope_ = saved_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& g_;
    std::string saved_;
  };

 private:
  struct Node {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
    std::vector<Var> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  Gradients<Real> grads_;
  std::string scope_;
};

// Generic differentiable operations. Shapes follow Tensor's scale x time x channel layout.
namespace ops {

/// "Same" zero-padded dilated convolution along `axis`; kernel shape {k, Cin, Cout}, k odd.
template <typename Real>
Var conv(Graph<Real>& g, Var x, const Parameter<Real>& weight, const Parameter<Real>* bias,
         Axis axis, std::size_t dilation = 1);

template <typename Real>
Var relu(Graph<Real>& g, Var x);

template <typename Real>
Var add(Graph<Real>& g, Var a, Var b);

template <typename Real>
Var scale(Graph<Real>& g, Var x, Real factor);

/// Kernel-2, stride-2 max pooling along time.
template <typename Real>
Var max_pool_time(Graph<Real>& g, Var x);

/// Zero-padded average pooling with stride 1 along `axis`; the divisor is always `kernel`.
template <typename Real>
Var avg_pool(Graph<Real>& g, Var x, Axis axis, std::size_t kernel);

/// Softmax over the channel dimension at every position.
template <typename Real>
Var softmax_channels(Graph<Real>& g, Var x);

/// Sum_i weights[..., i] * branches[i], weights broadcast over channels.
template <typename Real>
Var mix(Graph<Real>& g, Var weights, const std::vector<Var>& branches);

/// Stacks single-row tensors of equal length and width along the scale axis.
template <typename Real>
Var stack_scales(Graph<Real>& g, const std::vector<Var>& rows);

/// Scalar sum(x * probe); used to reduce tensors for gradient checks.
template <typename Real>
Var dot(Graph<Real>& g, Var x, const Tensor<Real>& probe);

/// Scalar wa * a + wb * b for single-element nodes.
template <typename Real>
Var combine(Graph<Real>& g, Var a, Real wa, Var b, Real wb);

}  // namespace ops

/// Uniform bound that keeps activation variance across a layer: gain 2 in
/// front of a ReLU, 1 for a linear layer.
inline double init_bound(double fan_in, double gain) { return std::sqrt(3.0 * gain / fan_in); }

/// Centered uniform initialization in [-bound, bound].
template <typename Real>
void fill_uniform(Parameter<Real>& p, double bound, std::mt19937_64& rng);

}  // namespace brnlab
