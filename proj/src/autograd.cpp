#include "brnlab/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

#include "brnlab/data_model.hpp"

namespace brnlab {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;

// ---------------------------------------------------------------- parameters

template <typename Real>
Parameter<Real>& ParameterSet<Real>::add(std::string name, std::vector<std::size_t> shape) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter " + name);
  auto p = std::make_unique<Parameter<Real>>();
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  p->name = std::move(name);
  p->shape = std::move(shape);
  p->values.assign(n, Real(0));
  p->index = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename Real>
Parameter<Real>* ParameterSet<Real>::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename Real>
const Parameter<Real>* ParameterSet<Real>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename Real>
std::size_t ParameterSet<Real>::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

template <typename Real>
std::vector<Real>& Gradients<Real>::at(const Parameter<Real>& p) {
  if (p.index >= values.size()) values.resize(p.index + 1);
  auto& buf = values[p.index];
  if (buf.empty()) buf.assign(p.size(), Real(0));
  return buf;
}

template <typename Real>
void Gradients<Real>::add(const Gradients& other) {
  if (other.values.size() > values.size()) values.resize(other.values.size());
  for (std::size_t i = 0; i < other.values.size(); ++i) {
    const auto& src = other.values[i];
    if (src.empty()) continue;
    auto& dst = values[i];
    if (dst.empty()) {
      dst = src;
      continue;
    }
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
}

template <typename Real>
void Gradients<Real>::scale(Real factor) {
  for (auto& buf : values) {
    for (auto& v : buf) v *= factor;
  }
}

template <typename Real>
void fill_uniform(Parameter<Real>& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.values) v = static_cast<Real>(dist(rng));
}

// --------------------------------------------------------------------- graph

template <typename Real>
Var Graph<Real>::constant(Tensor<Real> value) {
  nodes_.push_back({scope_ + "constant", std::move(value), {}, {}, {}, false});
  return {nodes_.size() - 1};
}

template <typename Real>
Var Graph<Real>::variable(Tensor<Real> value) {
  nodes_.push_back({scope_ + "variable", std::move(value), {}, {}, {}, true});
  return {nodes_.size() - 1};
}

template <typename Real>
Var Graph<Real>::record(std::string_view op, Tensor<Real> value, std::vector<Var> parents,
                        BackwardFn fn, bool uses_params) {
  bool needs = uses_params;
  for (auto p : parents) needs = needs || nodes_[p.id].requires_grad;
  Node node{scope_ + std::string(op), std::move(value), {}, std::move(parents), {}, needs};
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return {nodes_.size() - 1};
}

template <typename Real>
Tensor<Real>& Graph<Real>::grad(Var v) {
  auto& node = nodes_[v.id];
  if (node.grad.data.empty()) {
    node.grad = Tensor<Real>(node.value.scales, node.value.steps, node.value.channels);
  }
  return node.grad;
}

template <typename Real>
void Graph<Real>::backward(Var out) {
  if (nodes_[out.id].value.size() != 1) {
    throw ShapeError("backward() needs a single-element output, got " +
                     nodes_[out.id].value.shape_string());
  }
  grad(out).data[0] = Real(1);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || !node.backward || node.grad.data.empty()) continue;
    node.backward(*this, node.grad, node.value);
  }
}

template <typename Real>
std::optional<std::string> Graph<Real>::first_non_finite() const {
  for (const auto& node : nodes_) {
    for (Real v : node.value.data) {
      if (!std::isfinite(v)) return node.name + " [" + node.value.shape_string() + "]";
    }
  }
  return std::nullopt;
}

// ----------------------------------------------------------------------- ops

namespace ops {

namespace {

struct ShiftedRange {
  bool empty;
  std::size_t lo;
  std::size_t hi;
};

// Positions a in [lo, hi) for which a + offset stays inside [0, extent).
ShiftedRange shifted_range(std::size_t extent, long offset) {
  const long e = static_cast<long>(extent);
  const long lo = std::max(0L, -offset);
  const long hi = std::min(e, e - offset);
  if (hi <= lo) return {true, 0, 0};
  return {false, static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void require_same(const char* op, bool ok, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": shape mismatch " + detail);
}

}  // namespace

template <typename Real>
Var conv(Graph<Real>& g, Var x, const Parameter<Real>& weight, const Parameter<Real>* bias,
         Axis axis, std::size_t dilation) {
  const auto& in = g.value(x);
  if (weight.shape.size() != 3) throw ShapeError("conv: weight " + weight.name + " is not rank 3");
  const std::size_t k = weight.shape[0];
  const std::size_t cin = weight.shape[1];
  const std::size_t cout = weight.shape[2];
  if (k % 2 == 0) throw ShapeError("conv: kernel size must be odd (" + weight.name + ")");
  if (dilation < 1) throw ShapeError("conv: dilation must be >= 1");
  require_same("conv", in.channels == cin,
               in.shape_string() + " vs kernel " + weight.name + " with Cin=" + std::to_string(cin));
  if (bias != nullptr && bias->size() != cout) throw ShapeError("conv: bias size mismatch");

  const auto layout = axis_layout(in, axis);
  const std::size_t rows = in.positions();
  // Eigen works only on matrices it allocated itself. Vectorized kernels split
  // work by address alignment, so operating on arbitrary heap buffers would make
  // the rounding depend on allocation history.
  const RowMat<Real> xin = ConstMatMap<Real>(in.data.data(), rows, cin);
  RowMat<Real> y(rows, cout);
  if (bias != nullptr) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cout; ++c) y(r, c) = bias->values[c];
    }
  } else {
    y.setZero();
  }
  const long half = static_cast<long>(k / 2);
  for (std::size_t j = 0; j < k; ++j) {
    const long offset = (static_cast<long>(j) - half) * static_cast<long>(dilation);
    const auto range = shifted_range(layout.extent, offset);
    if (range.empty) continue;
    const RowMat<Real> w = ConstMatMap<Real>(weight.values.data() + j * cin * cout, cin, cout);
    const std::size_t n = (range.hi - range.lo) * layout.inner;
    for (std::size_t o = 0; o < layout.outer; ++o) {
      const std::size_t r_out = (o * layout.extent + range.lo) * layout.inner;
      const std::size_t r_in = r_out + static_cast<std::size_t>(offset * static_cast<long>(layout.inner));
      y.middleRows(r_out, n).noalias() += xin.middleRows(r_in, n) * w;
    }
  }
  Tensor<Real> out(in.scales, in.steps, cout);
  std::copy(y.data(), y.data() + y.size(), out.data.begin());

  const Parameter<Real>* wp = &weight;
  return g.record(
      "conv", std::move(out), {x},
      [x, wp, bias, dilation, k, cin, cout, layout, rows, half](
          Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
        const RowMat<Real> dy = ConstMatMap<Real>(gy.data.data(), rows, cout);
        const auto& in = gr.value(x);
        const RowMat<Real> xin = ConstMatMap<Real>(in.data.data(), rows, cin);
        const bool want_dx = gr.requires_grad(x);
        RowMat<Real> dx;
        if (want_dx) dx.setZero(rows, cin);
        // Bias first: fetching a buffer may grow the gradient table and
        // invalidate references taken earlier.
        if (bias != nullptr) {
          auto& db = gr.param_grad(*bias);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cout; ++c) db[c] += dy(r, c);
          }
        }
        auto& dw_buf = gr.param_grad(*wp);
        RowMat<Real> dw(cin, cout);
        for (std::size_t j = 0; j < k; ++j) {
          const long offset = (static_cast<long>(j) - half) * static_cast<long>(dilation);
          const auto range = shifted_range(layout.extent, offset);
          if (range.empty) continue;
          const RowMat<Real> w = ConstMatMap<Real>(wp->values.data() + j * cin * cout, cin, cout);
          dw.setZero();
          const std::size_t n = (range.hi - range.lo) * layout.inner;
          for (std::size_t o = 0; o < layout.outer; ++o) {
            const std::size_t r_out = (o * layout.extent + range.lo) * layout.inner;
            const std::size_t r_in =
                r_out + static_cast<std::size_t>(offset * static_cast<long>(layout.inner));
            dw.noalias() += xin.middleRows(r_in, n).transpose() * dy.middleRows(r_out, n);
            if (want_dx) dx.middleRows(r_in, n).noalias() += dy.middleRows(r_out, n) * w.transpose();
          }
          Real* dst = dw_buf.data() + j * cin * cout;
          for (std::size_t i = 0; i < cin * cout; ++i) dst[i] += dw.data()[i];
        }
        if (want_dx) {
          auto& gx = gr.grad(x).data;
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dx.data()[i];
        }
      },
      true);
}

template <typename Real>
Var relu(Graph<Real>& g, Var x) {
  Tensor<Real> out = g.value(x);
  for (auto& v : out.data) v = v > Real(0) ? v : Real(0);
  return g.record("relu", std::move(out), {x}, [x](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
    if (!gr.requires_grad(x)) return;
    const auto& in = gr.value(x);
    auto& dx = gr.grad(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in.data[i] > Real(0)) dx.data[i] += gy.data[i];
    }
  });
}

template <typename Real>
Var add(Graph<Real>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  require_same("add", va.same_shape(vb), va.shape_string() + " vs " + vb.shape_string());
  Tensor<Real> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
  return g.record("add", std::move(out), {a, b}, [a, b](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
    for (Var p : {a, b}) {
      if (!gr.requires_grad(p)) continue;
      auto& d = gr.grad(p);
      for (std::size_t i = 0; i < gy.size(); ++i) d.data[i] += gy.data[i];
    }
  });
}

template <typename Real>
Var scale(Graph<Real>& g, Var x, Real factor) {
  Tensor<Real> out = g.value(x);
  for (auto& v : out.data) v *= factor;
  return g.record("scale", std::move(out), {x},
                  [x, factor](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
                    if (!gr.requires_grad(x)) return;
                    auto& d = gr.grad(x);
                    for (std::size_t i = 0; i < gy.size(); ++i) d.data[i] += factor * gy.data[i];
                  });
}

template <typename Real>
Var max_pool_time(Graph<Real>& g, Var x) {
  const auto& in = g.value(x);
  if (in.steps % 2 != 0) {
    throw ShapeError("max_pool_time: length " + std::to_string(in.steps) + " is not even");
  }
  const std::size_t half = in.steps / 2;
  Tensor<Real> out(in.scales, half, in.channels);
  for (std::size_t s = 0; s < in.scales; ++s) {
    for (std::size_t t = 0; t < half; ++t) {
      for (std::size_t c = 0; c < in.channels; ++c) {
        out(s, t, c) = std::max(in(s, 2 * t, c), in(s, 2 * t + 1, c));
      }
    }
  }
  return g.record("max_pool", std::move(out), {x}, [x](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
    if (!gr.requires_grad(x)) return;
    const auto& in = gr.value(x);
    auto& dx = gr.grad(x);
    for (std::size_t s = 0; s < gy.scales; ++s) {
      for (std::size_t t = 0; t < gy.steps; ++t) {
        for (std::size_t c = 0; c < gy.channels; ++c) {
          // Ties route to the earlier sample.
          const std::size_t src = in(s, 2 * t, c) >= in(s, 2 * t + 1, c) ? 2 * t : 2 * t + 1;
          dx(s, src, c) += gy(s, t, c);
        }
      }
    }
  });
}

template <typename Real>
Var avg_pool(Graph<Real>& g, Var x, Axis axis, std::size_t kernel) {
  if (kernel % 2 == 0) throw ShapeError("avg_pool: kernel must be odd");
  const auto& in = g.value(x);
  const auto layout = axis_layout(in, axis);
  const long radius = static_cast<long>(kernel / 2);
  const Real inv = Real(1) / static_cast<Real>(kernel);
  const std::size_t C = in.channels;
  Tensor<Real> out(in.scales, in.steps, C);

  auto for_each_tap = [layout, radius, C](auto&& fn) {
    const long extent = static_cast<long>(layout.extent);
    for (std::size_t o = 0; o < layout.outer; ++o) {
      for (long a = 0; a < extent; ++a) {
        for (long j = -radius; j <= radius; ++j) {
          const long src = a + j;
          if (src < 0 || src >= extent) continue;
          for (std::size_t i = 0; i < layout.inner; ++i) {
            const std::size_t dst_row = (o * layout.extent + a) * layout.inner + i;
            const std::size_t src_row = (o * layout.extent + src) * layout.inner + i;
            fn(dst_row * C, src_row * C);
          }
        }
      }
    }
  };

  for_each_tap([&](std::size_t dst, std::size_t src) {
    for (std::size_t c = 0; c < C; ++c) out.data[dst + c] += inv * in.data[src + c];
  });
  return g.record("avg_pool", std::move(out), {x},
                  [x, for_each_tap, inv, C](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
                    if (!gr.requires_grad(x)) return;
                    auto& dx = gr.grad(x);
                    for_each_tap([&](std::size_t dst, std::size_t src) {
                      for (std::size_t c = 0; c < C; ++c) dx.data[src + c] += inv * gy.data[dst + c];
                    });
                  });
}

template <typename Real>
Var softmax_channels(Graph<Real>& g, Var x) {
  Tensor<Real> out = g.value(x);
  const std::size_t C = out.channels;
  for (std::size_t p = 0; p < out.positions(); ++p) {
    Real* row = out.data.data() + p * C;
    const Real m = *std::max_element(row, row + C);
    Real sum = 0;
    for (std::size_t c = 0; c < C; ++c) {
      row[c] = std::exp(row[c] - m);
      sum += row[c];
    }
    for (std::size_t c = 0; c < C; ++c) row[c] /= sum;
  }
  return g.record("softmax", std::move(out), {x},
                  [x, C](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>& y) {
                    if (!gr.requires_grad(x)) return;
                    auto& dx = gr.grad(x);
                    for (std::size_t p = 0; p < y.positions(); ++p) {
                      const Real* yr = y.data.data() + p * C;
                      const Real* gr_row = gy.data.data() + p * C;
                      Real dotp = 0;
                      for (std::size_t c = 0; c < C; ++c) dotp += yr[c] * gr_row[c];
                      for (std::size_t c = 0; c < C; ++c) {
                        dx.data[p * C + c] += yr[c] * (gr_row[c] - dotp);
                      }
                    }
                  });
}

template <typename Real>
Var mix(Graph<Real>& g, Var weights, const std::vector<Var>& branches) {
  const auto& w = g.value(weights);
  const std::size_t m = branches.size();
  if (m == 0) throw ShapeError("mix: no branches");
  if (w.channels != m) {
    throw ShapeError("mix: " + std::to_string(w.channels) + " weights for " + std::to_string(m) +
                     " branches");
  }
  const auto& first = g.value(branches[0]);
  if (w.scales != first.scales || w.steps != first.steps) {
    throw ShapeError("mix: weight map " + w.shape_string() + " vs branch " + first.shape_string());
  }
  for (auto b : branches) {
    require_same("mix", g.value(b).same_shape(first), g.value(b).shape_string());
  }
  const std::size_t C = first.channels;
  Tensor<Real> out(first.scales, first.steps, C);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& o = g.value(branches[i]);
    for (std::size_t p = 0; p < out.positions(); ++p) {
      const Real a = w.data[p * m + i];
      for (std::size_t c = 0; c < C; ++c) out.data[p * C + c] += a * o.data[p * C + c];
    }
  }
  std::vector<Var> parents = branches;
  parents.push_back(weights);
  return g.record("mix", std::move(out), std::move(parents),
                  [weights, branches, m, C](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
                    const auto& w = gr.value(weights);
                    const bool want_w = gr.requires_grad(weights);
                    for (std::size_t i = 0; i < m; ++i) {
                      const Var b = branches[i];
                      const auto& o = gr.value(b);
                      const bool want_b = gr.requires_grad(b);
                      Tensor<Real>* db = want_b ? &gr.grad(b) : nullptr;
                      Tensor<Real>* dw = want_w ? &gr.grad(weights) : nullptr;
                      for (std::size_t p = 0; p < gy.positions(); ++p) {
                        const Real a = w.data[p * m + i];
                        Real acc = 0;
                        for (std::size_t c = 0; c < C; ++c) {
                          const Real gyc = gy.data[p * C + c];
                          if (db) db->data[p * C + c] += a * gyc;
                          acc += o.data[p * C + c] * gyc;
                        }
                        if (dw) dw->data[p * m + i] += acc;
                      }
                    }
                  });
}

template <typename Real>
Var stack_scales(Graph<Real>& g, const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack_scales: no rows");
  const auto& first = g.value(rows[0]);
  for (auto r : rows) {
    const auto& v = g.value(r);
    if (v.scales != 1 || v.steps != first.steps || v.channels != first.channels) {
      throw ShapeError("stack_scales: row " + v.shape_string() + " vs " + first.shape_string());
    }
  }
  const std::size_t row_size = first.size();
  Tensor<Real> out(rows.size(), first.steps, first.channels);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto& v = g.value(rows[s]);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<long>(s * row_size));
  }
  return g.record("stack", std::move(out), rows,
                  [rows, row_size](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
                    for (std::size_t s = 0; s < rows.size(); ++s) {
                      if (!gr.requires_grad(rows[s])) continue;
                      auto& d = gr.grad(rows[s]);
                      for (std::size_t i = 0; i < row_size; ++i) d.data[i] += gy.data[s * row_size + i];
                    }
                  });
}

template <typename Real>
Var dot(Graph<Real>& g, Var x, const Tensor<Real>& probe) {
  const auto& v = g.value(x);
  require_same("dot", v.size() == probe.size(), v.shape_string() + " vs " + probe.shape_string());
  Real acc = 0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v.data[i] * probe.data[i];
  Tensor<Real> out(1, 1, 1, acc);
  return g.record("dot", std::move(out), {x}, [x, probe](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
    if (!gr.requires_grad(x)) return;
    auto& d = gr.grad(x);
    for (std::size_t i = 0; i < probe.size(); ++i) d.data[i] += gy.data[0] * probe.data[i];
  });
}

template <typename Real>
Var combine(Graph<Real>& g, Var a, Real wa, Var b, Real wb) {
  if (g.value(a).size() != 1 || g.value(b).size() != 1) throw ShapeError("combine: scalars only");
  Tensor<Real> out(1, 1, 1, wa * g.value(a).data[0] + wb * g.value(b).data[0]);
  return g.record("combine", std::move(out), {a, b},
                  [a, b, wa, wb](Graph<Real>& gr, const Tensor<Real>& gy, const Tensor<Real>&) {
                    if (gr.requires_grad(a)) gr.grad(a).data[0] += wa * gy.data[0];
                    if (gr.requires_grad(b)) gr.grad(b).data[0] += wb * gy.data[0];
                  });
}

}  // namespace ops

#define BRNLAB_INSTANTIATE(Real)                                                              \
  template class ParameterSet<Real>;                                                          \
  template struct Gradients<Real>;                                                            \
  template class Graph<Real>;                                                                 \
  template void fill_uniform<Real>(Parameter<Real>&, double, std::mt19937_64&);               \
  template Var ops::conv<Real>(Graph<Real>&, Var, const Parameter<Real>&,                     \
                               const Parameter<Real>*, Axis, std::size_t);                    \
  template Var ops::relu<Real>(Graph<Real>&, Var);                                            \
  template Var ops::add<Real>(Graph<Real>&, Var, Var);                                        \
  template Var ops::scale<Real>(Graph<Real>&, Var, Real);                                     \
  template Var ops::max_pool_time<Real>(Graph<Real>&, Var);                                   \
  template Var ops::avg_pool<Real>(Graph<Real>&, Var, Axis, std::size_t);                     \
  template Var ops::softmax_channels<Real>(Graph<Real>&, Var);                                \
  template Var ops::mix<Real>(Graph<Real>&, Var, const std::vector<Var>&);                    \
  template Var ops::stack_scales<Real>(Graph<Real>&, const std::vector<Var>&);                 \
  template Var ops::dot<Real>(Graph<Real>&, Var, const Tensor<Real>&);                        \
  template Var ops::combine<Real>(Graph<Real>&, Var, Real, Var, Real);

BRNLAB_INSTANTIATE(float)
BRNLAB_INSTANTIATE(double)

#undef BRNLAB_INSTANTIATE

}  // namespace brnlab
