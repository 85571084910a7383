#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace brnlab {

enum class Axis { scale, time };

/// Rank-3 activation array laid out scale x time x channel (channel fastest).
/// Plain sequences use a single scale row.
template <typename Real>
struct Tensor {
  std::size_t scales = 0;
  std::size_t steps = 0;
  std::size_t channels = 0;
  std::vector<Real> data;

  Tensor() = default;
  Tensor(std::size_t s, std::size_t t, std::size_t c, Real fill = Real(0))
      : scales(s), steps(t), channels(c), data(s * t * c, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t positions() const { return scales * steps; }

  Real& operator()(std::size_t s, std::size_t t, std::size_t c) {
    return data[(s * steps + t) * channels + c];
  }
  Real operator()(std::size_t s, std::size_t t, std::size_t c) const {
    return data[(s * steps + t) * channels + c];
  }

  bool same_shape(const Tensor& other) const {
    return scales == other.scales && steps == other.steps && channels == other.channels;
  }

  std::string shape_string() const {
    return std::to_string(scales) + "x" + std::to_string(steps) + "x" + std::to_string(channels);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(scales, steps, channels);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Iteration geometry of a tensor seen along one axis: `outer` independent
/// lines of `extent` samples, consecutive samples `inner` positions apart.
struct AxisLayout {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

template <typename Real>
AxisLayout axis_layout(const Tensor<Real>& x, Axis axis) {
  if (axis == Axis::time) return {x.scales, x.steps, 1};
  return {1, x.scales, x.steps};
}

}  // namespace brnlab
