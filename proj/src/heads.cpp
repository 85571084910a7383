#include "brnlab/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace brnlab {

void HeadConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("heads need at least one action class");
  if (kernel_size % 2 == 0) throw std::invalid_argument("head kernel size must be odd");
  if (!(background_prior > 0.0 && background_prior < 1.0)) {
    throw std::invalid_argument("background prior must lie in (0, 1)");
  }
}

template <typename Real>
PredictionHeads<Real>::PredictionHeads(std::size_t dim, const HeadConfig& config,
                                       ParameterSet<Real>& params)
    : dim_(dim), config_(config) {
  config_.validate();
  cls_ = make_tower("head.cls", config_.num_classes + 1, params);
  reg_ = make_tower("head.reg", 2, params);
}

template <typename Real>
typename PredictionHeads<Real>::Tower PredictionHeads<Real>::make_tower(
    const std::string& prefix, std::size_t outputs, ParameterSet<Real>& params) {
  Tower tower;
  const std::size_t k = config_.kernel_size;
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const auto layer = prefix + ".layer" + std::to_string(i);
    if (config_.scale_conv) {
      tower.scale_w.push_back(&params.add(layer + ".scale.weight", {k, dim_, dim_}));
      tower.scale_b.push_back(&params.add(layer + ".scale.bias", {dim_}));
    }
    tower.time_w.push_back(&params.add(layer + ".time.weight", {k, dim_, dim_}));
    tower.time_b.push_back(&params.add(layer + ".time.bias", {dim_}));
  }
  tower.pred_w = &params.add(prefix + ".pred.weight", {1, dim_, outputs});
  tower.pred_b = &params.add(prefix + ".pred.bias", {outputs});
  return tower;
}

template <typename Real>
void PredictionHeads<Real>::init_tower(Tower& tower, std::mt19937_64& rng, double pred_bound) {
  const double fan_in = static_cast<double>(config_.kernel_size * dim_);
  for (auto* w : tower.scale_w) fill_uniform(*w, init_bound(fan_in, 1.0), rng);
  for (auto* w : tower.time_w) fill_uniform(*w, init_bound(fan_in, 2.0), rng);
  fill_uniform(*tower.pred_w, pred_bound, rng);
}

template <typename Real>
void PredictionHeads<Real>::initialize(std::mt19937_64& rng) {
  // Small classifier weights plus a background bias give p(background) ~= prior at start.
  init_tower(cls_, rng, 0.01 / std::sqrt(static_cast<double>(dim_)));
  init_tower(reg_, rng, 1.0 / std::sqrt(static_cast<double>(dim_)));
  const double K = static_cast<double>(config_.num_classes);
  const double p = config_.background_prior;
  std::fill(cls_.pred_b->values.begin(), cls_.pred_b->values.end(), Real(0));
  cls_.pred_b->values[0] = static_cast<Real>(std::log(p * K / (1.0 - p)));
}

template <typename Real>
Var PredictionHeads<Real>::run_tower(Graph<Real>& g, const Tower& tower, Var x) const {
  Var h = x;
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    if (config_.scale_conv) h = ops::conv(g, h, *tower.scale_w[i], tower.scale_b[i], Axis::scale);
    h = ops::conv(g, h, *tower.time_w[i], tower.time_b[i], Axis::time);
    h = ops::relu(g, h);
  }
  return ops::conv(g, h, *tower.pred_w, tower.pred_b, Axis::time);
}

template <typename Real>
HeadOutputs PredictionHeads<Real>::forward(Graph<Real>& g, Var features) const {
  if (g.value(features).channels != dim_) {
    throw ShapeError("heads expect " + std::to_string(dim_) + " channels, got " +
                     g.value(features).shape_string());
  }
  HeadOutputs out;
  {
    typename Graph<Real>::Scope scope(g, "head.cls");
    out.class_logits = run_tower(g, cls_, features);
  }
  {
    typename Graph<Real>::Scope scope(g, "head.reg");
    out.reg_raw = run_tower(g, reg_, features);
  }
  return out;
}

// ------------------------------------------------------------------ decoding

DecodedInterval decode_interval(double anchor, double d_start, double d_end) {
  DecodedInterval out;
  out.interval.start = std::clamp(anchor - d_start, 0.0, 1.0);
  out.interval.end = std::clamp(anchor + d_end, 0.0, 1.0);
  out.valid = out.interval.start < out.interval.end;
  return out;
}

// --------------------------------------------------------------- assignment

LevelRanges LevelRanges::geometric(std::size_t num_levels) {
  LevelRanges r;
  for (std::size_t i = 0; i < num_levels; ++i) {
    r.upper.push_back(std::ldexp(1.0, static_cast<int>(i) - static_cast<int>(num_levels - 1)));
  }
  return r;
}

std::optional<std::size_t> LevelRanges::level_of(double length) const {
  for (std::size_t i = 0; i < upper.size(); ++i) {
    if (contains(i, length)) return i;
  }
  return std::nullopt;
}

std::size_t TargetMap::num_positive() const {
  return static_cast<std::size_t>(
      std::count_if(class_target.begin(), class_target.end(), [](int c) { return c != 0; }));
}

template <typename Real>
TargetMap assign_targets(const VideoAnnotation& annotation, const Tensor<Real>& reg_raw,
                         const LevelRanges& ranges, AssignmentMode mode) {
  const std::size_t S = reg_raw.scales;
  const std::size_t T = reg_raw.steps;
  if (ranges.size() != S) {
    throw ShapeError("assign_targets: " + std::to_string(ranges.size()) + " level ranges for " +
                     std::to_string(S) + " scales");
  }
  TargetMap map;
  map.scales = S;
  map.steps = T;
  map.class_target.assign(S * T, 0);
  map.matched.assign(S * T, std::nullopt);

  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      const double anchor = anchor_time(t, T);
      const ActionInstance* best = nullptr;
      double best_iou = -1.0;
      std::optional<Interval> predicted;
      if (mode == AssignmentMode::dynamic_iou) {
        const auto d = decode_interval(anchor, sigmoid(static_cast<double>(reg_raw(s, t, 0))),
                                       sigmoid(static_cast<double>(reg_raw(s, t, 1))));
        if (d.valid) predicted = d.interval;
      }
      for (const auto& inst : annotation.instances) {
        const auto& iv = inst.interval;
        if (anchor < iv.start || anchor > iv.end) continue;
        if (!ranges.contains(s, iv.length())) continue;
        const double iou = predicted ? temporal_iou(*predicted, iv) : 0.0;
        const bool better =
            best == nullptr || iou > best_iou ||
            (iou == best_iou && iv.length() < best->interval.length());
        if (better) {
          best = &inst;
          best_iou = iou;
        }
      }
      if (best != nullptr) {
        map.class_target[s * T + t] = best->label;
        map.matched[s * T + t] = best->interval;
      }
    }
  }
  return map;
}

// -------------------------------------------------------------------- losses

namespace {

constexpr double kMinProbability = 1e-12;

void check_targets(const TargetMap& targets, std::size_t S, std::size_t T, const char* op) {
  if (targets.scales != S || targets.steps != T) {
    throw ShapeError(std::string(op) + ": target map " + std::to_string(targets.scales) + "x" +
                     std::to_string(targets.steps) + " vs predictions " + std::to_string(S) + "x" +
                     std::to_string(T));
  }
}

}  // namespace

double focal_term(double p, double alpha) {
  const double pc = std::max(p, kMinProbability);
  return -std::pow(1.0 - p, alpha) * std::log(pc);
}

template <typename Real>
Var focal_loss(Graph<Real>& g, Var class_logits, const TargetMap& targets, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("focal loss alpha must be >= 0");
  const auto& z = g.value(class_logits);
  check_targets(targets, z.scales, z.steps, "focal_loss");
  const std::size_t C = z.channels;
  const std::size_t P = z.positions();
  // Per-position dL/dz, kept for the backward pass.
  std::vector<double> dz(P * C);
  double total = 0.0;
  std::vector<double> q(C);
  for (std::size_t p = 0; p < P; ++p) {
    const int y = targets.class_target[p];
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw ShapeError("focal_loss: target class " + std::to_string(y) + " outside logits");
    }
    double m = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, static_cast<double>(z.data[p * C + c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      q[c] = std::exp(static_cast<double>(z.data[p * C + c]) - m);
      sum += q[c];
    }
    for (auto& v : q) v /= sum;
    const double py = q[static_cast<std::size_t>(y)];
    const double one_minus = 1.0 - py;
    const double pc = std::max(py, kMinProbability);
    total += -std::pow(one_minus, alpha) * std::log(pc);
    // dL/dp, then chain through the softmax: dp/dz_c = p (delta_cy - q_c).
    double dldp = 0.0;
    if (alpha > 0.0 && one_minus > 0.0) {
      dldp += alpha * std::pow(one_minus, alpha - 1.0) * std::log(pc);
    }
    if (py >= kMinProbability) dldp -= std::pow(one_minus, alpha) / py;
    for (std::size_t c = 0; c < C; ++c) {
      const double delta = c == static_cast<std::size_t>(y) ? 1.0 : 0.0;
      dz[p * C + c] = dldp * py * (delta - q[c]);
    }
  }
  const double inv = 1.0 / static_cast<double>(P);
  Tensor<Real> out(1, 1, 1, static_cast<Real>(total * inv));
  return g.record("focal_loss", std::move(out), {class_logits},
                  [class_logits, dz = std::move(dz), inv](Graph<Real>& gr, const Tensor<Real>& gy,
                                                         const Tensor<Real>&) {
                    if (!gr.requires_grad(class_logits)) return;
                    auto& d = gr.grad(class_logits);
                    const double scale = static_cast<double>(gy.data[0]) * inv;
                    for (std::size_t i = 0; i < dz.size(); ++i) {
                      d.data[i] += static_cast<Real>(scale * dz[i]);
                    }
                  });
}

template <typename Real>
Var iou_loss(Graph<Real>& g, Var reg_raw, const TargetMap& targets) {
  const auto& r = g.value(reg_raw);
  if (r.channels != 2) throw ShapeError("iou_loss: regression output needs 2 channels");
  check_targets(targets, r.scales, r.steps, "iou_loss");
  const std::size_t T = r.steps;
  const std::size_t P = r.positions();
  std::vector<double> draw(P * 2, 0.0);
  double total = 0.0;
  std::size_t positives = 0;
  for (std::size_t p = 0; p < P; ++p) {
    if (!targets.matched[p]) continue;
    ++positives;
    const Interval gt = *targets.matched[p];
    const double anchor = anchor_time(p % T, T);
    const double ss = sigmoid(static_cast<double>(r.data[2 * p]));
    const double se = sigmoid(static_cast<double>(r.data[2 * p + 1]));
    const double raw_start = anchor - ss;
    const double raw_end = anchor + se;
    const double s = std::clamp(raw_start, 0.0, 1.0);
    const double e = std::clamp(raw_end, 0.0, 1.0);
    if (!(s < e)) {
      total += 1.0;
      continue;
    }
    const double inter = std::max(0.0, std::min(e, gt.end) - std::max(s, gt.start));
    const double uni = (e - s) + gt.length() - inter;
    const double iou = inter / uni;
    total += 1.0 - iou;
    // d(IoU)/d(e) and d(IoU)/d(s) via I and U, then through clipping and the sigmoid.
    const double dI_de = (inter > 0.0 && e < gt.end) ? 1.0 : 0.0;
    const double dI_ds = (inter > 0.0 && s > gt.start) ? -1.0 : 0.0;
    const double dU_de = 1.0 - dI_de;
    const double dU_ds = -1.0 - dI_ds;
    const double diou_de = (dI_de * uni - inter * dU_de) / (uni * uni);
    const double diou_ds = (dI_ds * uni - inter * dU_ds) / (uni * uni);
    const double de_dd = (raw_end > 0.0 && raw_end < 1.0) ? 1.0 : 0.0;
    const double ds_dd = (raw_start > 0.0 && raw_start < 1.0) ? -1.0 : 0.0;
    draw[2 * p] = -diou_ds * ds_dd * ss * (1.0 - ss);
    draw[2 * p + 1] = -diou_de * de_dd * se * (1.0 - se);
  }
  const double inv = positives == 0 ? 0.0 : 1.0 / static_cast<double>(positives);
  Tensor<Real> out(1, 1, 1, static_cast<Real>(total * inv));
  return g.record("iou_loss", std::move(out), {reg_raw},
                  [reg_raw, draw = std::move(draw), inv](Graph<Real>& gr, const Tensor<Real>& gy,
                                                        const Tensor<Real>&) {
                    if (!gr.requires_grad(reg_raw) || inv == 0.0) return;
                    auto& d = gr.grad(reg_raw);
                    const double scale = static_cast<double>(gy.data[0]) * inv;
                    for (std::size_t i = 0; i < draw.size(); ++i) {
                      d.data[i] += static_cast<Real>(scale * draw[i]);
                    }
                  });
}

template <typename Real>
Var total_loss(Graph<Real>& g, Var l_cls, Var l_reg, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("regression weight lambda must be >= 0");
  return ops::combine(g, l_cls, Real(1), l_reg, static_cast<Real>(lambda));
}

template class PredictionHeads<float>;
template class PredictionHeads<double>;
template TargetMap assign_targets<float>(const VideoAnnotation&, const Tensor<float>&,
                                         const LevelRanges&, AssignmentMode);
template TargetMap assign_targets<double>(const VideoAnnotation&, const Tensor<double>&,
                                          const LevelRanges&, AssignmentMode);
template Var focal_loss<float>(Graph<float>&, Var, const TargetMap&, double);
template Var focal_loss<double>(Graph<double>&, Var, const TargetMap&, double);
template Var iou_loss<float>(Graph<float>&, Var, const TargetMap&);
template Var iou_loss<double>(Graph<double>&, Var, const TargetMap&);
template Var total_loss<float>(Graph<float>&, Var, Var, double);
template Var total_loss<double>(Graph<double>&, Var, Var, double);

}  // namespace brnlab
