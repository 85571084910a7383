#pragma once

// Brute-force reference implementations used to cross-check the production
// code. They are deliberately slow and structured differently.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "brnlab/data_model.hpp"
#include "brnlab/metrics.hpp"

namespace brnlab::oracle {

inline double iou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.interval.start != b.interval.start) return a.interval.start < b.interval.start;
  if (a.interval.end != b.interval.end) return a.interval.end < b.interval.end;
  return a.label < b.label;
}

/// Enumerates every subset and returns the unique one satisfying the greedy
/// fixed point: a detection survives iff no higher-ranked survivor overlaps
/// it above the threshold. Returns nullopt if zero or several subsets qualify.
inline std::optional<std::vector<Detection>> nms(std::vector<Detection> dets, double threshold) {
  std::sort(dets.begin(), dets.end(), ranks_before);
  const std::size_t n = dets.size();
  std::optional<std::vector<Detection>> found;
  int hits = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      bool blocked = false;
      for (std::size_t j = 0; j < i; ++j) {
        if ((mask >> j & 1u) && iou(dets[i].interval, dets[j].interval) > threshold) blocked = true;
      }
      const bool in = mask >> i & 1u;
      ok = in != blocked;
    }
    if (!ok) continue;
    ++hits;
    std::vector<Detection> kept;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1u) kept.push_back(dets[i]);
    }
    found = kept;
  }
  if (hits != 1) return std::nullopt;
  return found;
}

/// Number of true positives among the first k ranked detections, re-running
/// the matching from scratch for that prefix.
inline std::size_t prefix_true_positives(const std::vector<Detection>& ranked,
                                         const std::vector<GroundTruth>& gts, std::size_t k, double thr) {
  std::vector<bool> used(gts.size(), false);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<std::size_t> cand;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].video_id == ranked[i].video_id) cand.push_back(g);
    }
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
      return iou(ranked[i].interval, gts[a].interval) > iou(ranked[i].interval, gts[b].interval);
    });
    for (std::size_t g : cand) {
      if (used[g]) continue;
      if (iou(ranked[i].interval, gts[g].interval) >= thr) {
        used[g] = true;
        ++tp;
      }
      break;
    }
  }
  return tp;
}

/// AP as the mean over recall levels j / n_gt of the best precision reached
/// at or beyond that recall.
inline double average_precision(std::vector<Detection> dets, const std::vector<GroundTruth>& gts, double thr) {
  if (gts.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  const double n_gt = static_cast<double>(gts.size());
  std::vector<double> precision, recall;
  for (std::size_t k = 1; k <= dets.size(); ++k) {
    const double tp = static_cast<double>(prefix_true_positives(dets, gts, k, thr));
    precision.push_back(tp / static_cast<double>(k));
    recall.push_back(tp / n_gt);
  }
  double ap = 0.0;
  for (std::size_t j = 1; j <= gts.size(); ++j) {
    const double level = static_cast<double>(j) / n_gt;
    double best = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k) {
      if (recall[k] >= level - 1e-12) best = std::max(best, precision[k]);
    }
    ap += best / n_gt;
  }
  return ap;
}

}  // namespace brnlab::oracle
