// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clocs/candidates.hpp"
#include "clocs/geometry.hpp"

namespace clocs {

enum class NmsMetric { kBev, k3d, k2d };

inline NmsMetric nms_metric_from_name(std::string_view s) {
  if (s == "bev") return NmsMetric::kBev;
  if (s == "3d") return NmsMetric::k3d;
  if (s == "2d") return NmsMetric::k2d;
  throw ConfigError("unknown NMS metric '" + std::string(s) + "' (expected bev, 3d or 2d)");
}

struct NmsConfig {
  double iou_threshold = 0.1;
  NmsMetric metric = NmsMetric::kBev;
  std::optional<double> score_floor;  // candidates below are dropped first

  void validate() const {
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) throw ConfigError("nmsIouThreshold must be in [0, 1]");
  }
};

/// Greedy suppression over an abstract candidate set. `overlap(a, b)` is only
/// called for same-class pairs. Returns kept indices by descending score,
/// ties broken by lower index.
template <typename ScoreFn, typename ClassFn, typename OverlapFn>
std::vector<std::size_t> nms_greedy(std::size_t n, ScoreFn&& score, ClassFn&& cls, OverlapFn&& overlap,
                                    double iou_threshold, std::optional<double> score_floor = std::nullopt) {
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (score_floor && score(i) < *score_floor) continue;
    order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
  std::vector<char> removed(n, 0);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const auto i = order[oi];
    if (removed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const auto j = order[oj];
      if (removed[j] || cls(j) != cls(i)) continue;
      if (overlap(i, j) > iou_threshold) removed[j] = 1;
    }
  }
  return keep;
}

inline std::vector<std::size_t> nms(std::span<const Detection3D> dets, const NmsConfig& cfg) {
  if (cfg.metric == NmsMetric::k2d) throw ConfigError("2d NMS metric needs 2D detections");
  return nms_greedy(
      dets.size(), [&](std::size_t i) { return dets[i].score; }, [&](std::size_t i) { return dets[i].class_id; },
      [&](std::size_t a, std::size_t b) {
        return cfg.metric == NmsMetric::k3d ? iou_3d(dets[a].box, dets[b].box) : iou_bev(dets[a].box, dets[b].box);
      },
      cfg.iou_threshold, cfg.score_floor);
}

inline std::vector<std::size_t> nms(std::span<const Detection2D> dets, const NmsConfig& cfg) {
  return nms_greedy(
      dets.size(), [&](std::size_t i) { return dets[i].score; }, [&](std::size_t i) { return dets[i].class_id; },
      [&](std::size_t a, std::size_t b) { return iou_2d(dets[a].box, dets[b].box); }, cfg.iou_threshold,
      cfg.score_floor);
}

}  // namespace clocs
