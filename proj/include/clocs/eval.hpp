// SPDX-License-Identifier: Apache-2.0
//
// KITTI-style evaluation: greedy detection/GT matching with difficulty and
// DontCare handling, precision/recall sweeps, AP over 40 recall positions and
// distance-binned AP.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clocs/candidates.hpp"
#include "clocs/geometry.hpp"

namespace clocs {

enum class EvalMetric { k2d, kBev, k3d };

inline std::string_view eval_metric_name(EvalMetric m) {
  switch (m) {
    case EvalMetric::k2d: return "2d";
    case EvalMetric::kBev: return "bev";
    case EvalMetric::k3d: return "3d";
  }
  return "3d";
}

inline EvalMetric eval_metric_from_name(std::string_view s) {
  if (s == "2d") return EvalMetric::k2d;
  if (s == "bev") return EvalMetric::kBev;
  if (s == "3d") return EvalMetric::k3d;
  throw ConfigError("unknown evaluation metric '" + std::string(s) + "'");
}

enum class DifficultyLevel { kEasy, kModerate, kHard };

inline std::string_view difficulty_name(DifficultyLevel d) {
  switch (d) {
    case DifficultyLevel::kEasy: return "easy";
    case DifficultyLevel::kModerate: return "moderate";
    case DifficultyLevel::kHard: return "hard";
  }
  return "moderate";
}

/// KITTI devkit thresholds: minimum 2D box height, maximum occlusion level
/// and maximum truncation for a GT object to count at this level.
struct Difficulty {
  DifficultyLevel level = DifficultyLevel::kModerate;
  double min_height_px = 25.0;
  int max_occlusion = 1;
  double max_truncation = 0.30;

  static Difficulty standard(DifficultyLevel level) {
    switch (level) {
      case DifficultyLevel::kEasy: return {level, 40.0, 0, 0.15};
      case DifficultyLevel::kModerate: return {level, 25.0, 1, 0.30};
      case DifficultyLevel::kHard: return {level, 25.0, 2, 0.50};
    }
    return {};
  }

  bool admits(const GroundTruthObject& g) const {
    return g.box2d.height() >= min_height_px && g.occlusion <= max_occlusion && g.truncation <= max_truncation;
  }
};

/// Half-open distance range [lo, hi) in meters.
struct DistanceBin {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double d) const { return d >= lo && d < hi; }
  std::string label() const { return text::fmt_g(lo, 6) + "-" + text::fmt_g(hi, 6); }
  bool operator==(const DistanceBin&) const = default;
};

inline std::vector<DistanceBin> default_distance_bins() {
  return {{0, 10}, {10, 20}, {20, 30}, {30, 40}, {40, 50}};
}

struct EvalDetection {
  ClassId class_id = ClassId::kCar;
  Box3D box;
  std::optional<Box2D> box2d;  // needed for the 2d metric and the height rule
  double score = 0.0;
};

enum class MatchFlag : std::uint8_t { kTruePositive, kFalsePositive, kIgnored, kExcluded };

struct MatchParams {
  ClassId class_id = ClassId::kCar;
  EvalMetric metric = EvalMetric::k3d;
  double iou_threshold = 0.7;
  Difficulty difficulty{};
  std::optional<DistanceBin> bin;
};

struct FrameMatch {
  std::vector<MatchFlag> det_flags;
  std::vector<int> det_gt;         // matched GT index, -1 otherwise
  std::vector<char> gt_valid;      // counts toward recall in this cell
  std::vector<char> gt_matched;
  int n_gt = 0;
};

namespace detail {

inline double eval_overlap(EvalMetric m, const EvalDetection& d, const GroundTruthObject& g) {
  switch (m) {
    case EvalMetric::k2d:
      return d.box2d ? iou_2d(*d.box2d, g.box2d) : 0.0;
    case EvalMetric::kBev:
      return g.box3d ? iou_bev(d.box, *g.box3d) : 0.0;
    case EvalMetric::k3d:
      return g.box3d ? iou_3d(d.box, *g.box3d) : 0.0;
  }
  return 0.0;
}

}  // namespace detail

/// Matches one frame. Detections must be sorted by descending score.
///
/// GT of the evaluated class is valid when the difficulty admits it (and it
/// lies in the distance bin, if any); otherwise it is ignored. In score
/// order, each detection takes the unmatched valid GT with the highest IoU at
/// or above the threshold (TP). Failing that it is ignored when it overlaps an
/// ignored GT at the threshold, or, for the 2d metric, when a DontCare region
/// covers at least the threshold fraction of its area. Everything else is FP.
/// Detections lower than the difficulty's minimum height (when a 2D box is
/// known) are ignored, and in binned mode detections outside the bin that do
/// not match a valid GT are excluded.
inline FrameMatch match_frame(std::span<const EvalDetection> dets, std::span<const GroundTruthObject> gts,
                              const MatchParams& mp) {
  for (std::size_t i = 1; i < dets.size(); ++i) {
    if (dets[i].score > dets[i - 1].score) throw ContractError("match_frame: detections not sorted by score");
  }
  FrameMatch fm;
  fm.det_flags.assign(dets.size(), MatchFlag::kExcluded);
  fm.det_gt.assign(dets.size(), -1);
  fm.gt_valid.assign(gts.size(), 0);
  fm.gt_matched.assign(gts.size(), 0);
  std::vector<char> gt_ignored(gts.size(), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto& gt = gts[g];
    if (gt.is_dont_care || gt.class_id != mp.class_id) continue;
    bool valid = mp.difficulty.admits(gt);
    if (valid && mp.bin) valid = gt.box3d && mp.bin->contains(distance_xy(*gt.box3d));
    fm.gt_valid[g] = valid;
    gt_ignored[g] = !valid;
    fm.n_gt += valid;
  }
  for (std::size_t d = 0; d < dets.size(); ++d) {
    const auto& det = dets[d];
    if (det.class_id != mp.class_id) continue;
    if (mp.metric == EvalMetric::k2d && !det.box2d) {
      throw ContractError("match_frame: 2d metric requires detection 2D boxes");
    }
    if (det.box2d && det.box2d->height() < mp.difficulty.min_height_px) {
      fm.det_flags[d] = MatchFlag::kIgnored;
      continue;
    }
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!fm.gt_valid[g] || fm.gt_matched[g]) continue;
      const double o = detail::eval_overlap(mp.metric, det, gts[g]);
      if (o >= mp.iou_threshold && o > best_iou) {
        best = static_cast<int>(g);
        best_iou = o;
      }
    }
    if (best >= 0) {
      fm.det_flags[d] = MatchFlag::kTruePositive;
      fm.det_gt[d] = best;
      fm.gt_matched[best] = 1;
      continue;
    }
    if (mp.bin && !mp.bin->contains(distance_xy(det.box))) continue;  // excluded
    bool ignored = false;
    for (std::size_t g = 0; g < gts.size() && !ignored; ++g) {
      if (gt_ignored[g]) {
        ignored = detail::eval_overlap(mp.metric, det, gts[g]) >= mp.iou_threshold;
      } else if (gts[g].is_dont_care && mp.metric == EvalMetric::k2d) {
        const double a = det.box2d->area();
        ignored = a > 0.0 && intersection_2d(*det.box2d, gts[g].box2d) / a >= mp.iou_threshold;
      }
    }
    fm.det_flags[d] = ignored ? MatchFlag::kIgnored : MatchFlag::kFalsePositive;
  }
  return fm;
}

// ---------------------------------------------------------------------------
// Precision/recall

struct PRPoint {
  double score_threshold = 0.0;
  int n_tp = 0;
  int n_fp = 0;
  double recall = 0.0;
  double precision = 0.0;
};

/// One point per distinct score, sweeping the threshold from high to low.
struct PRCurve {
  int n_gt = 0;
  std::vector<PRPoint> points;
};

struct ScoredOutcome {
  double score = 0.0;
  bool true_positive = false;
};

inline PRCurve build_pr_curve(std::vector<ScoredOutcome> outcomes, int n_gt) {
  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.score > b.score; });
  PRCurve c;
  c.n_gt = n_gt;
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    (outcomes[i].true_positive ? tp : fp) += 1;
    if (i + 1 < outcomes.size() && outcomes[i + 1].score == outcomes[i].score) continue;
    PRPoint p;
    p.score_threshold = outcomes[i].score;
    p.n_tp = tp;
    p.n_fp = fp;
    p.recall = n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0;
    p.precision = static_cast<double>(tp) / (tp + fp);
    c.points.push_back(p);
  }
  return c;
}

inline constexpr int kRecallPositions = 40;

/// Mean over r = 1/40 .. 40/40 of the best precision among points with
/// recall >= r (0 when unreachable). Recall levels are compared on integer
/// counts, so r = m/40 is reached exactly when 40 * tp >= m * n_gt.
inline double ap_40(const PRCurve& curve) {
  if (curve.n_gt <= 0) return 0.0;
  double sum = 0.0;
  for (int m = 1; m <= kRecallPositions; ++m) {
    double best = 0.0;
    for (const auto& p : curve.points) {
      if (static_cast<long long>(p.n_tp) * kRecallPositions >= static_cast<long long>(m) * curve.n_gt) {
        best = std::max(best, p.precision);
      }
    }
    sum += best;
  }
  return sum / kRecallPositions;
}

// ---------------------------------------------------------------------------
// Data-set evaluation

struct APResult {
  ClassId class_id = ClassId::kCar;
  EvalMetric metric = EvalMetric::k3d;
  DifficultyLevel difficulty = DifficultyLevel::kModerate;
  std::optional<DistanceBin> bin;  // empty means all distances
  double ap = 0.0;
  int n_gt = 0;
  PRCurve curve;

  std::string bin_label() const { return bin ? bin->label() : "all"; }
};

struct EvalConfig {
  ClassId class_id = ClassId::kCar;
  std::vector<EvalMetric> metrics = {EvalMetric::k3d, EvalMetric::kBev};
  std::vector<DifficultyLevel> difficulties = {DifficultyLevel::kEasy, DifficultyLevel::kModerate,
                                               DifficultyLevel::kHard};
  std::vector<DistanceBin> bins = default_distance_bins();
  // Indexed by ClassId, same threshold for every metric.
  std::array<double, kNumClasses> iou_threshold = {0.7, 0.5, 0.5, 0.7};
  std::array<Difficulty, 3> difficulty_table = {Difficulty::standard(DifficultyLevel::kEasy),
                                                Difficulty::standard(DifficultyLevel::kModerate),
                                                Difficulty::standard(DifficultyLevel::kHard)};
};

using DetectionsByFrame = std::map<std::string, std::vector<EvalDetection>>;
using LabelsByFrame = std::map<std::string, std::vector<GroundTruthObject>>;

/// One cell: a metric, a difficulty and an optional distance bin, aggregated
/// over all frames in frame-id order.
inline APResult evaluate_cell(const DetectionsByFrame& dets, const LabelsByFrame& gts, const EvalConfig& cfg,
                              EvalMetric metric, DifficultyLevel level, std::optional<DistanceBin> bin) {
  MatchParams mp;
  mp.class_id = cfg.class_id;
  mp.metric = metric;
  mp.iou_threshold = cfg.iou_threshold[static_cast<int>(cfg.class_id)];
  mp.difficulty = cfg.difficulty_table[static_cast<int>(level)];
  mp.bin = bin;
  std::vector<ScoredOutcome> outcomes;
  int n_gt = 0;
  static const std::vector<EvalDetection> kNone;
  for (const auto& [frame_id, frame_gts] : gts) {
    auto it = dets.find(frame_id);
    const auto& fd = it == dets.end() ? kNone : it->second;
    auto fm = match_frame(fd, frame_gts, mp);
    n_gt += fm.n_gt;
    for (std::size_t d = 0; d < fd.size(); ++d) {
      if (fm.det_flags[d] == MatchFlag::kTruePositive) outcomes.push_back({fd[d].score, true});
      if (fm.det_flags[d] == MatchFlag::kFalsePositive) outcomes.push_back({fd[d].score, false});
    }
  }
  APResult r;
  r.class_id = cfg.class_id;
  r.metric = metric;
  r.difficulty = level;
  r.bin = bin;
  r.n_gt = n_gt;
  r.curve = build_pr_curve(std::move(outcomes), n_gt);
  r.ap = ap_40(r.curve);
  return r;
}

/// Sorts each frame's detections by descending score (stable).
inline void sort_by_score(DetectionsByFrame& dets) {
  for (auto& [id, v] : dets) {
    std::stable_sort(v.begin(), v.end(), [](const EvalDetection& a, const EvalDetection& b) {
      return a.score > b.score;
    });
  }
}

/// Full grid: every metric x difficulty, overall and per distance bin. Bins
/// without valid GT are omitted. A detection frame without labels is an
/// alignment error.
inline std::vector<APResult> evaluate(DetectionsByFrame dets, const LabelsByFrame& gts, const EvalConfig& cfg = {}) {
  for (const auto& [id, v] : dets) {
    if (!gts.count(id)) throw DataError("frame " + id + " has detections but no labels");
  }
  sort_by_score(dets);
  std::vector<APResult> out;
  for (auto metric : cfg.metrics) {
    for (auto level : cfg.difficulties) {
      out.push_back(evaluate_cell(dets, gts, cfg, metric, level, std::nullopt));
      for (const auto& bin : cfg.bins) {
        auto r = evaluate_cell(dets, gts, cfg, metric, level, bin);
        if (r.n_gt > 0) out.push_back(std::move(r));
      }
    }
  }
  return out;
}

inline const APResult* find_result(const std::vector<APResult>& results, EvalMetric metric,
                                   DifficultyLevel level, std::optional<DistanceBin> bin = std::nullopt) {
  for (const auto& r : results) {
    if (r.metric == metric && r.difficulty == level && r.bin == bin) return &r;
  }
  return nullptr;
}

inline std::string format_report(const std::vector<APResult>& results) {
  std::string out = "metric,difficulty,distance_bin,ap,n_gt\n";
  for (const auto& r : results) {
    out += std::string(eval_metric_name(r.metric)) + ',' + std::string(difficulty_name(r.difficulty)) + ',' +
           r.bin_label() + ',' + text::fmt_g(r.ap, 10) + ',' + std::to_string(r.n_gt) + '\n';
  }
  return out;
}

inline std::string format_pr_data(const std::vector<APResult>& results) {
  std::string out = "metric,difficulty,distance_bin,recall,precision\n";
  for (const auto& r : results) {
    const std::string prefix = std::string(eval_metric_name(r.metric)) + ',' +
                               std::string(difficulty_name(r.difficulty)) + ',' + r.bin_label() + ',';
    for (const auto& p : r.curve.points) {
      out += prefix + text::fmt_g(p.recall, 10) + ',' + text::fmt_g(p.precision, 10) + '\n';
    }
  }
  return out;
}

}  // namespace clocs
