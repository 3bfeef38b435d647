// SPDX-License-Identifier: Apache-2.0
//
// Detection candidates, ground-truth labels and their text formats.
//
//   2D candidates:  class x1 y1 x2 y2 score
//   3D candidates:  class h w l x y z theta score     (LiDAR frame, box center)
//                   or the 16-column KITTI result row (camera frame)
//   labels:         15-column KITTI label row
//
// Geometry is written with 9 significant digits, scores with 17 so that a
// score survives a write/read cycle bit for bit.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clocs/common.hpp"
#include "clocs/geometry.hpp"

namespace clocs {

enum class ScoreScale { kLog, kSigmoid };

inline constexpr double kScoreClampEps = 1e-7;

/// logit(p) with p clamped into [eps, 1 - eps].
inline double to_log_score(double p) {
  p = std::clamp(p, kScoreClampEps, 1.0 - kScoreClampEps);
  return std::log(p) - std::log1p(-p);
}

inline double to_sigmoid_score(double s) { return 1.0 / (1.0 + std::exp(-s)); }

inline ScoreScale score_scale_from_name(std::string_view s) {
  if (s == "log") return ScoreScale::kLog;
  if (s == "sigmoid") return ScoreScale::kSigmoid;
  throw ConfigError("unknown score scale '" + std::string(s) + "' (expected log or sigmoid)");
}

struct Detection2D {
  Box2D box;
  double score = 0.0;
  ClassId class_id = ClassId::kCar;
};

struct Detection3D {
  Box3D box;
  double score = 0.0;
  ClassId class_id = ClassId::kCar;
};

struct GroundTruthObject {
  ClassId class_id = ClassId::kCar;
  Box2D box2d;
  std::optional<Box3D> box3d;  // empty for DontCare rows
  double truncation = 0.0;
  int occlusion = 0;
  bool is_dont_care = false;
};

/// One frame's pre-NMS candidates. Candidate order is the file order and is
/// the index identity used by the encoder and the network.
struct FrameCandidates {
  std::string frame_id;
  std::vector<Detection2D> dets2d;
  std::vector<Detection3D> dets3d;
  Calibration calib;
};

// ---------------------------------------------------------------------------
// KITTI camera-frame boxes

/// Box as written in KITTI files: bottom-center location in the rectified
/// camera frame, rotation ry about the camera y axis.
struct KittiBox {
  double h = 0, w = 0, l = 0;
  double x = 0, y = 0, z = 0;
  double ry = 0;
};

inline Box3D kitti_to_lidar(const Calibration& calib, const KittiBox& k) {
  // Camera y points down, so the geometric center sits h/2 above the bottom.
  Eigen::Vector3d c = calib.camera_to_lidar({k.x, k.y - 0.5 * k.h, k.z});
  return Box3D(k.h, k.w, k.l, c.x(), c.y(), c.z(), -k.ry - 0.5 * kPi);
}

inline KittiBox lidar_to_kitti(const Calibration& calib, const Box3D& b) {
  Eigen::Vector3d c = calib.lidar_to_camera({b.x, b.y, b.z});
  return {b.h, b.w, b.l, c.x(), c.y() + 0.5 * b.h, c.z(), normalize_angle(-b.theta - 0.5 * kPi)};
}

/// Observation angle alpha = ry - atan2(x, z), wrapped into (-pi, pi].
inline double kitti_alpha(const KittiBox& k) { return normalize_angle(k.ry - std::atan2(k.x, k.z)); }

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline double field(const text::Line& line, std::string_view tok, std::string_view what) {
  double v = 0.0;
  if (!text::parse_double(tok, v)) {
    throw ParseError("line " + std::to_string(line.number) + ": bad " + std::string(what) + " '" +
                     std::string(tok) + "'");
  }
  return v;
}

inline void expect_tokens(const text::Line& line, std::size_t got, std::size_t want) {
  if (got != want) {
    throw ParseError("line " + std::to_string(line.number) + ": expected " + std::to_string(want) +
                     " fields, got " + std::to_string(got));
  }
}

inline double ingest_score(double raw, ScoreScale scale) {
  return scale == ScoreScale::kSigmoid ? to_log_score(raw) : raw;
}

inline Box3D make_box(const text::Line& line, double h, double w, double l, double x, double y,
                      double z, double theta) {
  try {
    return Box3D(h, w, l, x, y, z, theta);
  } catch (const std::invalid_argument&) {
    throw ParseError("line " + std::to_string(line.number) + ": non-positive box dimension");
  }
}

inline Box3D make_box_kitti(const text::Line& line, const Calibration& calib, const KittiBox& k) {
  try {
    return kitti_to_lidar(calib, k);
  } catch (const std::invalid_argument&) {
    throw ParseError("line " + std::to_string(line.number) + ": non-positive box dimension");
  }
}

}  // namespace detail

inline std::vector<Detection2D> parse_detections_2d(std::string_view text_in,
                                                    ScoreScale scale = ScoreScale::kLog) {
  std::vector<Detection2D> out;
  for (const auto& line : text::content_lines(text_in)) {
    auto t = text::split_ws(line.content);
    detail::expect_tokens(line, t.size(), 6);
    Detection2D d;
    d.class_id = class_from_name(t[0]);
    d.box = {detail::field(line, t[1], "x1"), detail::field(line, t[2], "y1"),
             detail::field(line, t[3], "x2"), detail::field(line, t[4], "y2")};
    if (!d.box.valid()) {
      throw ParseError("line " + std::to_string(line.number) + ": degenerate 2D box");
    }
    d.score = detail::ingest_score(detail::field(line, t[5], "score"), scale);
    out.push_back(d);
  }
  return out;
}

enum class Det3DFormat { kLidar, kKitti };

/// KITTI-format rows need the frame calibration; passing none is a usage
/// error rather than a data error.
inline std::vector<Detection3D> parse_detections_3d(std::string_view text_in,
                                                    Det3DFormat format = Det3DFormat::kLidar,
                                                    const Calibration* calib = nullptr,
                                                    ScoreScale scale = ScoreScale::kLog) {
  if (format == Det3DFormat::kKitti && calib == nullptr) {
    throw ConfigError("KITTI-format 3D detections require a calibration");
  }
  std::vector<Detection3D> out;
  for (const auto& line : text::content_lines(text_in)) {
    auto t = text::split_ws(line.content);
    Detection3D d;
    d.class_id = class_from_name(t.empty() ? std::string_view{} : t[0]);
    auto f = [&](std::size_t i, std::string_view what) { return detail::field(line, t[i], what); };
    if (format == Det3DFormat::kLidar) {
      detail::expect_tokens(line, t.size(), 9);
      d.box = detail::make_box(line, f(1, "h"), f(2, "w"), f(3, "l"), f(4, "x"), f(5, "y"),
                               f(6, "z"), f(7, "theta"));
      d.score = detail::ingest_score(f(8, "score"), scale);
    } else {
      detail::expect_tokens(line, t.size(), 16);
      for (std::size_t i = 1; i < 8; ++i) f(i, "field");
      KittiBox k{f(8, "h"), f(9, "w"), f(10, "l"), f(11, "x"), f(12, "y"), f(13, "z"), f(14, "ry")};
      d.box = detail::make_box_kitti(line, *calib, k);
      d.score = detail::ingest_score(f(15, "score"), scale);
    }
    out.push_back(d);
  }
  return out;
}

/// KITTI label rows. DontCare rows carry only the 2D box.
inline std::vector<GroundTruthObject> parse_labels(std::string_view text_in, const Calibration& calib) {
  std::vector<GroundTruthObject> out;
  for (const auto& line : text::content_lines(text_in)) {
    auto t = text::split_ws(line.content);
    detail::expect_tokens(line, t.size(), 15);
    auto f = [&](std::size_t i, std::string_view what) { return detail::field(line, t[i], what); };
    GroundTruthObject g;
    g.is_dont_care = t[0] == "DontCare";
    g.class_id = class_from_name(t[0]);
    double trunc = f(1, "truncated");
    double occ = f(2, "occluded");
    f(3, "alpha");
    g.box2d = {f(4, "x1"), f(5, "y1"), f(6, "x2"), f(7, "y2")};
    KittiBox k{f(8, "h"), f(9, "w"), f(10, "l"), f(11, "x"), f(12, "y"), f(13, "z"), f(14, "ry")};
    if (!g.is_dont_care) {
      if (trunc < 0.0 || trunc > 1.0) {
        throw ParseError("line " + std::to_string(line.number) + ": truncation outside [0,1]");
      }
      if (occ != std::floor(occ) || occ < 0 || occ > 3) {
        throw ParseError("line " + std::to_string(line.number) + ": occlusion not in {0,1,2,3}");
      }
      g.truncation = trunc;
      g.occlusion = static_cast<int>(occ);
      g.box3d = detail::make_box_kitti(line, calib, k);
    }
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_detections_2d(const std::vector<Detection2D>& dets) {
  std::string out;
  for (const auto& d : dets) {
    out += class_name(d.class_id);
    for (double v : {d.box.x1, d.box.y1, d.box.x2, d.box.y2}) out += ' ' + text::fmt_g(v);
    out += ' ' + text::fmt_g(d.score, 17) + '\n';
  }
  return out;
}

/// LiDAR center convention, one row per detection. `scores` overrides the
/// stored scores when non-empty.
inline std::string format_detections_3d(const std::vector<Detection3D>& dets,
                                        const std::vector<double>& scores = {}) {
  std::string out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    const auto& b = d.box;
    out += class_name(d.class_id);
    for (double v : {b.h, b.w, b.l, b.x, b.y, b.z, b.theta}) out += ' ' + text::fmt_g(v);
    out += ' ' + text::fmt_g(scores.empty() ? d.score : scores[i], 17) + '\n';
  }
  return out;
}

/// One KITTI label row (15 columns), or a 16-column result row when `score`
/// is given.
inline std::string format_kitti_row(std::string_view type, double truncation, int occlusion,
                                    const Box2D& box2d, const KittiBox& k,
                                    std::optional<double> score = std::nullopt) {
  std::string out(type);
  out += ' ' + text::fmt_g(truncation) + ' ' + std::to_string(occlusion);
  out += ' ' + text::fmt_g(kitti_alpha(k));
  for (double v : {box2d.x1, box2d.y1, box2d.x2, box2d.y2}) out += ' ' + text::fmt_g(v);
  for (double v : {k.h, k.w, k.l, k.x, k.y, k.z, k.ry}) out += ' ' + text::fmt_g(v);
  if (score) out += ' ' + text::fmt_g(*score, 17);
  out += '\n';
  return out;
}

inline std::string format_labels(const std::vector<GroundTruthObject>& gts, const Calibration& calib) {
  std::string out;
  for (const auto& g : gts) {
    if (g.is_dont_care || !g.box3d) {
      out += "DontCare -1 -1 -10 ";
      for (double v : {g.box2d.x1, g.box2d.y1, g.box2d.x2, g.box2d.y2}) out += text::fmt_g(v) + ' ';
      out += "-1 -1 -1 -1000 -1000 -1000 -10\n";
      continue;
    }
    out += format_kitti_row(class_name(g.class_id), g.truncation, g.occlusion, g.box2d,
                            lidar_to_kitti(calib, *g.box3d));
  }
  return out;
}

}  // namespace clocs
