// SPDX-License-Identifier: Apache-2.0
//
// Box conventions, KITTI calibration, projection and IoU.
//
// LiDAR frame: x forward, y left, z up. A Box3D is centered at (x, y, z) in
// all three axes; its vertical extent is [z - h/2, z + h/2]. Length l runs
// along the heading (theta = 0 points along +x), width w along the lateral
// axis. KITTI camera-frame labels (bottom-center origin) are converted to
// this convention on ingestion, see candidates.hpp.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "clocs/common.hpp"

namespace clocs {

struct Box2D {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool operator==(const Box2D&) const = default;
};

/// 7-DOF box, yaw about the vertical axis only. theta is wrapped into
/// (-pi, pi] by the constructor; non-positive dimensions throw.
struct Box3D {
  double h = 1.0, w = 1.0, l = 1.0;
  double x = 0.0, y = 0.0, z = 0.0;
  double theta = 0.0;

  Box3D() = default;
  Box3D(double h_, double w_, double l_, double x_, double y_, double z_, double theta_)
      : h(h_), w(w_), l(l_), x(x_), y(y_), z(z_), theta(normalize_angle(theta_)) {
    if (!(h > 0.0 && w > 0.0 && l > 0.0)) {
      throw std::invalid_argument("Box3D dimensions must be positive");
    }
  }

  double volume() const { return h * w * l; }
  double z_min() const { return z - 0.5 * h; }
  double z_max() const { return z + 0.5 * h; }
  bool operator==(const Box3D&) const = default;
};

using Mat34 = Eigen::Matrix<double, 3, 4>;

struct Calibration {
  Mat34 P = Mat34::Zero();               // P2, rectified camera -> pixels
  Eigen::Matrix3d R0 = Eigen::Matrix3d::Identity();
  Mat34 tr_velo_to_cam = Mat34::Zero();  // LiDAR -> unrectified camera
  int image_width = 1242;
  int image_height = 375;

  static Calibration identity(int width = 1242, int height = 375) {
    Calibration c;
    c.P.setZero();
    c.P.block<3, 3>(0, 0).setIdentity();
    c.R0.setIdentity();
    c.tr_velo_to_cam.setZero();
    c.tr_velo_to_cam.block<3, 3>(0, 0).setIdentity();
    c.image_width = width;
    c.image_height = height;
    return c;
  }

  /// Composite LiDAR -> homogeneous pixel map, P * R0 * Tr.
  Mat34 lidar_to_image() const {
    Eigen::Matrix4d r0 = Eigen::Matrix4d::Identity();
    r0.block<3, 3>(0, 0) = R0;
    Eigen::Matrix4d tr = Eigen::Matrix4d::Identity();
    tr.block<3, 4>(0, 0) = tr_velo_to_cam;
    return P * r0 * tr;
  }

  /// LiDAR point -> rectified camera frame.
  Eigen::Vector3d lidar_to_camera(const Eigen::Vector3d& p) const {
    return R0 * (tr_velo_to_cam.block<3, 3>(0, 0) * p + tr_velo_to_cam.col(3));
  }

  /// Rectified camera frame -> LiDAR point (inverse of lidar_to_camera).
  Eigen::Vector3d camera_to_lidar(const Eigen::Vector3d& c) const {
    Eigen::Vector3d unrect = R0.partialPivLu().solve(c);
    return tr_velo_to_cam.block<3, 3>(0, 0).partialPivLu().solve(unrect - tr_velo_to_cam.col(3));
  }

  /// LiDAR direction (no translation) -> rectified camera frame.
  Eigen::Vector3d lidar_dir_to_camera(const Eigen::Vector3d& d) const {
    return R0 * (tr_velo_to_cam.block<3, 3>(0, 0) * d);
  }

  /// Max-norm deviation of R^T R from identity for R0 and the rotation of Tr.
  double orthonormality_error() const {
    Eigen::Matrix3d rt = tr_velo_to_cam.block<3, 3>(0, 0);
    double e0 = (R0.transpose() * R0 - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    double e1 = (rt.transpose() * rt - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return std::max(e0, e1);
  }
};

namespace detail {

inline std::vector<double> calib_values(const std::vector<text::Line>& lines, std::string_view key,
                                        std::size_t count) {
  for (const auto& line : lines) {
    auto toks = text::split_ws(line.content);
    if (toks.empty() || toks.front() != std::string(key) + ":") continue;
    if (toks.size() - 1 != count) {
      throw ParseError("calibration key " + std::string(key) + ": expected " + std::to_string(count) +
                       " values, got " + std::to_string(toks.size() - 1));
    }
    std::vector<double> vals(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (!text::parse_double(toks[i + 1], vals[i])) {
        throw ParseError("calibration key " + std::string(key) + ": non-numeric token '" +
                         std::string(toks[i + 1]) + "'");
      }
    }
    return vals;
  }
  throw ParseError("calibration missing key " + std::string(key));
}

}  // namespace detail

/// Parses the KITTI object calibration format. Only P2, R0_rect and
/// Tr_velo_to_cam are read; other keys are ignored. Image size is not part
/// of the file and is supplied by the caller.
inline Calibration parse_calibration(std::string_view text_in, int image_width = 1242,
                                     int image_height = 375) {
  auto lines = text::content_lines(text_in);
  Calibration c;
  auto p2 = detail::calib_values(lines, "P2", 12);
  auto r0 = detail::calib_values(lines, "R0_rect", 9);
  auto tr = detail::calib_values(lines, "Tr_velo_to_cam", 12);
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) {
      c.P(r, k) = p2[r * 4 + k];
      c.tr_velo_to_cam(r, k) = tr[r * 4 + k];
    }
    for (int k = 0; k < 3; ++k) c.R0(r, k) = r0[r * 3 + k];
  }
  c.image_width = image_width;
  c.image_height = image_height;
  Eigen::Matrix3d rt = c.tr_velo_to_cam.block<3, 3>(0, 0);
  if ((c.R0.transpose() * c.R0 - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() >= 1e-6) {
    throw ParseError("calibration key R0_rect: matrix is not orthonormal");
  }
  if ((rt.transpose() * rt - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() >= 1e-6) {
    throw ParseError("calibration key Tr_velo_to_cam: rotation is not orthonormal");
  }
  return c;
}

inline std::string format_calibration(const Calibration& c) {
  std::string out;
  auto row = [&](std::string_view key, auto&& m, int rows, int cols) {
    out += key;
    out += ':';
    for (int r = 0; r < rows; ++r)
      for (int k = 0; k < cols; ++k) {
        out += ' ';
        out += text::fmt_g(m(r, k), 17);
      }
    out += '\n';
  };
  row("P2", c.P, 3, 4);
  row("R0_rect", c.R0, 3, 3);
  row("Tr_velo_to_cam", c.tr_velo_to_cam, 3, 4);
  return out;
}

/// Corner order: bottom face CCW seen from above starting at front-left
/// (+l/2, +w/2), then the top face in the same order. Corner i and i + 4 are
/// vertically aligned.
inline std::array<Eigen::Vector3d, 8> box3d_corners(const Box3D& b) {
  static constexpr double kA[4] = {1, -1, -1, 1};
  static constexpr double kB[4] = {1, 1, -1, -1};
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  std::array<Eigen::Vector3d, 8> out;
  for (int face = 0; face < 2; ++face) {
    const double dz = face == 0 ? -0.5 * b.h : 0.5 * b.h;
    for (int k = 0; k < 4; ++k) {
      const double ox = kA[k] * 0.5 * b.l, oy = kB[k] * 0.5 * b.w;
      out[face * 4 + k] = {b.x + c * ox - s * oy, b.y + s * ox + c * oy, b.z + dz};
    }
  }
  return out;
}

struct ImagePoint {
  double u = std::numeric_limits<double>::quiet_NaN();
  double v = std::numeric_limits<double>::quiet_NaN();
  double depth = 0.0;
  bool in_front = false;  // false when depth <= 0; u, v are then NaN
};

inline std::vector<ImagePoint> project_points(const Calibration& calib,
                                              std::span<const Eigen::Vector3d> pts) {
  const Mat34 m = calib.lidar_to_image();
  std::vector<ImagePoint> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Eigen::Vector3d h = m.block<3, 3>(0, 0) * pts[i] + m.col(3);
    out[i].depth = h.z();
    if (h.z() > 0.0) {
      out[i].u = h.x() / h.z();
      out[i].v = h.y() / h.z();
      out[i].in_front = true;
    }
  }
  return out;
}

struct ProjectionOptions {
  bool clip_to_image = true;
};

/// Projects boxes into the image with a precomputed composite matrix. Corners
/// behind the camera are dropped from the hull (an approximation to frustum
/// clipping); if none are in front the result is empty.
class BoxProjector {
 public:
  explicit BoxProjector(const Calibration& calib, ProjectionOptions opts = {})
      : m_(calib.lidar_to_image()),
        width_(calib.image_width),
        height_(calib.image_height),
        opts_(opts) {}

  std::optional<Box2D> project(const Box3D& b) const {
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    // Homogeneous image-space images of the center and the three half-axes.
    double base[3], ax[3], ay[3], az[3];
    for (int r = 0; r < 3; ++r) {
      base[r] = m_(r, 0) * b.x + m_(r, 1) * b.y + m_(r, 2) * b.z + m_(r, 3);
      ax[r] = 0.5 * b.l * (m_(r, 0) * c + m_(r, 1) * s);
      ay[r] = 0.5 * b.w * (-m_(r, 0) * s + m_(r, 1) * c);
      az[r] = 0.5 * b.h * m_(r, 2);
    }
    double umin = std::numeric_limits<double>::infinity(), vmin = umin;
    double umax = -umin, vmax = -umin;
    int in_front = 0;
    for (int k = 0; k < 8; ++k) {
      const double sa = (k & 1) ? -1.0 : 1.0;
      const double sb = (k & 2) ? -1.0 : 1.0;
      const double sc = (k & 4) ? -1.0 : 1.0;
      const double w = base[2] + sa * ax[2] + sb * ay[2] + sc * az[2];
      if (!(w > 0.0)) continue;
      const double inv = 1.0 / w;
      const double u = (base[0] + sa * ax[0] + sb * ay[0] + sc * az[0]) * inv;
      const double v = (base[1] + sa * ax[1] + sb * ay[1] + sc * az[1]) * inv;
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
      ++in_front;
    }
    if (in_front == 0) return std::nullopt;
    Box2D hull{umin, vmin, umax, vmax};
    if (opts_.clip_to_image) {
      hull.x1 = std::clamp(hull.x1, 0.0, double(width_));
      hull.x2 = std::clamp(hull.x2, 0.0, double(width_));
      hull.y1 = std::clamp(hull.y1, 0.0, double(height_));
      hull.y2 = std::clamp(hull.y2, 0.0, double(height_));
    }
    if (!hull.valid()) return std::nullopt;
    return hull;
  }

 private:
  Mat34 m_;
  int width_, height_;
  ProjectionOptions opts_;
};

inline std::optional<Box2D> project_box3d(const Calibration& calib, const Box3D& b,
                                          ProjectionOptions opts = {}) {
  return BoxProjector(calib, opts).project(b);
}

inline double intersection_2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

inline double iou_2d(const Box2D& a, const Box2D& b) {
  const double inter = intersection_2d(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

// ---------------------------------------------------------------------------
// Bird's-eye-view polygons

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline constexpr double kVertexMergeTol = 1e-9;
inline constexpr double kMinArea = 1e-12;

/// Convex CCW polygon with fixed capacity. Intersections of two convex
/// polygons of n and m vertices have at most n + m vertices.
struct PolygonBEV {
  static constexpr int kCapacity = 16;
  std::array<Vec2, kCapacity> vertices{};
  int size = 0;

  void push(const Vec2& p) {
    if (size < kCapacity) vertices[size++] = p;
  }
  const Vec2& operator[](int i) const { return vertices[i]; }
};

/// Footprint rectangle of a box, CCW, same order as the bottom corners.
inline PolygonBEV footprint(const Box3D& b) {
  static constexpr double kA[4] = {1, -1, -1, 1};
  static constexpr double kB[4] = {1, 1, -1, -1};
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  PolygonBEV p;
  for (int k = 0; k < 4; ++k) {
    const double ox = kA[k] * 0.5 * b.l, oy = kB[k] * 0.5 * b.w;
    p.push({b.x + c * ox - s * oy, b.y + s * ox + c * oy});
  }
  return p;
}

/// Shoelace area (positive for CCW).
inline double polygon_area(const PolygonBEV& p) {
  if (p.size < 3) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < p.size; ++i) {
    const Vec2& a = p[i];
    const Vec2& b = p[(i + 1) % p.size];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

/// Sutherland-Hodgman clipping of a convex subject by a convex CCW clip
/// polygon. Near-coincident vertices are merged.
inline PolygonBEV clip_convex(const PolygonBEV& subject, const PolygonBEV& clip) {
  PolygonBEV cur = subject;
  for (int e = 0; e < clip.size && cur.size > 0; ++e) {
    const Vec2& c0 = clip[e];
    const Vec2& c1 = clip[(e + 1) % clip.size];
    PolygonBEV next;
    for (int i = 0; i < cur.size; ++i) {
      const Vec2& p = cur[i];
      const Vec2& q = cur[(i + 1) % cur.size];
      const double dp = cross(c0, c1, p);
      const double dq = cross(c0, c1, q);
      if (dp >= 0.0) next.push(p);
      if ((dp >= 0.0) != (dq >= 0.0)) {
        const double t = dp / (dp - dq);
        next.push({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    cur = next;
  }
  PolygonBEV merged;
  for (int i = 0; i < cur.size; ++i) {
    const Vec2& p = cur[i];
    if (merged.size > 0) {
      const Vec2& last = merged[merged.size - 1];
      if (std::hypot(p.x - last.x, p.y - last.y) < kVertexMergeTol) continue;
    }
    merged.push(p);
  }
  while (merged.size > 1 && std::hypot(merged[0].x - merged[merged.size - 1].x,
                                       merged[0].y - merged[merged.size - 1].y) < kVertexMergeTol) {
    --merged.size;
  }
  return merged;
}

namespace detail {

// Orders a pair so the IoU arithmetic does not depend on argument order.
inline bool box_less(const Box3D& a, const Box3D& b) {
  return std::tie(a.x, a.y, a.z, a.theta, a.l, a.w, a.h) <
         std::tie(b.x, b.y, b.z, b.theta, b.l, b.w, b.h);
}

}  // namespace detail

/// Area of the intersection of the two footprints (m^2).
inline double bev_intersection(const Box3D& a_in, const Box3D& b_in) {
  const bool swap = detail::box_less(b_in, a_in);
  const Box3D& a = swap ? b_in : a_in;
  const Box3D& b = swap ? a_in : b_in;
  const double ra = 0.5 * std::hypot(a.l, a.w), rb = 0.5 * std::hypot(b.l, b.w);
  const double dx = a.x - b.x, dy = a.y - b.y;
  if (dx * dx + dy * dy >= (ra + rb) * (ra + rb)) return 0.0;
  const double area = polygon_area(clip_convex(footprint(a), footprint(b)));
  return area < kMinArea ? 0.0 : area;
}

/// Arguments are put in canonical order so the result is bitwise symmetric
/// even when the union sum is contracted into a fused multiply-add.
inline double iou_bev(const Box3D& a_in, const Box3D& b_in) {
  const bool swap = detail::box_less(b_in, a_in);
  const Box3D& a = swap ? b_in : a_in;
  const Box3D& b = swap ? a_in : b_in;
  const double inter = bev_intersection(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.l * a.w + b.l * b.w - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double iou_3d(const Box3D& a_in, const Box3D& b_in) {
  const bool swap = detail::box_less(b_in, a_in);
  const Box3D& a = swap ? b_in : a_in;
  const Box3D& b = swap ? a_in : b_in;
  const double overlap_h = std::min(a.z_max(), b.z_max()) - std::max(a.z_min(), b.z_min());
  if (overlap_h <= 0.0) return 0.0;
  const double inter = bev_intersection(a, b) * overlap_h;
  if (inter <= 0.0) return 0.0;
  return std::clamp(inter / (a.volume() + b.volume() - inter), 0.0, 1.0);
}

inline double distance_xy(const Box3D& b) { return std::hypot(b.x, b.y); }

inline double normalized_distance(const Box3D& b, double d_max) {
  return std::min(distance_xy(b) / d_max, 1.0);
}

}  // namespace clocs
