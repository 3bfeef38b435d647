// SPDX-License-Identifier: Apache-2.0
//
// Sparse joint-candidate tensor.
//
// Conceptually T is a (k + 1) x n x 4 array over (2D candidate i, 3D candidate
// j) with channels {IoU(i, j), s2d_i, s3d_j, d_j}. Only pairs whose image IoU
// is positive are stored. A 3D candidate that intersects no 2D candidate (or
// that does not project into the image) gets one element in the extra row k
// with IoU = s2d = -1, so every 3D candidate is represented.
#pragma once

#include <algorithm>
#include <bit>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clocs/candidates.hpp"
#include "clocs/geometry.hpp"

namespace clocs {

inline constexpr std::int32_t kSentinel = -1;

struct JointElement {
  std::int32_t i = kSentinel;  // class-local 2D index, or kSentinel
  std::int32_t j = 0;          // class-local 3D index
  double iou = -1.0;
  double s2d = -1.0;
  double s3d = 0.0;
  double d_norm = 0.0;

  bool is_sentinel() const { return i == kSentinel; }
  std::array<double, 4> channels() const { return {iou, s2d, s3d, d_norm}; }
  bool operator==(const JointElement&) const = default;
};

/// Non-empty elements of T for one class, ordered by (j, i) with the
/// sentinel (if any) being the only element of its column.
struct SparseJointTensor {
  ClassId class_id = ClassId::kCar;
  int k = 0;
  int n = 0;
  std::vector<JointElement> elements;
  std::vector<std::int32_t> column_offsets;  // size n + 1; column j is [off[j], off[j+1])
  std::vector<std::int32_t> index2d;         // class-local i -> frame dets2d index
  std::vector<std::int32_t> index3d;         // class-local j -> frame dets3d index

  std::span<const JointElement> column(int j) const {
    return std::span<const JointElement>(elements).subspan(
        column_offsets[j], column_offsets[j + 1] - column_offsets[j]);
  }
  std::size_t size() const { return elements.size(); }
};

struct ChannelMask {
  bool iou = true;
  bool s2d = true;
  bool s3d = true;
  bool dist = true;
  bool operator==(const ChannelMask&) const = default;
};

struct EncoderConfig {
  double d_max = 100.0;  // meters; normalized distance saturates at 1
  double min_iou = 0.0;  // a pair is kept when IoU > min_iou
  ProjectionOptions projection{};
};

namespace detail {

// Buckets 2D boxes into vertical image strips, one bitmask per strip, so a
// projected hull only tests boxes in the strips it spans.
class StripIndex {
 public:
  explicit StripIndex(std::span<const Box2D> boxes)
      : boxes_(boxes), words_((boxes.size() + 63) / 64), scratch_(words_, 0) {
    if (boxes.empty()) return;
    lo_ = boxes[0].x1;
    double hi = boxes[0].x2;
    for (const auto& b : boxes) {
      lo_ = std::min(lo_, b.x1);
      hi = std::max(hi, b.x2);
    }
    strips_ = std::clamp<int>(static_cast<int>(boxes.size()) / 2, 1, 128);
    inv_width_ = strips_ / std::max(hi - lo_, 1e-9);
    masks_.assign(static_cast<std::size_t>(strips_) * words_, 0);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      auto [s0, s1] = range(boxes[i].x1, boxes[i].x2);
      for (int s = s0; s <= s1; ++s) masks_[s * words_ + i / 64] |= std::uint64_t{1} << (i % 64);
    }
  }

  /// Indices (ascending) of boxes whose x-extent may intersect [x1, x2].
  void query(double x1, double x2, std::vector<std::int32_t>& out) {
    out.clear();
    if (boxes_.empty()) return;
    auto [s0, s1] = range(x1, x2);
    std::fill(scratch_.begin(), scratch_.end(), 0);
    for (int s = s0; s <= s1; ++s) {
      const std::uint64_t* m = masks_.data() + s * words_;
      for (std::size_t w = 0; w < words_; ++w) scratch_[w] |= m[w];
    }
    for (std::size_t w = 0; w < words_; ++w) {
      for (std::uint64_t bits = scratch_[w]; bits; bits &= bits - 1) {
        out.push_back(static_cast<std::int32_t>(w * 64 + std::countr_zero(bits)));
      }
    }
  }

 private:
  std::pair<int, int> range(double x1, double x2) const {
    auto clampi = [&](double v) {
      return std::clamp(static_cast<int>(std::floor((v - lo_) * inv_width_)), 0, strips_ - 1);
    };
    return {clampi(x1), clampi(x2)};
  }

  std::span<const Box2D> boxes_;
  std::size_t words_ = 0;
  double lo_ = 0.0, inv_width_ = 1.0;
  int strips_ = 1;
  std::vector<std::uint64_t> masks_;  // strips_ x words_
  std::vector<std::uint64_t> scratch_;
};

}  // namespace detail

/// Encodes one class of a frame. Other-class candidates never pair with 2D
/// candidates and are represented by sentinels only.
/// `t` is overwritten; its buffers are reused, which matters for large
/// frames processed back to back.
inline void encode_class_into(const FrameCandidates& fc, ClassId cls, const EncoderConfig& cfg,
                              SparseJointTensor& t) {
  t.class_id = cls;
  t.elements.clear();
  t.column_offsets.clear();
  t.index2d.clear();
  t.index3d.clear();
  std::vector<Box2D> boxes2d;
  std::vector<double> scores2d;
  if (cls != ClassId::kOther) {
    for (std::size_t i = 0; i < fc.dets2d.size(); ++i) {
      if (fc.dets2d[i].class_id != cls) continue;
      t.index2d.push_back(static_cast<std::int32_t>(i));
      boxes2d.push_back(fc.dets2d[i].box);
      scores2d.push_back(fc.dets2d[i].score);
    }
  }
  for (std::size_t j = 0; j < fc.dets3d.size(); ++j) {
    if (fc.dets3d[j].class_id == cls) t.index3d.push_back(static_cast<std::int32_t>(j));
  }
  t.k = static_cast<int>(t.index2d.size());
  t.n = static_cast<int>(t.index3d.size());
  t.column_offsets.reserve(t.n + 1);
  t.column_offsets.push_back(0);
  t.elements.reserve(t.n + t.n / 2);

  BoxProjector projector(fc.calib, cfg.projection);
  detail::StripIndex strips(boxes2d);
  std::vector<std::int32_t> hits;
  for (int j = 0; j < t.n; ++j) {
    const auto& det = fc.dets3d[t.index3d[j]];
    const double d_norm = normalized_distance(det.box, cfg.d_max);
    bool paired = false;
    if (t.k > 0) {
      if (auto hull = projector.project(det.box)) {
        strips.query(hull->x1, hull->x2, hits);
        for (auto i : hits) {
          const double iou = iou_2d(boxes2d[i], *hull);
          if (iou > cfg.min_iou) {
            t.elements.push_back({i, j, iou, scores2d[i], det.score, d_norm});
            paired = true;
          }
        }
      }
    }
    if (!paired) t.elements.push_back({kSentinel, j, -1.0, -1.0, det.score, d_norm});
    t.column_offsets.push_back(static_cast<std::int32_t>(t.elements.size()));
  }
}

inline SparseJointTensor encode_class(const FrameCandidates& fc, ClassId cls, const EncoderConfig& cfg = {}) {
  SparseJointTensor t;
  encode_class_into(fc, cls, cfg, t);
  return t;
}

/// One tensor per class that has at least one 3D candidate, in class order.
/// Existing tensors in `out` are reused.
inline void encode_frame_into(const FrameCandidates& fc, const EncoderConfig& cfg,
                              std::vector<SparseJointTensor>& out) {
  if (!(cfg.d_max > 0.0)) throw ConfigError("dMax must be positive");
  std::array<bool, kNumClasses> present{};
  for (const auto& d : fc.dets3d) present[static_cast<int>(d.class_id)] = true;
  std::size_t used = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (!present[c]) continue;
    if (out.size() <= used) out.emplace_back();
    encode_class_into(fc, static_cast<ClassId>(c), cfg, out[used++]);
  }
  out.resize(used);
}

inline std::vector<SparseJointTensor> encode_frame(const FrameCandidates& fc, const EncoderConfig& cfg = {}) {
  std::vector<SparseJointTensor> out;
  encode_frame_into(fc, cfg, out);
  return out;
}

/// Zeroes masked-off channels in place.
inline void channel_mask_inplace(SparseJointTensor& t, const ChannelMask& mask) {
  if (mask == ChannelMask{}) return;
  for (auto& e : t.elements) {
    if (!mask.iou) e.iou = 0.0;
    if (!mask.s2d) e.s2d = 0.0;
    if (!mask.s3d) e.s3d = 0.0;
    if (!mask.dist) e.d_norm = 0.0;
  }
}

/// Zeroes masked-off channels in every element, sentinels included.
inline SparseJointTensor channel_mask(SparseJointTensor t, const ChannelMask& mask) {
  channel_mask_inplace(t, mask);
  return t;
}

/// Debug dump, one element per line: classId j i iou s2d s3d dNorm, with
/// frame-level candidate indices and -1 for the sentinel row.
inline std::string format_tensor(const SparseJointTensor& t) {
  std::string out;
  for (const auto& e : t.elements) {
    out += std::to_string(static_cast<int>(t.class_id)) + ' ' + std::to_string(t.index3d[e.j]) + ' ' +
           std::to_string(e.is_sentinel() ? -1 : t.index2d[e.i]);
    for (double v : {e.iou, e.s2d, e.s3d, e.d_norm}) out += ' ' + text::fmt_g(v, 17);
    out += '\n';
  }
  return out;
}

}  // namespace clocs
