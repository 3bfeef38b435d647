// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes and detector candidates for closed-loop testing.
//
// Each frame places non-overlapping ground-truth boxes in the camera field of
// view, then simulates two imperfect detectors that emit pre-NMS candidates:
//
//  * a LiDAR detector whose recall decays with range, whose pose noise grows
//    with range and whose score signal fades with range, plus false positives;
//  * a camera detector whose recall depends on the projected box height,
//    with pixel noise on the box corners, plus image-space false positives.
//
// The LiDAR detector reports a probability p; the log-scale score it emits
// is to_log_score(p), so the sigmoid and log views of the same candidate are
// related by exactly the conversion the ingestion path applies.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "clocs/candidates.hpp"
#include "clocs/geometry.hpp"

namespace clocs {

struct SizeModel {
  double mean_h = 1.53, std_h = 0.07;
  double mean_w = 1.63, std_w = 0.08;
  double mean_l = 3.88, std_l = 0.30;
};

struct Detector3DModel {
  double recall_base = 0.95;
  double recall_distance_decay = 0.012;  // per meter
  double position_noise_std = 0.08;      // meters, at range 0
  double position_noise_growth = 0.003;  // extra std per meter of range
  double yaw_noise_std = 0.04;           // radians
  double size_noise_std = 0.05;          // meters
  double duplicates_mean = 2.0;          // extra candidates per detected object (Poisson)
  double score_signal_mean = 4.0;        // log scale, at range 0
  double score_signal_std = 1.2;
  double score_distance_decay = 0.035;   // signal fades as exp(-decay * range)
  double score_quality_gain = 8.0;       // score += gain * (BEV IoU to GT - 0.7)
  double fp_per_frame = 30.0;            // Poisson mean
  double fp_score_mean = 0.5;
  double fp_score_std = 1.2;
};

struct Detector2DModel {
  double recall_base = 0.8;
  double recall_height_floor = 20.0;  // px; recall scales down linearly below
  double pixel_noise_std = 5.0;
  double duplicates_mean = 1.0;
  double score_signal_mean = 3.0;
  double score_signal_std = 1.0;
  double fp_per_frame = 6.0;
  double fp_score_mean = -1.0;
  double fp_score_std = 1.0;
};

struct CameraModel {
  double focal = 721.5377;
  double cx = 609.5593;
  double cy = 172.854;
  int width = 1242;
  int height = 375;
};

struct SynthConfig {
  std::uint64_t seed = 1;
  int n_frames = 100;
  double cars_per_frame = 8.0;
  double x_min = 4.0, x_max = 60.0;  // forward range of GT centers
  double y_max = 25.0;               // lateral limit, also bounded by the field of view
  double ground_z = -1.73;           // LiDAR frame
  ClassId class_id = ClassId::kCar;
  SizeModel size{};
  Detector3DModel det3d{};
  Detector2DModel det2d{};
  CameraModel camera{};

  void validate() const {
    auto nonneg = [](double v, const char* key) {
      if (!(v >= 0.0)) throw ConfigError(std::string(key) + " must be non-negative");
    };
    auto prob = [](double v, const char* key) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(key) + " must be in [0, 1]");
    };
    if (n_frames < 0) throw ConfigError("nFrames must be non-negative");
    nonneg(cars_per_frame, "carsPerFrame");
    if (!(x_max > x_min && x_min > 0.0)) throw ConfigError("xMin/xMax must satisfy 0 < xMin < xMax");
    if (!(y_max > 0.0)) throw ConfigError("yMax must be positive");
    if (!(size.mean_h > 0 && size.mean_w > 0 && size.mean_l > 0)) throw ConfigError("size means must be positive");
    nonneg(size.std_h, "sizeStdH");
    nonneg(size.std_w, "sizeStdW");
    nonneg(size.std_l, "sizeStdL");
    prob(det3d.recall_base, "det3dRecallBase");
    nonneg(det3d.recall_distance_decay, "det3dRecallDistanceDecay");
    nonneg(det3d.position_noise_std, "det3dPositionNoiseStd");
    nonneg(det3d.position_noise_growth, "det3dPositionNoiseGrowth");
    nonneg(det3d.yaw_noise_std, "det3dYawNoiseStd");
    nonneg(det3d.size_noise_std, "det3dSizeNoiseStd");
    nonneg(det3d.duplicates_mean, "det3dDuplicatesMean");
    nonneg(det3d.score_signal_std, "det3dScoreSignalStd");
    nonneg(det3d.score_distance_decay, "det3dScoreDistanceDecay");
    nonneg(det3d.fp_per_frame, "det3dFpPerFrame");
    nonneg(det3d.fp_score_std, "det3dFpScoreStd");
    prob(det2d.recall_base, "det2dRecallBase");
    nonneg(det2d.recall_height_floor, "det2dRecallHeightFloor");
    nonneg(det2d.pixel_noise_std, "det2dPixelNoiseStd");
    nonneg(det2d.duplicates_mean, "det2dDuplicatesMean");
    nonneg(det2d.score_signal_std, "det2dScoreSignalStd");
    nonneg(det2d.fp_per_frame, "det2dFpPerFrame");
    nonneg(det2d.fp_score_std, "det2dFpScoreStd");
    if (!(camera.focal > 0 && camera.width > 0 && camera.height > 0)) throw ConfigError("camera model must be positive");
  }
};

inline Calibration synthetic_calibration(const CameraModel& cam) {
  Calibration c;
  c.P << cam.focal, 0, cam.cx, 0,  //
      0, cam.focal, cam.cy, 0,     //
      0, 0, 1, 0;
  c.R0.setIdentity();
  // LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd).
  c.tr_velo_to_cam << 0, -1, 0, 0,  //
      0, 0, -1, -0.08,              //
      1, 0, 0, -0.27;
  c.image_width = cam.width;
  c.image_height = cam.height;
  return c;
}

struct SynthFrame {
  FrameCandidates candidates;
  std::vector<GroundTruthObject> labels;
  std::vector<double> probs3d;  // detector probability per 3D candidate
};

struct SynthDataset {
  Calibration calib;
  std::vector<SynthFrame> frames;
};

/// Detection probability of the LiDAR model at a given range.
inline double lidar_recall(const Detector3DModel& m, double range) {
  return m.recall_base * std::exp(-m.recall_distance_decay * range);
}

inline std::string frame_id_for(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return buf;
}

namespace detail {

inline double normal(std::mt19937_64& rng, double mean, double stddev) {
  if (stddev <= 0.0) return mean;
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline int poisson(std::mt19937_64& rng, double mean) {
  if (mean <= 0.0) return 0;
  return std::poisson_distribution<int>(mean)(rng);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline bool bernoulli(std::mt19937_64& rng, double p) {
  if (p >= 1.0) return true;
  if (p <= 0.0) return false;
  return std::bernoulli_distribution(p)(rng);
}

inline std::mt19937_64 frame_rng(std::uint64_t seed, int frame) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(frame), 0x434c4f43u};
  return std::mt19937_64(seq);
}

inline double half_fov_tan(const CameraModel& cam) { return std::min(cam.cx, cam.width - cam.cx) / cam.focal; }

inline Box3D sample_size_box(std::mt19937_64& rng, const SynthConfig& cfg, double x, double y, double theta) {
  const double h = std::max(0.5, normal(rng, cfg.size.mean_h, cfg.size.std_h));
  const double w = std::max(0.5, normal(rng, cfg.size.mean_w, cfg.size.std_w));
  const double l = std::max(0.5, normal(rng, cfg.size.mean_l, cfg.size.std_l));
  return Box3D(h, w, l, x, y, cfg.ground_z + 0.5 * h, theta);
}

}  // namespace detail

/// Generates one frame from its own RNG stream so frames are independent of
/// generation order.
inline SynthFrame generate_frame(const SynthConfig& cfg, const Calibration& calib, int index) {
  auto rng = detail::frame_rng(cfg.seed, index);
  SynthFrame f;
  f.candidates.frame_id = frame_id_for(index);
  f.candidates.calib = calib;
  const BoxProjector clipped(calib, {true});
  const BoxProjector unclipped(calib, {false});
  const double tan_fov = detail::half_fov_tan(cfg.camera);
  const auto& m3 = cfg.det3d;
  const auto& m2 = cfg.det2d;

  // Ground truth, rejection-sampled to be disjoint in BEV and visible.
  const int wanted = detail::poisson(rng, cfg.cars_per_frame);
  std::vector<Box3D> gts;
  for (int attempt = 0; attempt < wanted * 50 && static_cast<int>(gts.size()) < wanted; ++attempt) {
    const double x = detail::uniform(rng, cfg.x_min, cfg.x_max);
    const double ylim = std::min(cfg.y_max, 0.9 * x * tan_fov);
    const double y = detail::uniform(rng, -ylim, ylim);
    const double theta = detail::uniform(rng, -kPi, kPi);
    Box3D b = detail::sample_size_box(rng, cfg, x, y, theta);
    bool overlaps = false;
    for (const auto& g : gts) overlaps = overlaps || bev_intersection(g, b) > 0.0;
    if (overlaps || !clipped.project(b)) continue;
    gts.push_back(b);
  }
  for (const auto& b : gts) {
    GroundTruthObject g;
    g.class_id = cfg.class_id;
    g.box3d = b;
    g.box2d = *clipped.project(b);
    auto full = unclipped.project(b);
    g.truncation = full && full->area() > 0.0 ? std::clamp(1.0 - g.box2d.area() / full->area(), 0.0, 1.0) : 0.0;
    g.occlusion = 0;
    f.labels.push_back(g);
  }

  auto emit3d = [&](const Box3D& box, double raw_score) {
    const double p = to_sigmoid_score(raw_score);
    f.probs3d.push_back(p);
    f.candidates.dets3d.push_back({box, to_log_score(p), cfg.class_id});
  };
  auto emit2d = [&](Box2D box, double score) {
    box.x1 = std::clamp(box.x1, 0.0, double(cfg.camera.width));
    box.x2 = std::clamp(box.x2, 0.0, double(cfg.camera.width));
    box.y1 = std::clamp(box.y1, 0.0, double(cfg.camera.height));
    box.y2 = std::clamp(box.y2, 0.0, double(cfg.camera.height));
    if (box.valid()) f.candidates.dets2d.push_back({box, score, cfg.class_id});
  };

  // LiDAR detector.
  for (const auto& g : gts) {
    const double range = distance_xy(g);
    if (!detail::bernoulli(rng, lidar_recall(m3, range))) continue;
    const int copies = 1 + detail::poisson(rng, m3.duplicates_mean);
    const double pos_std = m3.position_noise_std + m3.position_noise_growth * range;
    const double signal = m3.score_signal_mean * std::exp(-m3.score_distance_decay * range);
    for (int c = 0; c < copies; ++c) {
      const double h = std::max(0.3, g.h + detail::normal(rng, 0.0, m3.size_noise_std));
      const double w = std::max(0.3, g.w + detail::normal(rng, 0.0, m3.size_noise_std));
      const double l = std::max(0.3, g.l + detail::normal(rng, 0.0, m3.size_noise_std));
      Box3D b(h, w, l, g.x + detail::normal(rng, 0.0, pos_std), g.y + detail::normal(rng, 0.0, pos_std),
              g.z + detail::normal(rng, 0.0, 0.5 * pos_std), g.theta + detail::normal(rng, 0.0, m3.yaw_noise_std));
      const double quality = iou_bev(b, g);
      const double score = signal + m3.score_quality_gain * (quality - 0.7) +
                           detail::normal(rng, 0.0, m3.score_signal_std);
      emit3d(b, score);
    }
  }
  const int fp3 = detail::poisson(rng, m3.fp_per_frame);
  for (int k = 0; k < fp3; ++k) {
    const double x = detail::uniform(rng, cfg.x_min, cfg.x_max);
    const double ylim = std::min(cfg.y_max, x * tan_fov);
    const double y = detail::uniform(rng, -ylim, ylim);
    Box3D b = detail::sample_size_box(rng, cfg, x, y, detail::uniform(rng, -kPi, kPi));
    emit3d(b, detail::normal(rng, m3.fp_score_mean, m3.fp_score_std));
  }

  // Camera detector.
  for (const auto& g : f.labels) {
    const double height = g.box2d.height();
    const double p = m2.recall_base * std::min(1.0, height / std::max(m2.recall_height_floor, 1e-9));
    if (!detail::bernoulli(rng, p)) continue;
    const int copies = 1 + detail::poisson(rng, m2.duplicates_mean);
    for (int c = 0; c < copies; ++c) {
      Box2D b = g.box2d;
      b.x1 += detail::normal(rng, 0.0, m2.pixel_noise_std);
      b.y1 += detail::normal(rng, 0.0, m2.pixel_noise_std);
      b.x2 += detail::normal(rng, 0.0, m2.pixel_noise_std);
      b.y2 += detail::normal(rng, 0.0, m2.pixel_noise_std);
      emit2d(b, detail::normal(rng, m2.score_signal_mean, m2.score_signal_std));
    }
  }
  const int fp2 = detail::poisson(rng, m2.fp_per_frame);
  for (int k = 0; k < fp2; ++k) {
    const double w = detail::uniform(rng, 15.0, 200.0);
    const double h = w * detail::uniform(rng, 0.5, 1.0);
    const double cx = detail::uniform(rng, 0.0, cfg.camera.width);
    const double cy = detail::uniform(rng, 0.35, 0.75) * cfg.camera.height;
    emit2d({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h},
           detail::normal(rng, m2.fp_score_mean, m2.fp_score_std));
  }
  return f;
}

inline SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset ds;
  ds.calib = synthetic_calibration(cfg.camera);
  ds.frames.reserve(cfg.n_frames);
  for (int i = 0; i < cfg.n_frames; ++i) ds.frames.push_back(generate_frame(cfg, ds.calib, i));
  return ds;
}

}  // namespace clocs
