// SPDX-License-Identifier: Apache-2.0
//
// Flat JSON configuration files. Every key is optional; unknown keys are an
// error that names the key.
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "clocs/candidates.hpp"
#include "clocs/encoder.hpp"
#include "clocs/eval.hpp"
#include "clocs/nms.hpp"
#include "clocs/synth.hpp"
#include "clocs/training.hpp"

namespace clocs {

/// Everything the train / fuse / eval / ablate commands need.
struct PipelineConfig {
  EncoderConfig encoder{};
  ChannelMask mask{};
  TrainConfig train{};
  NmsConfig nms{};
  ScoreScale score_scale_2d = ScoreScale::kLog;
  ScoreScale score_scale_3d = ScoreScale::kLog;
  Det3DFormat det3d_format = Det3DFormat::kLidar;
  std::string det3d_dir = "det3d";
  EvalConfig eval{};
  int image_width = 1242;
  int image_height = 375;
  double ablation_holdout = 0.2;  // eval fraction when ablate has no separate eval set
};

namespace detail {

// Reads typed values out of a flat JSON object and remembers which keys were
// consumed so leftovers can be reported.
class KeyReader {
 public:
  explicit KeyReader(const nlohmann::json& j) : j_(j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key ") + key + ": wrong type");
    }
  }

  template <typename T, typename F>
  void get_as(const char* key, T& out, F&& convert) {
    std::string s;
    auto it = j_.find(key);
    if (it == j_.end()) return;
    get(key, s);
    try {
      out = convert(s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config key ") + key + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::set<std::string> used_;
};

inline nlohmann::json parse_json(std::string_view text_in, const char* what) {
  try {
    return nlohmann::json::parse(text_in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
  }
}

inline ClassId class_from_config(const std::string& s) {
  auto c = class_from_name(s);
  if (c == ClassId::kOther && s != "Other") throw ConfigError("unknown class '" + s + "'");
  return c;
}

}  // namespace detail

inline PipelineConfig parse_pipeline_config(std::string_view text_in) {
  PipelineConfig c;
  auto j = detail::parse_json(text_in, "pipeline config");
  detail::KeyReader r(j);
  r.get("dMax", c.encoder.d_max);
  r.get("minIou", c.encoder.min_iou);
  r.get("clipToImage", c.encoder.projection.clip_to_image);
  r.get("useIou", c.mask.iou);
  r.get("useS2d", c.mask.s2d);
  r.get("useS3d", c.mask.s3d);
  r.get("useDist", c.mask.dist);
  r.get("lr0", c.train.lr0);
  r.get("lrDecay", c.train.lr_decay);
  r.get("epochs", c.train.epochs);
  r.get("seed", c.train.seed);
  r.get("adamBeta1", c.train.adam_beta1);
  r.get("adamBeta2", c.train.adam_beta2);
  r.get("adamEps", c.train.adam_eps);
  r.get("positiveIouCar", c.train.positive_iou[0]);
  r.get("positiveIouPedestrian", c.train.positive_iou[1]);
  r.get("positiveIouCyclist", c.train.positive_iou[2]);
  r.get_as("matchMetric", c.train.match_metric, match_metric_from_name);
  r.get("alpha", c.train.loss.alpha);
  r.get("gamma", c.train.loss.gamma);
  r.get("focalEnabled", c.train.loss.focal_enabled);
  r.get("nmsIouThreshold", c.nms.iou_threshold);
  r.get_as("nmsMetric", c.nms.metric, nms_metric_from_name);
  double floor = 0.0;
  if (j.contains("nmsScoreFloor")) {
    r.get("nmsScoreFloor", floor);
    c.nms.score_floor = floor;
  }
  r.get_as("scoreScale2d", c.score_scale_2d, score_scale_from_name);
  r.get_as("scoreScale3d", c.score_scale_3d, score_scale_from_name);
  r.get_as("det3dFormat", c.det3d_format, [](const std::string& s) {
    if (s == "lidar") return Det3DFormat::kLidar;
    if (s == "kitti") return Det3DFormat::kKitti;
    throw ConfigError("expected lidar or kitti");
  });
  r.get("det3dDir", c.det3d_dir);
  r.get_as("evalClass", c.eval.class_id, detail::class_from_config);
  r.get("evalIouCar", c.eval.iou_threshold[0]);
  r.get("evalIouPedestrian", c.eval.iou_threshold[1]);
  r.get("evalIouCyclist", c.eval.iou_threshold[2]);
  r.get("imageWidth", c.image_width);
  r.get("imageHeight", c.image_height);
  r.get("ablationHoldout", c.ablation_holdout);
  r.finish();
  if (!(c.encoder.d_max > 0.0)) throw ConfigError("config key dMax: must be positive");
  if (!(c.ablation_holdout > 0.0 && c.ablation_holdout < 1.0)) {
    throw ConfigError("config key ablationHoldout: must be in (0, 1)");
  }
  c.train.validate();
  c.nms.validate();
  return c;
}

inline nlohmann::json pipeline_config_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["dMax"] = c.encoder.d_max;
  j["minIou"] = c.encoder.min_iou;
  j["clipToImage"] = c.encoder.projection.clip_to_image;
  j["useIou"] = c.mask.iou;
  j["useS2d"] = c.mask.s2d;
  j["useS3d"] = c.mask.s3d;
  j["useDist"] = c.mask.dist;
  j["lr0"] = c.train.lr0;
  j["lrDecay"] = c.train.lr_decay;
  j["epochs"] = c.train.epochs;
  j["seed"] = c.train.seed;
  j["adamBeta1"] = c.train.adam_beta1;
  j["adamBeta2"] = c.train.adam_beta2;
  j["adamEps"] = c.train.adam_eps;
  j["positiveIouCar"] = c.train.positive_iou[0];
  j["positiveIouPedestrian"] = c.train.positive_iou[1];
  j["positiveIouCyclist"] = c.train.positive_iou[2];
  j["matchMetric"] = match_metric_name(c.train.match_metric);
  j["alpha"] = c.train.loss.alpha;
  j["gamma"] = c.train.loss.gamma;
  j["focalEnabled"] = c.train.loss.focal_enabled;
  j["nmsIouThreshold"] = c.nms.iou_threshold;
  j["nmsMetric"] = c.nms.metric == NmsMetric::kBev ? "bev" : c.nms.metric == NmsMetric::k3d ? "3d" : "2d";
  if (c.nms.score_floor) j["nmsScoreFloor"] = *c.nms.score_floor;
  j["scoreScale2d"] = c.score_scale_2d == ScoreScale::kLog ? "log" : "sigmoid";
  j["scoreScale3d"] = c.score_scale_3d == ScoreScale::kLog ? "log" : "sigmoid";
  j["det3dFormat"] = c.det3d_format == Det3DFormat::kLidar ? "lidar" : "kitti";
  j["det3dDir"] = c.det3d_dir;
  j["evalClass"] = class_name(c.eval.class_id);
  j["evalIouCar"] = c.eval.iou_threshold[0];
  j["evalIouPedestrian"] = c.eval.iou_threshold[1];
  j["evalIouCyclist"] = c.eval.iou_threshold[2];
  j["imageWidth"] = c.image_width;
  j["imageHeight"] = c.image_height;
  j["ablationHoldout"] = c.ablation_holdout;
  return j;
}

inline SynthConfig parse_synth_config(std::string_view text_in) {
  SynthConfig c;
  auto j = detail::parse_json(text_in, "synth config");
  detail::KeyReader r(j);
  r.get("seed", c.seed);
  r.get("nFrames", c.n_frames);
  r.get("carsPerFrame", c.cars_per_frame);
  r.get("xMin", c.x_min);
  r.get("xMax", c.x_max);
  r.get("yMax", c.y_max);
  r.get("groundZ", c.ground_z);
  r.get_as("class", c.class_id, detail::class_from_config);
  r.get("sizeMeanH", c.size.mean_h);
  r.get("sizeStdH", c.size.std_h);
  r.get("sizeMeanW", c.size.mean_w);
  r.get("sizeStdW", c.size.std_w);
  r.get("sizeMeanL", c.size.mean_l);
  r.get("sizeStdL", c.size.std_l);
  auto& d3 = c.det3d;
  r.get("det3dRecallBase", d3.recall_base);
  r.get("det3dRecallDistanceDecay", d3.recall_distance_decay);
  r.get("det3dPositionNoiseStd", d3.position_noise_std);
  r.get("det3dPositionNoiseGrowth", d3.position_noise_growth);
  r.get("det3dYawNoiseStd", d3.yaw_noise_std);
  r.get("det3dSizeNoiseStd", d3.size_noise_std);
  r.get("det3dDuplicatesMean", d3.duplicates_mean);
  r.get("det3dScoreSignalMean", d3.score_signal_mean);
  r.get("det3dScoreSignalStd", d3.score_signal_std);
  r.get("det3dScoreDistanceDecay", d3.score_distance_decay);
  r.get("det3dScoreQualityGain", d3.score_quality_gain);
  r.get("det3dFpPerFrame", d3.fp_per_frame);
  r.get("det3dFpScoreMean", d3.fp_score_mean);
  r.get("det3dFpScoreStd", d3.fp_score_std);
  auto& d2 = c.det2d;
  r.get("det2dRecallBase", d2.recall_base);
  r.get("det2dRecallHeightFloor", d2.recall_height_floor);
  r.get("det2dPixelNoiseStd", d2.pixel_noise_std);
  r.get("det2dDuplicatesMean", d2.duplicates_mean);
  r.get("det2dScoreSignalMean", d2.score_signal_mean);
  r.get("det2dScoreSignalStd", d2.score_signal_std);
  r.get("det2dFpPerFrame", d2.fp_per_frame);
  r.get("det2dFpScoreMean", d2.fp_score_mean);
  r.get("det2dFpScoreStd", d2.fp_score_std);
  r.get("cameraFocal", c.camera.focal);
  r.get("cameraCx", c.camera.cx);
  r.get("cameraCy", c.camera.cy);
  r.get("imageWidth", c.camera.width);
  r.get("imageHeight", c.camera.height);
  r.finish();
  c.validate();
  return c;
}

inline nlohmann::json synth_config_json(const SynthConfig& c) {
  const auto& d3 = c.det3d;
  const auto& d2 = c.det2d;
  return {{"seed", c.seed},
          {"nFrames", c.n_frames},
          {"carsPerFrame", c.cars_per_frame},
          {"xMin", c.x_min},
          {"xMax", c.x_max},
          {"yMax", c.y_max},
          {"groundZ", c.ground_z},
          {"class", class_name(c.class_id)},
          {"sizeMeanH", c.size.mean_h},
          {"sizeStdH", c.size.std_h},
          {"sizeMeanW", c.size.mean_w},
          {"sizeStdW", c.size.std_w},
          {"sizeMeanL", c.size.mean_l},
          {"sizeStdL", c.size.std_l},
          {"det3dRecallBase", d3.recall_base},
          {"det3dRecallDistanceDecay", d3.recall_distance_decay},
          {"det3dPositionNoiseStd", d3.position_noise_std},
          {"det3dPositionNoiseGrowth", d3.position_noise_growth},
          {"det3dYawNoiseStd", d3.yaw_noise_std},
          {"det3dSizeNoiseStd", d3.size_noise_std},
          {"det3dDuplicatesMean", d3.duplicates_mean},
          {"det3dScoreSignalMean", d3.score_signal_mean},
          {"det3dScoreSignalStd", d3.score_signal_std},
          {"det3dScoreDistanceDecay", d3.score_distance_decay},
          {"det3dScoreQualityGain", d3.score_quality_gain},
          {"det3dFpPerFrame", d3.fp_per_frame},
          {"det3dFpScoreMean", d3.fp_score_mean},
          {"det3dFpScoreStd", d3.fp_score_std},
          {"det2dRecallBase", d2.recall_base},
          {"det2dRecallHeightFloor", d2.recall_height_floor},
          {"det2dPixelNoiseStd", d2.pixel_noise_std},
          {"det2dDuplicatesMean", d2.duplicates_mean},
          {"det2dScoreSignalMean", d2.score_signal_mean},
          {"det2dScoreSignalStd", d2.score_signal_std},
          {"det2dFpPerFrame", d2.fp_per_frame},
          {"det2dFpScoreMean", d2.fp_score_mean},
          {"det2dFpScoreStd", d2.fp_score_std},
          {"cameraFocal", c.camera.focal},
          {"cameraCx", c.camera.cx},
          {"cameraCy", c.camera.cy},
          {"imageWidth", c.camera.width},
          {"imageHeight", c.camera.height}};
}

}  // namespace clocs
