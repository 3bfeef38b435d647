// SPDX-License-Identifier: Apache-2.0
//
// Dataset I/O and the train / fuse / evaluate / ablate stages shared by the
// command-line tool and the acceptance checks.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clocs/candidates.hpp"
#include "clocs/config.hpp"
#include "clocs/encoder.hpp"
#include "clocs/eval.hpp"
#include "clocs/geometry.hpp"
#include "clocs/io.hpp"
#include "clocs/network.hpp"
#include "clocs/nms.hpp"
#include "clocs/synth.hpp"
#include "clocs/training.hpp"

namespace clocs {

namespace fs = std::filesystem;

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers write only to
/// slot i, so results do not depend on scheduling. The lowest-index failure
/// is rethrown.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto t = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t w = 0; w < t; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Datasets on disk

struct FrameData {
  FrameCandidates candidates;
  std::vector<GroundTruthObject> labels;
};

/// Writes every frame of a synthetic dataset, returning the written paths.
/// det3d_sigmoid/ holds the same boxes with the detector's probabilities.
inline std::vector<fs::path> write_dataset(const SynthDataset& ds, const fs::path& root, int jobs = 1) {
  const io::DatasetLayout L{root};
  const std::string calib_text = format_calibration(ds.calib);
  std::vector<std::array<fs::path, 5>> written(ds.frames.size());
  parallel_for(ds.frames.size(), jobs, [&](std::size_t f) {
    const auto& fr = ds.frames[f];
    const auto& id = fr.candidates.frame_id;
    written[f] = {L.calib(id), L.label(id), L.det2d(id), L.det3d(id), L.det3d(id, "det3d_sigmoid")};
    io::write_file_atomic(written[f][0], calib_text);
    io::write_file_atomic(written[f][1], format_labels(fr.labels, ds.calib));
    io::write_file_atomic(written[f][2], format_detections_2d(fr.candidates.dets2d));
    io::write_file_atomic(written[f][3], format_detections_3d(fr.candidates.dets3d));
    io::write_file_atomic(written[f][4], format_detections_3d(fr.candidates.dets3d, fr.probs3d));
  });
  std::vector<fs::path> out;
  for (const auto& w : written) out.insert(out.end(), w.begin(), w.end());
  return out;
}

namespace detail {

template <typename F>
auto parse_file(const fs::path& path, F&& parse) {
  const std::string text_in = io::read_file(path);
  try {
    return parse(text_in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Loads frames listed in calib/. Missing files are collected over all
/// frames and reported together.
inline std::vector<FrameData> load_dataset(const fs::path& root, const PipelineConfig& cfg, bool need_labels,
                                           bool need_candidates = true, int jobs = 1) {
  const io::DatasetLayout L{root};
  const auto ids = io::list_frame_ids(root / "calib");
  std::string missing;
  for (const auto& id : ids) {
    std::vector<fs::path> want;
    if (need_labels) want.push_back(L.label(id));
    if (need_candidates) {
      want.push_back(L.det2d(id));
      want.push_back(L.det3d(id, cfg.det3d_dir));
    }
    for (const auto& p : want) {
      if (!fs::exists(p)) missing += "  frame " + id + ": missing " + p.string() + '\n';
    }
  }
  if (!missing.empty()) throw DataError("incomplete dataset under " + root.string() + ":\n" + missing);
  std::vector<FrameData> frames(ids.size());
  parallel_for(ids.size(), jobs, [&](std::size_t f) {
    const auto& id = ids[f];
    auto& fr = frames[f];
    fr.candidates.frame_id = id;
    fr.candidates.calib = detail::parse_file(L.calib(id), [&](std::string_view t) {
      return parse_calibration(t, cfg.image_width, cfg.image_height);
    });
    const Calibration& calib = fr.candidates.calib;
    if (need_labels) {
      fr.labels = detail::parse_file(L.label(id), [&](std::string_view t) { return parse_labels(t, calib); });
    }
    if (need_candidates) {
      fr.candidates.dets2d = detail::parse_file(
          L.det2d(id), [&](std::string_view t) { return parse_detections_2d(t, cfg.score_scale_2d); });
      fr.candidates.dets3d = detail::parse_file(L.det3d(id, cfg.det3d_dir), [&](std::string_view t) {
        return parse_detections_3d(t, cfg.det3d_format, &calib, cfg.score_scale_3d);
      });
    }
  });
  return frames;
}

/// Directory digest: git blob hash of the sorted `<hash> <relative path>`
/// listing of every regular file below `dir`.
inline std::string hash_tree(const fs::path& dir) {
  if (fs::is_regular_file(dir)) return io::hash_file(dir);
  std::vector<std::string> rows;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    rows.push_back(io::hash_file(e.path()) + ' ' + fs::relative(e.path(), dir).generic_string());
  }
  std::sort(rows.begin(), rows.end(), [](const std::string& a, const std::string& b) {
    return a.substr(41) < b.substr(41);
  });
  std::string listing;
  for (const auto& r : rows) listing += r + '\n';
  return io::git_blob_sha1(listing);
}

// ---------------------------------------------------------------------------
// Training

/// One sample per (frame, class) tensor. The Other class is never fused and
/// contributes no samples.
inline std::vector<TrainingSample> build_training_set(const std::vector<FrameData>& frames,
                                                      const PipelineConfig& cfg, int jobs = 1) {
  std::vector<std::vector<TrainingSample>> per_frame(frames.size());
  parallel_for(frames.size(), jobs, [&](std::size_t f) {
    const auto& fc = frames[f].candidates;
    for (auto& t : encode_frame(fc, cfg.encoder)) {
      if (t.class_id == ClassId::kOther) continue;
      std::vector<Detection3D> subset;
      subset.reserve(t.index3d.size());
      for (auto idx : t.index3d) subset.push_back(fc.dets3d[idx]);
      TrainingSample s;
      s.frame_id = fc.frame_id;
      s.labels = assign_targets(subset, frames[f].labels, cfg.train);
      s.tensor = channel_mask(std::move(t), cfg.mask);
      per_frame[f].push_back(std::move(s));
    }
  });
  std::vector<TrainingSample> out;
  for (auto& v : per_frame) {
    for (auto& s : v) out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fusion

struct FusedFrame {
  std::string frame_id;
  std::vector<Detection3D> dets;  // after NMS, by descending score
  double encode_ms = 0.0;
  double forward_ms = 0.0;
  std::size_t elements = 0;
};

/// Tensor buffers kept between frames.
struct FusionWorkspace {
  std::vector<SparseJointTensor> tensors;
};

/// Replaces each fusable 3D candidate's score with its fused logit; Other
/// candidates keep their input score.
inline std::vector<Detection3D> rescore_frame(const FusionEngine& engine, const FrameCandidates& fc,
                                              const PipelineConfig& cfg, FusedFrame* stats = nullptr,
                                              FusionWorkspace* ws = nullptr) {
  FusionWorkspace local;
  auto& tensors = (ws ? *ws : local).tensors;
  Stopwatch sw;
  encode_frame_into(fc, cfg.encoder, tensors);
  for (auto& t : tensors) channel_mask_inplace(t, cfg.mask);
  const double encode_ms = sw.ms();
  Stopwatch fw;
  std::vector<Detection3D> dets = fc.dets3d;
  std::size_t elements = 0;
  for (const auto& t : tensors) {
    if (t.class_id == ClassId::kOther) continue;
    elements += t.size();
    const auto scores = engine.run(t);
    for (int j = 0; j < t.n; ++j) {
      dets[t.index3d[j]].score = std::clamp(scores.logits[j], -kLogitClamp, kLogitClamp);
    }
  }
  if (stats) {
    stats->encode_ms = encode_ms;
    stats->forward_ms = fw.ms();
    stats->elements = elements;
  }
  return dets;
}

inline std::vector<Detection3D> apply_nms(const std::vector<Detection3D>& dets, const NmsConfig& cfg) {
  std::vector<Detection3D> out;
  for (auto i : nms(std::span<const Detection3D>(dets), cfg)) out.push_back(dets[i]);
  return out;
}

inline FusedFrame fuse_frame(const FusionEngine& engine, const FrameCandidates& fc, const PipelineConfig& cfg,
                             FusionWorkspace* ws = nullptr) {
  FusedFrame r;
  r.frame_id = fc.frame_id;
  r.dets = apply_nms(rescore_frame(engine, fc, cfg, &r, ws), cfg.nms);
  return r;
}

inline FusedFrame baseline_frame(const FrameCandidates& fc, const PipelineConfig& cfg) {
  FusedFrame r;
  r.frame_id = fc.frame_id;
  r.dets = apply_nms(fc.dets3d, cfg.nms);
  return r;
}

/// Fuses every frame. Engines are per call because FusionEngine keeps
/// scratch space.
inline std::vector<FusedFrame> fuse_all(const FusionParams& params, const std::vector<FrameData>& frames,
                                        const PipelineConfig& cfg, bool baseline, int jobs = 1) {
  std::vector<FusedFrame> out(frames.size());
  parallel_for(frames.size(), jobs, [&](std::size_t f) {
    if (baseline) {
      out[f] = baseline_frame(frames[f].candidates, cfg);
    } else {
      const FusionEngine engine(params);
      out[f] = fuse_frame(engine, frames[f].candidates, cfg);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline std::vector<EvalDetection> to_eval_detections(const std::vector<Detection3D>& dets, const Calibration& calib,
                                                     const ProjectionOptions& opt = {}) {
  std::vector<EvalDetection> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back({d.class_id, d.box, project_box3d(calib, d.box, opt), d.score});
  return out;
}

inline LabelsByFrame labels_by_frame(const std::vector<FrameData>& frames) {
  LabelsByFrame out;
  for (const auto& f : frames) out[f.candidates.frame_id] = f.labels;
  return out;
}

inline std::vector<APResult> evaluate_fused(const std::vector<FusedFrame>& fused, const std::vector<FrameData>& frames,
                                            const PipelineConfig& cfg) {
  std::map<std::string, const Calibration*> calib;
  for (const auto& f : frames) calib[f.candidates.frame_id] = &f.candidates.calib;
  DetectionsByFrame dets;
  for (const auto& ff : fused) {
    auto it = calib.find(ff.frame_id);
    if (it == calib.end()) throw DataError("frame " + ff.frame_id + " has detections but no labels");
    dets[ff.frame_id] = to_eval_detections(ff.dets, *it->second, cfg.encoder.projection);
  }
  return evaluate(std::move(dets), labels_by_frame(frames), cfg.eval);
}

inline double moderate_ap(const std::vector<APResult>& results, EvalMetric metric,
                          std::optional<DistanceBin> bin = std::nullopt) {
  const auto* r = find_result(results, metric, DifficultyLevel::kModerate, bin);
  return r ? r->ap : 0.0;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  std::string label;
  bool baseline = false;
  ChannelMask mask{};
  bool focal = true;
  double ap3d = 0.0;
  double apbev = 0.0;
};

/// Baseline, each single-channel removal, focal loss off, everything on.
inline std::vector<AblationRow> ablation_rows() {
  std::vector<AblationRow> rows;
  rows.push_back({"baseline", true, {false, false, false, false}, false});
  rows.push_back({"no_iou", false, {false, true, true, true}, true});
  rows.push_back({"no_s2d", false, {true, false, true, true}, true});
  rows.push_back({"no_s3d", false, {true, true, false, true}, true});
  rows.push_back({"no_dist", false, {true, true, true, false}, true});
  rows.push_back({"no_focal", false, {true, true, true, true}, false});
  rows.push_back({"all", false, {true, true, true, true}, true});
  return rows;
}

/// Trains and evaluates one configuration. Returns moderate 3D and BEV AP.
inline std::pair<double, double> train_and_evaluate(const std::vector<FrameData>& train_frames,
                                                    const std::vector<FrameData>& eval_frames,
                                                    const PipelineConfig& cfg, int jobs = 1,
                                                    std::vector<APResult>* results = nullptr) {
  const auto samples = build_training_set(train_frames, cfg, jobs);
  const auto trained = train(samples, cfg.train);
  const auto fused = fuse_all(trained.params, eval_frames, cfg, false, jobs);
  auto res = evaluate_fused(fused, eval_frames, cfg);
  std::pair<double, double> ap{moderate_ap(res, EvalMetric::k3d), moderate_ap(res, EvalMetric::kBev)};
  if (results) *results = std::move(res);
  return ap;
}

inline std::vector<AblationRow> run_ablation(const std::vector<FrameData>& train_frames,
                                             const std::vector<FrameData>& eval_frames, const PipelineConfig& base,
                                             int jobs = 1) {
  auto rows = ablation_rows();
  for (auto& row : rows) {
    PipelineConfig cfg = base;
    if (row.baseline) {
      const auto fused = fuse_all(FusionParams::zeros(), eval_frames, cfg, true, jobs);
      const auto res = evaluate_fused(fused, eval_frames, cfg);
      row.ap3d = moderate_ap(res, EvalMetric::k3d);
      row.apbev = moderate_ap(res, EvalMetric::kBev);
      continue;
    }
    cfg.mask = row.mask;
    cfg.train.loss.focal_enabled = row.focal;
    std::tie(row.ap3d, row.apbev) = train_and_evaluate(train_frames, eval_frames, cfg, jobs);
  }
  return rows;
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::string out = "row,label,iou,s2d,s3d,dist,focal,ap3d_moderate,apbev_moderate\n";
  auto flag = [](bool b) { return b ? "1" : "0"; };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out += std::to_string(i) + ',' + r.label + ',' + flag(r.mask.iou) + ',' + flag(r.mask.s2d) + ',' +
           flag(r.mask.s3d) + ',' + flag(r.mask.dist) + ',' + flag(r.focal) + ',' + text::fmt_g(r.ap3d, 10) +
           ',' + text::fmt_g(r.apbev, 10) + '\n';
  }
  return out;
}

/// Deterministic split by frame order: the last `holdout` fraction evaluates.
inline std::pair<std::vector<FrameData>, std::vector<FrameData>> split_frames(std::vector<FrameData> frames,
                                                                              double holdout) {
  const auto n_eval = static_cast<std::size_t>(std::llround(static_cast<double>(frames.size()) * holdout));
  if (frames.size() < 2 || n_eval == 0 || n_eval >= frames.size()) {
    throw DataError("cannot split " + std::to_string(frames.size()) + " frames into train and eval sets");
  }
  std::vector<FrameData> eval(std::make_move_iterator(frames.end() - static_cast<std::ptrdiff_t>(n_eval)),
                              std::make_move_iterator(frames.end()));
  frames.resize(frames.size() - n_eval);
  return {std::move(frames), std::move(eval)};
}

// ---------------------------------------------------------------------------
// Run manifests

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, hash
  std::vector<std::pair<std::string, std::string>> outputs;  // path, hash
  std::vector<std::pair<std::string, double>> timings_ms;
  nlohmann::json extra = nlohmann::json::object();

  void add_input(const fs::path& p) { inputs.emplace_back(p.string(), hash_tree(p)); }
  void add_output(const fs::path& p) { outputs.emplace_back(p.string(), hash_tree(p)); }

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config;
    auto files = [](const auto& v) {
      nlohmann::ordered_json a = nlohmann::ordered_json::array();
      for (const auto& [p, h] : v) a.push_back({{"path", p}, {"sha1", h}});
      return a;
    };
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    nlohmann::ordered_json t = nlohmann::ordered_json::object();
    for (const auto& [k, v] : timings_ms) t[k] = v;
    j["timings_ms"] = t;
    if (!extra.empty()) j["extra"] = extra;
    return j.dump(2) + '\n';
  }
};

}  // namespace clocs
