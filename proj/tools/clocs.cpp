// SPDX-License-Identifier: Apache-2.0
//
// clocs: synthetic data, training, fusion, evaluation and ablation.
//
// Exit codes: 0 success, 1 usage or configuration, 2 data, 3 internal contract.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clocs/clocs.hpp"

namespace fs = std::filesystem;
using namespace clocs;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out;
};

std::string read_config_text(const GlobalOptions& g) {
  if (g.config.empty()) return "{}";
  try {
    return io::read_file(g.config);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

PipelineConfig load_pipeline_config(const GlobalOptions& g) {
  auto cfg = parse_pipeline_config(read_config_text(g));
  if (g.seed) cfg.train.seed = *g.seed;
  return cfg;
}

fs::path require_out(const GlobalOptions& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

void write_manifest(const fs::path& out, const RunManifest& m) {
  io::write_file_atomic(out / "manifest.json", m.to_json());
}

int jobs_of(const GlobalOptions& g) {
  if (g.jobs < 1) throw ConfigError("--jobs must be at least 1");
  return g.jobs;
}

// ---------------------------------------------------------------------------

void cmd_synth(const GlobalOptions& g) {
  Stopwatch total;
  auto cfg = parse_synth_config(read_config_text(g));
  if (g.seed) cfg.seed = *g.seed;
  const auto out = require_out(g);
  Stopwatch sw;
  const auto ds = generate(cfg);
  const double gen_ms = sw.ms();
  Stopwatch ww;
  write_dataset(ds, out, jobs_of(g));
  const double write_ms = ww.ms();

  RunManifest m;
  m.command = "synth";
  m.seed = cfg.seed;
  m.config = synth_config_json(cfg);
  if (!g.config.empty()) m.add_input(g.config);
  for (const char* sub : {"calib", "label_2", "det2d", "det3d", "det3d_sigmoid"}) m.add_output(out / sub);
  m.timings_ms = {{"generate", gen_ms}, {"write", write_ms}, {"total", total.ms()}};
  m.extra["frames"] = ds.frames.size();
  write_manifest(out, m);
  std::cout << "wrote " << ds.frames.size() << " frames to " << out.string() << '\n';
}

void cmd_train(const GlobalOptions& g, const std::string& data) {
  Stopwatch total;
  const auto cfg = load_pipeline_config(g);
  const auto out = require_out(g);
  const int jobs = jobs_of(g);
  Stopwatch lw;
  const auto frames = load_dataset(data, cfg, true, true, jobs);
  const double load_ms = lw.ms();
  Stopwatch ew;
  const auto samples = build_training_set(frames, cfg, jobs);
  const double encode_ms = ew.ms();
  Stopwatch tw;
  const auto result = train(samples, cfg.train, &std::cerr);
  const double train_ms = tw.ms();
  io::write_file_atomic(out / "checkpoint.json", format_checkpoint(result.params, cfg.train.seed));
  io::write_file_atomic(out / "loss.csv", format_loss_log(result.log));

  RunManifest m;
  m.command = "train";
  m.seed = cfg.train.seed;
  m.config = pipeline_config_json(cfg);
  m.add_input(data);
  if (!g.config.empty()) m.add_input(g.config);
  m.add_output(out / "checkpoint.json");
  m.add_output(out / "loss.csv");
  m.timings_ms = {{"load", load_ms}, {"encode", encode_ms}, {"train", train_ms}, {"total", total.ms()}};
  m.extra["frames"] = frames.size();
  m.extra["samples"] = samples.size();
  m.extra["steps"] = result.steps;
  write_manifest(out, m);
  if (!result.log.empty()) {
    std::cout << "trained " << result.log.size() << " epochs, final mean loss "
              << text::fmt_g(result.log.back().mean_loss, 6) << '\n';
  } else {
    std::cout << "epochs = 0, checkpoint holds the initialization\n";
  }
}

void cmd_fuse(const GlobalOptions& g, const std::string& data, const std::string& checkpoint, bool baseline) {
  Stopwatch total;
  const auto cfg = load_pipeline_config(g);
  const auto out = require_out(g);
  const int jobs = jobs_of(g);
  if (!baseline && checkpoint.empty()) throw ConfigError("fuse needs --checkpoint or --baseline");
  Checkpoint ck{FusionParams::zeros(), cfg.train.seed};
  if (!baseline) ck = parse_checkpoint(io::read_file(checkpoint));
  Stopwatch lw;
  const auto frames = load_dataset(data, cfg, false, true, jobs);
  const double load_ms = lw.ms();
  Stopwatch fw;
  const auto fused = fuse_all(ck.params, frames, cfg, baseline, jobs);
  const double fuse_ms = fw.ms();
  const fs::path det_dir = out / "det";
  fs::create_directories(det_dir);
  for (const auto& ff : fused) io::write_file_atomic(det_dir / (ff.frame_id + ".txt"), format_detections_3d(ff.dets));

  RunManifest m;
  m.command = baseline ? "fuse --baseline" : "fuse";
  m.seed = ck.seed;
  m.config = pipeline_config_json(cfg);
  m.add_input(data);
  if (!baseline) m.add_input(checkpoint);
  if (!g.config.empty()) m.add_input(g.config);
  m.add_output(det_dir);
  m.timings_ms = {{"load", load_ms}, {"fuse", fuse_ms}, {"total", total.ms()}};
  nlohmann::json per_frame = nlohmann::json::array();
  double worst = 0.0;
  for (const auto& ff : fused) {
    worst = std::max(worst, ff.encode_ms + ff.forward_ms);
    per_frame.push_back({{"frame", ff.frame_id},
                         {"encode_ms", ff.encode_ms},
                         {"forward_ms", ff.forward_ms},
                         {"elements", ff.elements}});
  }
  m.extra["frames"] = fused.size();
  m.extra["max_fusion_ms"] = worst;
  m.extra["per_frame"] = std::move(per_frame);
  write_manifest(out, m);
  std::cout << "fused " << fused.size() << " frames into " << det_dir.string() << " (max encode+forward "
            << text::fmt_g(worst, 4) << " ms)\n";
}

void cmd_eval(const GlobalOptions& g, const std::string& det, const std::string& gt) {
  Stopwatch total;
  const auto cfg = load_pipeline_config(g);
  const auto out = require_out(g);
  const int jobs = jobs_of(g);
  const auto frames = load_dataset(gt, cfg, true, false, jobs);
  std::set<std::string> gt_ids;
  for (const auto& f : frames) gt_ids.insert(f.candidates.frame_id);
  const auto det_ids = io::list_frame_ids(det);

  DetectionsByFrame dets;
  if (det_ids.empty()) {
    std::cerr << "warning: no detection files in " << det << "; every AP is 0\n";
  } else {
    std::string missing;
    const std::set<std::string> have(det_ids.begin(), det_ids.end());
    for (const auto& id : gt_ids) {
      if (!have.count(id)) missing += "  " + id + ": no detections file\n";
    }
    for (const auto& id : det_ids) {
      if (!gt_ids.count(id)) missing += "  " + id + ": no labels\n";
    }
    if (!missing.empty()) throw DataError("detection and label frames are misaligned:\n" + missing);
    for (const auto& f : frames) {
      const auto& id = f.candidates.frame_id;
      const auto& calib = f.candidates.calib;
      auto parsed = detail::parse_file(fs::path(det) / (id + ".txt"), [&](std::string_view t) {
        return parse_detections_3d(t, cfg.det3d_format, &calib, cfg.score_scale_3d);
      });
      dets[id] = to_eval_detections(parsed, calib, cfg.encoder.projection);
    }
  }
  Stopwatch ew;
  const auto results = evaluate(std::move(dets), labels_by_frame(frames), cfg.eval);
  const double eval_ms = ew.ms();
  io::write_file_atomic(out / "report.csv", format_report(results));
  io::write_file_atomic(out / "pr.csv", format_pr_data(results));

  RunManifest m;
  m.command = "eval";
  m.seed = cfg.train.seed;
  m.config = pipeline_config_json(cfg);
  m.add_input(det);
  m.add_input(gt);
  if (!g.config.empty()) m.add_input(g.config);
  m.add_output(out / "report.csv");
  m.add_output(out / "pr.csv");
  m.timings_ms = {{"evaluate", eval_ms}, {"total", total.ms()}};
  write_manifest(out, m);
  std::cout << "moderate AP: 3d " << text::fmt_g(100.0 * moderate_ap(results, EvalMetric::k3d), 4) << ", bev "
            << text::fmt_g(100.0 * moderate_ap(results, EvalMetric::kBev), 4) << '\n';
}

void cmd_ablate(const GlobalOptions& g, const std::string& data, const std::string& eval_data) {
  Stopwatch total;
  const auto cfg = load_pipeline_config(g);
  const auto out = require_out(g);
  const int jobs = jobs_of(g);
  Stopwatch lw;
  std::vector<FrameData> train_frames, eval_frames;
  if (eval_data.empty()) {
    std::tie(train_frames, eval_frames) = split_frames(load_dataset(data, cfg, true, true, jobs), cfg.ablation_holdout);
  } else {
    train_frames = load_dataset(data, cfg, true, true, jobs);
    eval_frames = load_dataset(eval_data, cfg, true, true, jobs);
  }
  const double load_ms = lw.ms();
  Stopwatch aw;
  const auto rows = run_ablation(train_frames, eval_frames, cfg, jobs);
  const double ablate_ms = aw.ms();
  io::write_file_atomic(out / "ablation.csv", format_ablation(rows));

  RunManifest m;
  m.command = "ablate";
  m.seed = cfg.train.seed;
  m.config = pipeline_config_json(cfg);
  m.add_input(data);
  if (!eval_data.empty()) m.add_input(eval_data);
  if (!g.config.empty()) m.add_input(g.config);
  m.add_output(out / "ablation.csv");
  m.timings_ms = {{"load", load_ms}, {"ablate", ablate_ms}, {"total", total.ms()}};
  m.extra["train_frames"] = train_frames.size();
  m.extra["eval_frames"] = eval_frames.size();
  write_manifest(out, m);
  for (const auto& r : rows) {
    std::cout << r.label << ": 3d " << text::fmt_g(100.0 * r.ap3d, 4) << ", bev " << text::fmt_g(100.0 * r.apbev, 4)
              << '\n';
  }
}

void cmd_project(const GlobalOptions& g, const std::string& data, const std::string& frame, bool tensor) {
  Stopwatch total;
  const auto cfg = load_pipeline_config(g);
  const auto out = require_out(g);
  const io::DatasetLayout L{data};
  FrameCandidates fc;
  fc.frame_id = frame;
  fc.calib = detail::parse_file(L.calib(frame), [&](std::string_view t) {
    return parse_calibration(t, cfg.image_width, cfg.image_height);
  });
  fc.dets3d = detail::parse_file(L.det3d(frame, cfg.det3d_dir), [&](std::string_view t) {
    return parse_detections_3d(t, cfg.det3d_format, &fc.calib, cfg.score_scale_3d);
  });
  const BoxProjector projector(fc.calib, cfg.encoder.projection);
  std::string hulls = "index class x1 y1 x2 y2\n";
  for (std::size_t j = 0; j < fc.dets3d.size(); ++j) {
    hulls += std::to_string(j) + ' ' + std::string(class_name(fc.dets3d[j].class_id));
    if (auto h = projector.project(fc.dets3d[j].box)) {
      for (double v : {h->x1, h->y1, h->x2, h->y2}) hulls += ' ' + text::fmt_g(v);
    } else {
      hulls += " none";
    }
    hulls += '\n';
  }
  io::write_file_atomic(out / "hulls.txt", hulls);

  RunManifest m;
  m.command = "project";
  m.seed = cfg.train.seed;
  m.config = pipeline_config_json(cfg);
  m.add_input(L.calib(frame));
  m.add_input(L.det3d(frame, cfg.det3d_dir));
  m.add_output(out / "hulls.txt");
  if (tensor) {
    fc.dets2d = detail::parse_file(L.det2d(frame), [&](std::string_view t) {
      return parse_detections_2d(t, cfg.score_scale_2d);
    });
    std::string dump = "class j3d i2d iou s2d s3d dnorm\n";
    for (const auto& t : encode_frame(fc, cfg.encoder)) dump += format_tensor(t);
    io::write_file_atomic(out / "tensor.txt", dump);
    m.add_input(L.det2d(frame));
    m.add_output(out / "tensor.txt");
  }
  m.timings_ms = {{"total", total.ms()}};
  m.extra["frame"] = frame;
  write_manifest(out, m);
  std::cout << "projected " << fc.dets3d.size() << " boxes of frame " << frame << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera-LiDAR candidate fusion"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--jobs", g.jobs, "Worker threads for per-frame stages")->capture_default_str();
  app.add_option("--out", g.out, "Output directory");

  std::string data, eval_data, checkpoint, det, gt, frame;
  bool baseline = false, tensor = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  auto* train_cmd = app.add_subcommand("train", "Train the fusion network");
  train_cmd->add_option("--data", data, "Dataset directory")->required();
  auto* fuse = app.add_subcommand("fuse", "Re-score and suppress 3D candidates");
  fuse->add_option("--data", data, "Dataset directory")->required();
  fuse->add_option("--checkpoint", checkpoint, "Checkpoint JSON");
  fuse->add_flag("--baseline", baseline, "Skip fusion, apply NMS to the 3D candidates only");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate detections against labels");
  eval_cmd->add_option("--det", det, "Directory of per-frame detection files")->required();
  eval_cmd->add_option("--gt", gt, "Dataset directory with calib/ and label_2/")->required();
  auto* ablate = app.add_subcommand("ablate", "Channel and focal-loss ablation");
  ablate->add_option("--data", data, "Training dataset directory")->required();
  ablate->add_option("--eval-data", eval_data, "Evaluation dataset; default holds out the tail of --data");
  auto* project = app.add_subcommand("project", "Dump projected hulls for one frame");
  project->add_option("--data", data, "Dataset directory")->required();
  project->add_option("--frame", frame, "Frame id")->required();
  project->add_flag("--tensor", tensor, "Also dump the joint tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*synth) cmd_synth(g);
    if (*train_cmd) cmd_train(g, data);
    if (*fuse) cmd_fuse(g, data, checkpoint, baseline);
    if (*eval_cmd) cmd_eval(g, det, gt);
    if (*ablate) cmd_ablate(g, data, eval_data);
    if (*project) cmd_project(g, data, frame, tensor);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kContract);
  }
  return 0;
}
