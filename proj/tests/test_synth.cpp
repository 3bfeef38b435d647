// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "clocs/config.hpp"
#include "clocs/pipeline.hpp"
#include "clocs/synth.hpp"

using namespace clocs;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(testing::TempDir()) / ("clocs_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Synth, DeterministicPerSeedAndFrame) {
  SynthConfig cfg;
  cfg.n_frames = 20;
  const auto a = generate(cfg), b = generate(cfg);
  for (int f = 0; f < cfg.n_frames; ++f) {
    EXPECT_EQ(format_detections_3d(a.frames[f].candidates.dets3d), format_detections_3d(b.frames[f].candidates.dets3d));
    EXPECT_EQ(format_detections_2d(a.frames[f].candidates.dets2d), format_detections_2d(b.frames[f].candidates.dets2d));
  }
  // Frames are independent of the dataset length.
  const auto single = generate_frame(cfg, a.calib, 7);
  EXPECT_EQ(format_detections_3d(single.candidates.dets3d), format_detections_3d(a.frames[7].candidates.dets3d));
  cfg.seed = 2;
  const auto c = generate(cfg);
  EXPECT_NE(format_detections_3d(c.frames[0].candidates.dets3d), format_detections_3d(a.frames[0].candidates.dets3d));
  EXPECT_EQ(a.frames[12].candidates.frame_id, "000012");
}

TEST(Synth, LidarRecallFollowsModelPerDistanceBin) {
  // Exact positions let each candidate be traced back to its GT.
  SynthConfig cfg;
  cfg.n_frames = 1500;
  cfg.det3d.fp_per_frame = 0;
  cfg.det3d.duplicates_mean = 0;
  cfg.det3d.position_noise_std = 0;
  cfg.det3d.position_noise_growth = 0;
  cfg.x_min = 2.0;
  cfg.x_max = 52.0;
  const auto ds = generate(cfg);
  struct Bin {
    double lo, hi, expected = 0, var = 0;
    int observed = 0, n = 0;
  };
  std::vector<Bin> bins = {{0, 10}, {40, 50}, {0, 1000}};
  for (const auto& f : ds.frames) {
    for (const auto& g : f.labels) {
      const double r = distance_xy(*g.box3d);
      const double p = lidar_recall(cfg.det3d, r);
      bool hit = false;
      for (const auto& d : f.candidates.dets3d) hit = hit || (d.box.x == g.box3d->x && d.box.y == g.box3d->y);
      for (auto& b : bins) {
        if (r < b.lo || r >= b.hi) continue;
        b.expected += p;
        b.var += p * (1 - p);
        b.observed += hit;
        ++b.n;
      }
    }
  }
  for (const auto& b : bins) {
    ASSERT_GE(b.n, 1000) << b.lo;
    EXPECT_LE(std::abs(b.observed - b.expected), 3 * std::sqrt(b.var)) << "bin " << b.lo << "-" << b.hi;
  }
  EXPECT_LT(static_cast<double>(bins[1].observed) / bins[1].n, static_cast<double>(bins[0].observed) / bins[0].n);
}

namespace {

SynthConfig noiseless() {
  SynthConfig cfg;
  cfg.n_frames = 30;
  auto& m3 = cfg.det3d;
  m3.recall_base = 1;
  m3.recall_distance_decay = 0;
  m3.position_noise_std = m3.position_noise_growth = m3.yaw_noise_std = m3.size_noise_std = 0;
  m3.duplicates_mean = 0;
  m3.score_signal_std = 0;
  m3.fp_per_frame = 0;
  auto& m2 = cfg.det2d;
  m2.recall_base = 1;
  m2.recall_height_floor = 0;
  m2.pixel_noise_std = 0;
  m2.duplicates_mean = 0;
  m2.score_signal_std = 0;
  m2.fp_per_frame = 0;
  return cfg;
}

}  // namespace

TEST(Synth, NoiselessLimitGivesPerfectApForBothModalities) {
  const auto ds = generate(noiseless());
  DetectionsByFrame d3, d2;
  LabelsByFrame gts;
  for (const auto& f : ds.frames) {
    const auto& id = f.candidates.frame_id;
    gts[id] = f.labels;
    d3[id] = to_eval_detections(f.candidates.dets3d, ds.calib);
    for (const auto& d : f.candidates.dets2d) d2[id].push_back({d.class_id, Box3D(1, 1, 1, 0, 0, 0, 0), d.box, d.score});
  }
  const auto r3 = evaluate(d3, gts);
  for (const auto& r : r3) EXPECT_EQ(r.ap, 1.0) << eval_metric_name(r.metric) << ' ' << r.bin_label();
  EvalConfig c2;
  c2.metrics = {EvalMetric::k2d};
  for (const auto& r : evaluate(d2, gts, c2)) EXPECT_EQ(r.ap, 1.0) << r.bin_label();
}

TEST(Synth, NoiselessFusionKeepsExactlyTheGroundTruthCandidates) {
  const auto ds = generate(noiseless());
  const FusionEngine engine(FusionParams::zeros());
  for (const auto& f : ds.frames) {
    const auto fused = fuse_frame(engine, f.candidates, PipelineConfig{});
    ASSERT_EQ(fused.dets.size(), f.labels.size());
    for (const auto& g : f.labels) {
      int overlays = 0;
      for (const auto& d : fused.dets) overlays += d.box == *g.box3d;
      EXPECT_EQ(overlays, 1);
    }
  }
}

TEST(Synth, LabelsAreVisibleAndDisjoint) {
  SynthConfig cfg;
  cfg.n_frames = 50;
  const auto ds = generate(cfg);
  int total = 0;
  for (const auto& f : ds.frames) {
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
      const auto& g = f.labels[i];
      ++total;
      ASSERT_TRUE(g.box3d);
      EXPECT_TRUE(g.box2d.valid());
      EXPECT_GE(g.box2d.x1, 0.0);
      EXPECT_LE(g.box2d.x2, cfg.camera.width);
      EXPECT_GE(g.truncation, 0.0);
      EXPECT_LE(g.truncation, 1.0);
      EXPECT_GE(g.box3d->x, cfg.x_min);
      EXPECT_LE(g.box3d->x, cfg.x_max);
      for (std::size_t j = i + 1; j < f.labels.size(); ++j) EXPECT_EQ(bev_intersection(*g.box3d, *f.labels[j].box3d), 0.0);
    }
    for (const auto& d : f.candidates.dets2d) {
      EXPECT_TRUE(d.box.valid());
      EXPECT_LE(d.box.y2, cfg.camera.height);
    }
  }
  EXPECT_GT(total, 200);
}

TEST(Synth, ProbabilitiesMatchLogScores) {
  SynthConfig cfg;
  cfg.n_frames = 10;
  for (const auto& f : generate(cfg).frames) {
    ASSERT_EQ(f.probs3d.size(), f.candidates.dets3d.size());
    for (std::size_t i = 0; i < f.probs3d.size(); ++i) {
      EXPECT_GT(f.probs3d[i], 0.0);
      EXPECT_LT(f.probs3d[i], 1.0);
      EXPECT_EQ(f.candidates.dets3d[i].score, to_log_score(f.probs3d[i]));
    }
  }
}

TEST(Synth, DatasetRoundTripsThroughDisk) {
  SynthConfig cfg;
  cfg.n_frames = 12;
  const auto ds = generate(cfg);
  const auto root = scratch("roundtrip");
  const auto written = write_dataset(ds, root, 2);
  EXPECT_EQ(written.size(), 5u * 12);
  PipelineConfig pc;
  const auto frames = load_dataset(root, pc, true);
  pc.score_scale_3d = ScoreScale::kSigmoid;
  pc.det3d_dir = "det3d_sigmoid";
  const auto converted = load_dataset(root, pc, false);
  ASSERT_EQ(frames.size(), ds.frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& want = ds.frames[f];
    const auto& got = frames[f];
    EXPECT_EQ(got.candidates.frame_id, want.candidates.frame_id);
    ASSERT_EQ(got.candidates.dets3d.size(), want.candidates.dets3d.size());
    ASSERT_EQ(got.candidates.dets2d.size(), want.candidates.dets2d.size());
    ASSERT_EQ(got.labels.size(), want.labels.size());
    for (std::size_t i = 0; i < got.candidates.dets3d.size(); ++i) {
      const auto& a = got.candidates.dets3d[i];
      const auto& b = want.candidates.dets3d[i];
      EXPECT_EQ(a.score, b.score);
      EXPECT_EQ(converted[f].candidates.dets3d[i].score, b.score);
      EXPECT_NEAR(a.box.x, b.box.x, 1e-6);
      EXPECT_NEAR(a.box.theta, b.box.theta, 1e-6);
    }
    for (std::size_t i = 0; i < got.labels.size(); ++i) {
      EXPECT_NEAR(got.labels[i].box3d->x, want.labels[i].box3d->x, 1e-6);
      EXPECT_NEAR(got.labels[i].box3d->z, want.labels[i].box3d->z, 1e-6);
      EXPECT_NEAR(got.labels[i].box2d.y2, want.labels[i].box2d.y2, 1e-4);
    }
  }
}

TEST(Synth, MissingFilesAreReportedTogether) {
  SynthConfig cfg;
  cfg.n_frames = 3;
  const auto root = scratch("missing");
  write_dataset(generate(cfg), root);
  fs::remove(root / "det2d" / "000001.txt");
  fs::remove(root / "label_2" / "000002.txt");
  try {
    load_dataset(root, PipelineConfig{}, true);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("000001"), std::string::npos);
    EXPECT_NE(msg.find("000002"), std::string::npos);
  }
}

TEST(SynthConfig, JsonRoundTripAndUnknownKey) {
  SynthConfig cfg;
  cfg.seed = 99;
  cfg.det3d.fp_per_frame = 12.5;
  const auto j = synth_config_json(cfg);
  EXPECT_EQ(synth_config_json(parse_synth_config(j.dump())), j);
  try {
    parse_synth_config(R"({"nFrames": 3, "bogusKey": 1})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bogusKey"), std::string::npos);
  }
  EXPECT_THROW(parse_synth_config(R"({"xMin": 50, "xMax": 10})"), ConfigError);
}
