// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "clocs/clocs.hpp"

using namespace clocs;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(testing::TempDir()) / ("clocs_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunResult run(const std::string& args) {
  static int counter = 0;
  const fs::path logs = fs::path(testing::TempDir()) / ("clocs_cli_log" + std::to_string(counter++));
  const std::string cmd = std::string(CLOCS_CLI_PATH) + ' ' + args + " > " + logs.string() + ".out 2> " +
                          logs.string() + ".err";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(logs.string() + ".out");
  r.err = io::read_file(logs.string() + ".err");
  return r;
}

fs::path write_config(const std::string& name, const std::string& json) {
  const fs::path p = fs::path(testing::TempDir()) / ("clocs_cli_cfg_" + name + ".json");
  io::write_file_atomic(p, json);
  return p;
}

/// Shared 40-frame dataset, generated once through the CLI.
const fs::path& small_dataset() {
  static const fs::path root = [] {
    const auto d = scratch("small");
    const auto cfg = write_config("small", R"({"nFrames": 40, "seed": 3})");
    const auto r = run("--config " + cfg.string() + " --out " + d.string() + " synth");
    if (r.code != 0) throw std::runtime_error("synth failed: " + r.err);
    return d;
  }();
  return root;
}

std::map<std::string, double> report_cells(const fs::path& csv) {
  std::map<std::string, double> cells;
  std::istringstream in(io::read_file(csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    const auto ap_pos = line.rfind(',', last - 1);
    cells[line.substr(0, ap_pos)] = std::stod(line.substr(ap_pos + 1, last - ap_pos - 1));
  }
  return cells;
}

}  // namespace

TEST(Cli, SynthWritesDatasetAndManifest) {
  const auto d = scratch("synth_default");
  const auto r = run("--out " + d.string() + " synth");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* sub : {"calib", "label_2", "det2d", "det3d", "det3d_sigmoid"}) {
    EXPECT_EQ(io::list_frame_ids(d / sub).size(), 100u) << sub;
  }
  const auto m = nlohmann::json::parse(io::read_file(d / "manifest.json"));
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["config"]["nFrames"], 100);
  EXPECT_EQ(m["seed"], 1);
  EXPECT_EQ(m["outputs"].size(), 5u);
  EXPECT_EQ(m["outputs"][3]["sha1"], hash_tree(d / "det3d"));
}

TEST(Cli, UnknownConfigKeyIsUsageError) {
  const auto cfg = write_config("bad", R"({"nFrames": 2, "frobnicate": true})");
  const auto r = run("--config " + cfg.string() + " --out " + scratch("bad").string() + " synth");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("frobnicate"), std::string::npos);
}

TEST(Cli, MissingSubcommandIsUsageError) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, SameSeedGivesIdenticalTrees) {
  const auto cfg = write_config("seeded", R"({"nFrames": 15})");
  const auto a = scratch("seed_a"), b = scratch("seed_b"), c = scratch("seed_c");
  ASSERT_EQ(run("--config " + cfg.string() + " --seed 5 --out " + a.string() + " synth").code, 0);
  ASSERT_EQ(run("--config " + cfg.string() + " --seed 5 --jobs 3 --out " + b.string() + " synth").code, 0);
  ASSERT_EQ(run("--config " + cfg.string() + " --seed 6 --out " + c.string() + " synth").code, 0);
  for (const char* sub : {"calib", "label_2", "det2d", "det3d", "det3d_sigmoid"}) {
    EXPECT_EQ(hash_tree(a / sub), hash_tree(b / sub)) << sub;
  }
  EXPECT_NE(hash_tree(a / "det3d"), hash_tree(c / "det3d"));
}

TEST(Cli, ZeroEpochCheckpointIsInitialization) {
  const auto cfg = write_config("epochs0", R"({"epochs": 0, "seed": 4})");
  const auto out = scratch("train0");
  const auto r = run("--config " + cfg.string() + " --out " + out.string() + " train --data " + small_dataset().string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = parse_checkpoint(io::read_file(out / "checkpoint.json"));
  EXPECT_EQ(ck.seed, 4u);
  EXPECT_EQ(ck.params, init_params(4));
}

TEST(Cli, TrainingIsBitwiseReproducible) {
  const auto cfg = write_config("epochs2", R"({"epochs": 2})");
  const auto a = scratch("train_a"), b = scratch("train_b");
  const std::string data = " train --data " + small_dataset().string();
  ASSERT_EQ(run("--config " + cfg.string() + " --out " + a.string() + data).code, 0);
  ASSERT_EQ(run("--config " + cfg.string() + " --jobs 2 --out " + b.string() + data).code, 0);
  EXPECT_EQ(io::read_file(a / "checkpoint.json"), io::read_file(b / "checkpoint.json"));
  EXPECT_EQ(io::read_file(a / "loss.csv"), io::read_file(b / "loss.csv"));
  const auto m = nlohmann::json::parse(io::read_file(a / "manifest.json"));
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["outputs"][0]["sha1"], io::hash_file(a / "checkpoint.json"));
}

TEST(Cli, FuseWithZeroCheckpointScoresEverythingZero) {
  const auto dir = scratch("fuse_zero");
  io::write_file_atomic(dir / "zero.json", format_checkpoint(FusionParams::zeros(), 0));
  const auto r = run("--out " + (dir / "out").string() + " fuse --data " + small_dataset().string() +
                     " --checkpoint " + (dir / "zero.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ids = io::list_frame_ids(dir / "out" / "det");
  EXPECT_EQ(ids.size(), 40u);
  for (const auto& id : ids) {
    for (const auto& d : parse_detections_3d(io::read_file(dir / "out" / "det" / (id + ".txt")), Det3DFormat::kLidar,
                                             nullptr, ScoreScale::kLog)) {
      EXPECT_EQ(d.score, 0.0);
    }
  }
  const auto m = nlohmann::json::parse(io::read_file(dir / "out" / "manifest.json"));
  EXPECT_EQ(m["extra"]["per_frame"].size(), 40u);
  EXPECT_GE(m["extra"]["max_fusion_ms"].get<double>(), 0.0);
}

TEST(Cli, FuseNeedsCheckpointOrBaseline) {
  const auto r = run("--out " + scratch("fuse_none").string() + " fuse --data " + small_dataset().string());
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, PerfectDetectionsScoreOne) {
  const auto& data = small_dataset();
  const auto det = scratch("perfect_det");
  for (const auto& id : io::list_frame_ids(data / "calib")) {
    const auto calib = parse_calibration(io::read_file(data / "calib" / (id + ".txt")));
    std::vector<Detection3D> dets;
    for (const auto& g : parse_labels(io::read_file(data / "label_2" / (id + ".txt")), calib)) {
      if (!g.is_dont_care) dets.push_back({*g.box3d, 5.0, g.class_id});
    }
    io::write_file_atomic(det / (id + ".txt"), format_detections_3d(dets));
  }
  const auto out = scratch("perfect_eval");
  const auto r = run("--out " + out.string() + " eval --det " + det.string() + " --gt " + data.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cells = report_cells(out / "report.csv");
  ASSERT_FALSE(cells.empty());
  for (const auto& [key, ap] : cells) EXPECT_DOUBLE_EQ(ap, 1.0) << key;
  EXPECT_TRUE(cells.count("3d,moderate,all"));
  EXPECT_TRUE(fs::exists(out / "pr.csv"));
}

TEST(Cli, EmptyDetectionDirectoryWarns) {
  const auto det = scratch("empty_det");
  const auto out = scratch("empty_eval");
  const auto r = run("--out " + out.string() + " eval --det " + det.string() + " --gt " + small_dataset().string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  for (const auto& [key, ap] : report_cells(out / "report.csv")) EXPECT_EQ(ap, 0.0) << key;
}

TEST(Cli, MisalignedFrameIdsAreDataError) {
  const auto det = scratch("misaligned");
  io::write_file_atomic(det / "999999.txt", "");
  const auto r = run("--out " + scratch("misaligned_out").string() + " eval --det " + det.string() + " --gt " +
                     small_dataset().string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("999999"), std::string::npos);
  EXPECT_NE(r.err.find("000000"), std::string::npos);
}

TEST(Cli, MissingInputsAreDataErrorsWithPaths) {
  const auto d = scratch("holes");
  const auto cfg = write_config("holes", R"({"nFrames": 4})");
  ASSERT_EQ(run("--config " + cfg.string() + " --out " + d.string() + " synth").code, 0);
  fs::remove(d / "det2d" / "000002.txt");
  const auto r = run("--out " + scratch("holes_out").string() + " train --data " + d.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("000002"), std::string::npos);
  const auto r2 = run("--out " + scratch("holes_out2").string() + " fuse --baseline --data " +
                      (d / "nowhere").string());
  EXPECT_EQ(r2.code, 2);
  const auto r3 = run("--out " + scratch("holes_out3").string() + " fuse --data " + d.string() +
                      " --checkpoint " + (d / "nope.json").string());
  EXPECT_EQ(r3.code, 2);
}

TEST(Cli, MalformedFileNamesTheLine) {
  const auto d = scratch("malformed");
  const auto cfg = write_config("malformed", R"({"nFrames": 2})");
  ASSERT_EQ(run("--config " + cfg.string() + " --out " + d.string() + " synth").code, 0);
  io::write_file_atomic(d / "det3d" / "000001.txt", "Car 1 2 3\n");
  const auto r = run("--out " + scratch("malformed_out").string() + " fuse --baseline --data " + d.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("000001.txt"), std::string::npos);
  EXPECT_NE(r.err.find("line 1"), std::string::npos);
}

TEST(Cli, AblationWritesOneRowPerConfiguration) {
  const auto cfg = write_config("ablate", R"({"epochs": 1})");
  const auto out = scratch("ablate");
  const auto r = run("--config " + cfg.string() + " --out " + out.string() + " ablate --data " + small_dataset().string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(io::read_file(out / "ablation.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(ablation_rows().size()));
  const auto m = nlohmann::json::parse(io::read_file(out / "manifest.json"));
  EXPECT_EQ(m["extra"]["train_frames"], 32);
  EXPECT_EQ(m["extra"]["eval_frames"], 8);
}

TEST(Cli, ProjectDumpsHullsAndTensor) {
  const auto out = scratch("project");
  const auto r = run("--out " + out.string() + " project --data " + small_dataset().string() + " --frame 000003 --tensor");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto dets = parse_detections_3d(io::read_file(small_dataset() / "det3d" / "000003.txt"), Det3DFormat::kLidar,
                                        nullptr, ScoreScale::kLog);
  std::istringstream in(io::read_file(out / "hulls.txt"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, static_cast<int>(dets.size()) + 1);
  const auto tensor = io::read_file(out / "tensor.txt");
  EXPECT_EQ(tensor.substr(0, tensor.find('\n')), "class j3d i2d iou s2d s3d dnorm");
  EXPECT_EQ(run("--out " + out.string() + " project --data " + small_dataset().string() + " --frame 777777").code, 2);
}
