// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "clocs/eval.hpp"
#include "eval_fixtures.hpp"

using namespace clocs;
using namespace fixtures;

TEST(Ap40, PerfectDetectionsScoreOne) {
  const auto f = perfect_fixture();
  EXPECT_DOUBLE_EQ(fixture_ap(f), 1.0);
}

TEST(Ap40, HalfRecallScoresHalf) {
  const auto f = half_recall_fixture();
  EXPECT_DOUBLE_EQ(fixture_ap(f), 0.5);
}

TEST(Ap40, DontCareRegionIgnoresDetection) {
  const auto f = dont_care_fixture();
  EXPECT_DOUBLE_EQ(fixture_ap(f), 1.0);
  auto without = f;
  without.gts.pop_back();  // drop the DontCare row: the detection becomes a top-ranked FP
  EXPECT_DOUBLE_EQ(fixture_ap(without), 0.5);
}

TEST(Ap40, FalsePositiveRankedFirst) {
  const auto f = fp_first_fixture();
  EXPECT_DOUBLE_EQ(fixture_ap(f), 0.5);
}

TEST(Ap40, InterleavedHandTrace) {
  // Outcomes by score: TP FP TP FP TP with 4 GT.
  // Points (r, p): (1/4, 1), (1/2, 2/3), (3/4, 3/5); recall 1 unreachable.
  const auto f = interleaved_fixture();
  EXPECT_NEAR(fixture_ap(f), 17.0 / 30.0, 1e-15);
}

TEST(Ap40, IgnoredGroundTruthDoesNotCreateFalsePositive) {
  const auto f = ignored_gt_fixture();
  EXPECT_DOUBLE_EQ(fixture_ap(f), 1.0);
  const auto fm = match_frame(f.dets, f.gts, f.params);
  EXPECT_EQ(fm.n_gt, 1);
  EXPECT_EQ(fm.det_flags[1], MatchFlag::kIgnored);
}

TEST(Ap40, ShortDetectionIsIgnored) {
  const auto f = short_detection_fixture();
  EXPECT_DOUBLE_EQ(fixture_ap(f), 0.5);
  EXPECT_EQ(match_frame(f.dets, f.gts, f.params).det_flags[0], MatchFlag::kIgnored);
}

TEST(Ap40, NoGroundTruthGivesZero) {
  PRCurve c;
  EXPECT_EQ(ap_40(c), 0.0);
}

TEST(Ap40, RecallLevelsUseIntegerCounts) {
  // 3 GT, one TP: recall 1/3 reaches m = 1..13 since 40 * 1 >= 13 * 3.
  PRCurve c;
  c.n_gt = 3;
  c.points.push_back({1.0, 1, 0, 1.0 / 3.0, 1.0});
  EXPECT_DOUBLE_EQ(ap_40(c), 13.0 / 40.0);
}

TEST(MatchFrame, UnsortedDetectionsAreContractError) {
  auto f = interleaved_fixture();
  std::swap(f.dets[0], f.dets[1]);
  EXPECT_THROW(match_frame(f.dets, f.gts, f.params), ContractError);
}

TEST(MatchFrame, EachGroundTruthMatchedOnce) {
  auto f = perfect_fixture();
  f.dets.push_back(f.dets[0]);
  f.dets.back().score = -5.0;
  const auto fm = match_frame(f.dets, f.gts, f.params);
  EXPECT_EQ(fm.det_flags.back(), MatchFlag::kFalsePositive);
}

TEST(MatchFrame, DifficultyFiltersByHeightOcclusionTruncation) {
  GroundTruthObject g = car_gt(10.0, 0.0);
  EXPECT_TRUE(Difficulty::standard(DifficultyLevel::kModerate).admits(g));
  g.occlusion = 2;
  EXPECT_FALSE(Difficulty::standard(DifficultyLevel::kModerate).admits(g));
  EXPECT_TRUE(Difficulty::standard(DifficultyLevel::kHard).admits(g));
  g.occlusion = 0;
  g.box2d.y2 = g.box2d.y1 + 30;
  EXPECT_FALSE(Difficulty::standard(DifficultyLevel::kEasy).admits(g));
  EXPECT_TRUE(Difficulty::standard(DifficultyLevel::kModerate).admits(g));
  g.truncation = 0.4;
  EXPECT_FALSE(Difficulty::standard(DifficultyLevel::kModerate).admits(g));
}

TEST(MatchFrame, DistanceBinExcludesOutsideFalsePositives) {
  auto f = perfect_fixture();
  f.dets.push_back({ClassId::kCar, Box3D(1.5, 1.6, 3.9, 45.0, 0.0, -0.9, 0.0), Box2D{0, 0, 50, 50}, -1.0});
  f.params.bin = DistanceBin{0, 20};
  const auto fm = match_frame(f.dets, f.gts, f.params);
  EXPECT_EQ(fm.det_flags.back(), MatchFlag::kExcluded);
  f.params.bin = DistanceBin{40, 50};
  const auto fm2 = match_frame(f.dets, f.gts, f.params);
  EXPECT_EQ(fm2.det_flags.back(), MatchFlag::kFalsePositive);
  EXPECT_EQ(fm2.n_gt, 0);
}

TEST(Evaluate, InvariantUnderMonotoneScoreTransforms) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto [dets, gts] = random_instance(rng, 30);
    const auto base = evaluate(dets, gts);
    for (int kind = 0; kind < 3; ++kind) {
      auto moved = dets;
      for (auto& [id, v] : moved)
        for (auto& d : v) {
          d.score = kind == 0 ? 3.0 * d.score + 7.0 : kind == 1 ? std::exp(d.score) : to_sigmoid_score(d.score);
        }
      const auto r = evaluate(moved, gts);
      ASSERT_EQ(r.size(), base.size());
      for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i].ap, base[i].ap);
    }
  }
}

TEST(Evaluate, DetectionsWithoutLabelsAreDataError) {
  DetectionsByFrame d;
  d["x"] = {};
  EXPECT_THROW(evaluate(d, LabelsByFrame{}), DataError);
}

TEST(Evaluate, ReportHasFixedHeaderAndBins) {
  std::mt19937_64 rng(1);
  auto [dets, gts] = random_instance(rng, 20);
  const auto r = evaluate(dets, gts);
  const auto csv = format_report(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "metric,difficulty,distance_bin,ap,n_gt");
  EXPECT_NE(csv.find("3d,moderate,all,"), std::string::npos);
  EXPECT_NE(csv.find("bev,hard,"), std::string::npos);
  for (const auto& x : r) {
    EXPECT_GE(x.ap, 0.0);
    EXPECT_LE(x.ap, 1.0);
  }
}

TEST(Evaluate, EmptyDetectionsGiveZeroAp) {
  std::mt19937_64 rng(1);
  auto [dets, gts] = random_instance(rng, 10);
  for (const auto& r : evaluate(DetectionsByFrame{}, gts)) EXPECT_EQ(r.ap, 0.0);
}
