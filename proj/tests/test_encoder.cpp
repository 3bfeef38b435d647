// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "clocs/encoder.hpp"
#include "oracles.hpp"

using namespace clocs;

namespace {

void expect_same(const SparseJointTensor& got, const SparseJointTensor& want) {
  EXPECT_EQ(got.class_id, want.class_id);
  EXPECT_EQ(got.k, want.k);
  EXPECT_EQ(got.n, want.n);
  EXPECT_EQ(got.index2d, want.index2d);
  EXPECT_EQ(got.index3d, want.index3d);
  EXPECT_EQ(got.column_offsets, want.column_offsets);
  ASSERT_EQ(got.elements.size(), want.elements.size());
  for (std::size_t e = 0; e < got.elements.size(); ++e) EXPECT_EQ(got.elements[e], want.elements[e]) << e;
}

FrameCandidates two_by_two() {
  FrameCandidates fc;
  fc.calib = synthetic_calibration(CameraModel{});
  const Box3D near(1.5, 1.6, 3.9, 10.0, 0.0, -0.9, 0.0);
  const Box3D far(1.5, 1.6, 3.9, 40.0, -12.0, -0.9, 0.0);
  fc.dets3d = {{near, 1.0, ClassId::kCar}, {far, -0.5, ClassId::kCar}};
  const auto hull = *project_box3d(fc.calib, near);
  fc.dets2d = {{hull, 2.0, ClassId::kCar}, {Box2D{1100, 10, 1200, 60}, 0.3, ClassId::kCar}};
  return fc;
}

}  // namespace

TEST(Encoder, HandFixtureExactHullGivesUnitIou) {
  const auto fc = two_by_two();
  const auto t = encode_class(fc, ClassId::kCar);
  ASSERT_EQ(t.n, 2);
  ASSERT_EQ(t.k, 2);
  ASSERT_EQ(t.size(), 2u);
  const auto& e0 = t.elements[0];
  EXPECT_EQ(e0.i, 0);
  EXPECT_EQ(e0.j, 0);
  EXPECT_DOUBLE_EQ(e0.iou, 1.0);
  EXPECT_DOUBLE_EQ(e0.s2d, 2.0);
  EXPECT_DOUBLE_EQ(e0.s3d, 1.0);
  EXPECT_DOUBLE_EQ(e0.d_norm, 0.1);
  const auto& e1 = t.elements[1];
  EXPECT_TRUE(e1.is_sentinel());
  EXPECT_EQ(e1.j, 1);
  EXPECT_EQ(e1.iou, -1.0);
  EXPECT_EQ(e1.s2d, -1.0);
  EXPECT_DOUBLE_EQ(e1.s3d, -0.5);
}

TEST(Encoder, No2DCandidatesGivesAllSentinels) {
  auto fc = two_by_two();
  fc.dets2d.clear();
  const auto t = encode_class(fc, ClassId::kCar);
  ASSERT_EQ(t.size(), 2u);
  for (const auto& e : t.elements) EXPECT_TRUE(e.is_sentinel());
}

TEST(Encoder, ClassesNeverMix) {
  auto fc = two_by_two();
  fc.dets2d[0].class_id = ClassId::kPedestrian;
  const auto t = encode_class(fc, ClassId::kCar);
  EXPECT_TRUE(t.elements[0].is_sentinel());
}

TEST(Encoder, MinIouDropsWeakPairs) {
  auto fc = two_by_two();
  auto b = fc.dets2d[0].box;
  const double w = b.width();
  fc.dets2d[0].box = {b.x1 + 0.9 * w, b.y1, b.x2 + 0.9 * w, b.y2};
  EncoderConfig cfg;
  EXPECT_FALSE(encode_class(fc, ClassId::kCar, cfg).elements[0].is_sentinel());
  cfg.min_iou = 0.5;
  EXPECT_TRUE(encode_class(fc, ClassId::kCar, cfg).elements[0].is_sentinel());
}

TEST(Encoder, EqualsBruteForceOnRandomFrames) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> size(0, 20);
  for (int f = 0; f < 100; ++f) {
    const auto fc = oracle::random_frame(rng, size(rng), size(rng));
    EncoderConfig cfg;
    const auto tensors = encode_frame(fc, cfg);
    std::size_t t = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      const auto want = oracle::brute_force_encode(fc, static_cast<ClassId>(c), cfg);
      if (want.n == 0) continue;
      ASSERT_LT(t, tensors.size());
      expect_same(tensors[t++], want);
    }
    EXPECT_EQ(t, tensors.size());
  }
}

TEST(Encoder, EveryColumnNonEmptyAndSentinelAlone) {
  std::mt19937_64 rng(23);
  for (int f = 0; f < 50; ++f) {
    const auto fc = oracle::random_frame(rng, 40, 60);
    for (const auto& t : encode_frame(fc)) {
      ASSERT_EQ(t.column_offsets.size(), static_cast<std::size_t>(t.n) + 1);
      for (int j = 0; j < t.n; ++j) {
        const auto col = t.column(j);
        ASSERT_FALSE(col.empty());
        int prev_i = -2;
        for (const auto& e : col) {
          EXPECT_EQ(e.j, j);
          if (e.is_sentinel()) {
            EXPECT_EQ(col.size(), 1u);
          } else {
            EXPECT_GT(e.iou, 0.0);
            EXPECT_LE(e.iou, 1.0);
            EXPECT_GT(e.i, prev_i);
            prev_i = e.i;
          }
          EXPECT_GE(e.d_norm, 0.0);
          EXPECT_LE(e.d_norm, 1.0);
        }
      }
    }
  }
}

TEST(Encoder, OtherClassHasOnlySentinels) {
  std::mt19937_64 rng(5);
  const auto fc = oracle::random_frame(rng, 20, 30);
  const auto t = encode_class(fc, ClassId::kOther);
  EXPECT_EQ(t.k, 0);
  for (const auto& e : t.elements) EXPECT_TRUE(e.is_sentinel());
}

TEST(Encoder, ReusedBuffersGiveIdenticalOutput) {
  std::mt19937_64 rng(6);
  std::vector<SparseJointTensor> reused;
  for (int f = 0; f < 20; ++f) {
    const auto fc = oracle::random_frame(rng, 15, 15 + f);
    encode_frame_into(fc, EncoderConfig{}, reused);
    const auto fresh = encode_frame(fc);
    ASSERT_EQ(reused.size(), fresh.size());
    for (std::size_t t = 0; t < fresh.size(); ++t) expect_same(reused[t], fresh[t]);
  }
}

TEST(Encoder, RejectsNonPositiveDMax) {
  EncoderConfig cfg;
  cfg.d_max = 0.0;
  EXPECT_THROW(encode_frame(two_by_two(), cfg), ConfigError);
}

TEST(ChannelMask, ZeroesOnlyMaskedChannels) {
  const auto t = encode_class(two_by_two(), ClassId::kCar);
  const auto m = channel_mask(t, {true, false, true, false});
  for (std::size_t e = 0; e < t.size(); ++e) {
    EXPECT_EQ(m.elements[e].iou, t.elements[e].iou);
    EXPECT_EQ(m.elements[e].s2d, 0.0);
    EXPECT_EQ(m.elements[e].s3d, t.elements[e].s3d);
    EXPECT_EQ(m.elements[e].d_norm, 0.0);
    EXPECT_EQ(m.elements[e].i, t.elements[e].i);
  }
  const auto all = channel_mask(t, ChannelMask{});
  for (std::size_t e = 0; e < t.size(); ++e) EXPECT_EQ(all.elements[e], t.elements[e]);
}

TEST(FormatTensor, UsesFrameIndices) {
  auto fc = two_by_two();
  fc.dets3d.insert(fc.dets3d.begin(), {Box3D(1.7, 0.6, 0.8, 8, 1, -1, 0), 0.1, ClassId::kPedestrian});
  const auto t = encode_class(fc, ClassId::kCar);
  const auto dump = format_tensor(t);
  EXPECT_EQ(dump.substr(0, 6), "0 1 0 ");
  EXPECT_NE(dump.find("\n0 2 -1 -1 -1 "), std::string::npos);
}
