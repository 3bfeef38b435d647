// SPDX-License-Identifier: Apache-2.0
//
// Fusion network: a per-element MLP 4 -> 18 -> 36 -> 36 -> 1 (ReLU after the
// first three layers) applied to every non-empty element of the joint tensor,
// followed by a max over each 3D candidate's column. This is the 1x1
// convolution stack evaluated only where T is non-empty; the -inf fill of the
// dense grid means empty cells never win the max.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clocs/common.hpp"
#include "clocs/encoder.hpp"

namespace clocs {

inline constexpr int kNumLayers = 4;
inline constexpr std::array<int, kNumLayers> kLayerIn = {4, 18, 36, 36};
inline constexpr std::array<int, kNumLayers> kLayerOut = {18, 36, 36, 1};
inline constexpr std::array<const char*, kNumLayers> kLayerNames = {"fc1", "fc2", "fc3", "fc4"};
inline constexpr double kLogitClamp = 30.0;

struct DenseLayer {
  int rows = 0;  // output width
  int cols = 0;  // input width
  std::vector<double> weights;  // row-major rows x cols
  std::vector<double> bias;     // rows

  double& w(int r, int c) { return weights[static_cast<std::size_t>(r) * cols + c]; }
  double w(int r, int c) const { return weights[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const DenseLayer&) const = default;
};

struct FusionParams {
  std::array<DenseLayer, kNumLayers> layers;

  static FusionParams zeros() {
    FusionParams p;
    for (int l = 0; l < kNumLayers; ++l) {
      p.layers[l].rows = kLayerOut[l];
      p.layers[l].cols = kLayerIn[l];
      p.layers[l].weights.assign(static_cast<std::size_t>(kLayerOut[l]) * kLayerIn[l], 0.0);
      p.layers[l].bias.assign(kLayerOut[l], 0.0);
    }
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  /// Visits every parameter in a fixed order (layer, weights row-major, bias).
  template <typename F>
  void for_each(F&& f) {
    for (auto& l : layers) {
      for (auto& v : l.weights) f(v);
      for (auto& v : l.bias) f(v);
    }
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& l : layers) {
      for (const auto& v : l.weights) f(v);
      for (const auto& v : l.bias) f(v);
    }
  }

  /// Throws ContractError naming the first layer whose shape or values are bad.
  void validate() const {
    for (int l = 0; l < kNumLayers; ++l) {
      const auto& L = layers[l];
      if (L.rows != kLayerOut[l] || L.cols != kLayerIn[l] ||
          L.weights.size() != static_cast<std::size_t>(L.rows) * L.cols ||
          L.bias.size() != static_cast<std::size_t>(L.rows)) {
        throw ContractError(std::string("layer ") + kLayerNames[l] + ": shape mismatch");
      }
      for (double v : L.weights)
        if (!std::isfinite(v)) throw ContractError(std::string("layer ") + kLayerNames[l] + ": non-finite weight");
      for (double v : L.bias)
        if (!std::isfinite(v)) throw ContractError(std::string("layer ") + kLayerNames[l] + ": non-finite bias");
    }
  }

  bool operator==(const FusionParams&) const = default;
};

/// Fan-in scaled uniform weights in +-sqrt(6 / fan_in), zero biases.
inline FusionParams init_params(std::uint64_t seed) {
  FusionParams p = FusionParams::zeros();
  std::mt19937_64 rng(seed);
  for (auto& L : p.layers) {
    const double bound = std::sqrt(6.0 / L.cols);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : L.weights) v = dist(rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Blocked per-element kernel. Elements are processed in blocks of kBlock with
// the element index innermost so the channel loops vectorize.

inline constexpr int kBlock = 16;

namespace detail {

template <typename T>
struct PackedLayer {
  std::vector<T> w;  // rows x cols, row-major
  std::vector<T> b;
};

template <typename T>
using PackedParams = std::array<PackedLayer<T>, kNumLayers>;

template <typename T>
PackedParams<T> pack(const FusionParams& p) {
  PackedParams<T> out;
  for (int l = 0; l < kNumLayers; ++l) {
    out[l].w.assign(p.layers[l].weights.begin(), p.layers[l].weights.end());
    out[l].b.assign(p.layers[l].bias.begin(), p.layers[l].bias.end());
  }
  return out;
}

// One channel of a block as a single vector value (GCC/Clang extension).
template <typename T>
using BlockVec [[gnu::vector_size(kBlock * sizeof(T))]] = T;

template <typename T>
inline BlockVec<T> load_vec(const T* p) {
  BlockVec<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <typename T>
inline void store_vec(T* p, const BlockVec<T>& v) {
  std::memcpy(p, &v, sizeof v);
}

// y[o][e] = b[o] + sum_c w[o][c] x[c][e], for one block.
template <typename T, int In, int Out>
inline void dense_block(const T* __restrict w, const T* __restrict b, const T* __restrict x,
                        T* __restrict y) {
  BlockVec<T> xs[In];
  for (int c = 0; c < In; ++c) xs[c] = load_vec<T>(x + c * kBlock);
  // Four output rows at a time keep four independent FMA chains in flight.
  constexpr int kMain = Out / 4 * 4;
  for (int o = 0; o < kMain; o += 4) {
    BlockVec<T> a0 = BlockVec<T>{} + b[o], a1 = BlockVec<T>{} + b[o + 1];
    BlockVec<T> a2 = BlockVec<T>{} + b[o + 2], a3 = BlockVec<T>{} + b[o + 3];
    const T* w0 = w + o * In;
    for (int c = 0; c < In; ++c) {
      a0 += w0[c] * xs[c];
      a1 += w0[In + c] * xs[c];
      a2 += w0[2 * In + c] * xs[c];
      a3 += w0[3 * In + c] * xs[c];
    }
    store_vec<T>(y + o * kBlock, a0);
    store_vec<T>(y + (o + 1) * kBlock, a1);
    store_vec<T>(y + (o + 2) * kBlock, a2);
    store_vec<T>(y + (o + 3) * kBlock, a3);
  }
  for (int o = kMain; o < Out; ++o) {
    BlockVec<T> acc = BlockVec<T>{} + b[o];
    const T* wr = w + o * In;
    for (int c = 0; c < In; ++c) acc += wr[c] * xs[c];
    store_vec<T>(y + o * kBlock, acc);
  }
}

template <typename T, int N>
inline void relu_block(const T* __restrict x, T* __restrict y) {
  const BlockVec<T> zero{};
  for (int c = 0; c < N; ++c) {
    const auto v = load_vec<T>(x + c * kBlock);
    store_vec<T>(y + c * kBlock, v > zero ? v : zero);
  }
}

// Per-block scratch, channel-major.
template <typename T>
struct BlockBuffers {
  alignas(64) T in[4 * kBlock];
  alignas(64) T z1[18 * kBlock];
  alignas(64) T a1[18 * kBlock];
  alignas(64) T z2[36 * kBlock];
  alignas(64) T a2[36 * kBlock];
  alignas(64) T z3[36 * kBlock];
  alignas(64) T a3[36 * kBlock];
  alignas(64) T out[kBlock];
};

template <typename T>
inline void run_block(const PackedParams<T>& p, BlockBuffers<T>& bb) {
  dense_block<T, 4, 18>(p[0].w.data(), p[0].b.data(), bb.in, bb.z1);
  relu_block<T, 18>(bb.z1, bb.a1);
  dense_block<T, 18, 36>(p[1].w.data(), p[1].b.data(), bb.a1, bb.z2);
  relu_block<T, 36>(bb.z2, bb.a2);
  dense_block<T, 36, 36>(p[2].w.data(), p[2].b.data(), bb.a2, bb.z3);
  relu_block<T, 36>(bb.z3, bb.a3);
  dense_block<T, 36, 1>(p[3].w.data(), p[3].b.data(), bb.a3, bb.out);
}

// Loads elements [first, first + count) into the block input, zero padded.
template <typename T>
inline void load_block(const std::vector<JointElement>& elems, std::size_t first, int count,
                       BlockBuffers<T>& bb) {
  for (int e = 0; e < kBlock; ++e) {
    if (e < count) {
      const auto& el = elems[first + e];
      bb.in[0 * kBlock + e] = static_cast<T>(el.iou);
      bb.in[1 * kBlock + e] = static_cast<T>(el.s2d);
      bb.in[2 * kBlock + e] = static_cast<T>(el.s3d);
      bb.in[3 * kBlock + e] = static_cast<T>(el.d_norm);
    } else {
      for (int c = 0; c < 4; ++c) bb.in[c * kBlock + e] = T(0);
    }
  }
}

}  // namespace detail

/// Per-element activations kept for backprop. Pre-activations are stored
/// element-major: z1 is p x 18, z2 and z3 are p x 36.
struct ForwardCache {
  int n = 0;
  std::vector<double> inputs;  // p x 4
  std::vector<double> z1, z2, z3;
  std::vector<double> element_logits;  // p
  std::vector<std::int32_t> argmax;    // n, winning element per column

  std::size_t element_count() const { return element_logits.size(); }
};

struct FusedFrameScores {
  std::vector<double> logits;  // one per class-local 3D candidate
  ClassId class_id = ClassId::kCar;
  std::string frame_id;
};

namespace detail {

// Column max with the lowest element index winning ties.
inline void column_max(const SparseJointTensor& t, std::span<const double> elem_logits,
                       std::vector<double>& fused, std::vector<std::int32_t>* argmax) {
  fused.assign(t.n, -std::numeric_limits<double>::infinity());
  if (argmax) argmax->assign(t.n, -1);
  for (int j = 0; j < t.n; ++j) {
    for (auto e = t.column_offsets[j]; e < t.column_offsets[j + 1]; ++e) {
      if (elem_logits[e] > fused[j]) {
        fused[j] = elem_logits[e];
        if (argmax) (*argmax)[j] = e;
      }
    }
  }
}

inline void check_tensor(const SparseJointTensor& t) {
  if (t.column_offsets.size() != static_cast<std::size_t>(t.n) + 1 ||
      t.column_offsets.back() != static_cast<std::int32_t>(t.elements.size())) {
    throw ContractError("tensor index cache does not match its element list");
  }
  for (int j = 0; j < t.n; ++j) {
    if (t.column_offsets[j + 1] <= t.column_offsets[j]) {
      throw ContractError("3D candidate " + std::to_string(j) + " has no tensor element");
    }
  }
}

}  // namespace detail

/// Double-precision forward pass that records what backward() needs.
inline std::pair<FusedFrameScores, ForwardCache> forward(const FusionParams& params,
                                                         const SparseJointTensor& t) {
  detail::check_tensor(t);
  const auto packed = detail::pack<double>(params);
  const std::size_t p = t.elements.size();
  ForwardCache cache;
  cache.n = t.n;
  cache.inputs.resize(p * 4);
  cache.z1.resize(p * 18);
  cache.z2.resize(p * 36);
  cache.z3.resize(p * 36);
  cache.element_logits.resize(p);
  detail::BlockBuffers<double> bb;
  for (std::size_t first = 0; first < p; first += kBlock) {
    const int count = static_cast<int>(std::min<std::size_t>(kBlock, p - first));
    detail::load_block(t.elements, first, count, bb);
    detail::run_block(packed, bb);
    for (int e = 0; e < count; ++e) {
      const std::size_t g = first + e;
      for (int c = 0; c < 4; ++c) cache.inputs[g * 4 + c] = bb.in[c * kBlock + e];
      for (int c = 0; c < 18; ++c) cache.z1[g * 18 + c] = bb.z1[c * kBlock + e];
      for (int c = 0; c < 36; ++c) cache.z2[g * 36 + c] = bb.z2[c * kBlock + e];
      for (int c = 0; c < 36; ++c) cache.z3[g * 36 + c] = bb.z3[c * kBlock + e];
      cache.element_logits[g] = bb.out[e];
    }
  }
  FusedFrameScores scores;
  scores.class_id = t.class_id;
  detail::column_max(t, cache.element_logits, scores.logits, &cache.argmax);
  return {std::move(scores), std::move(cache)};
}

/// Gradients of sum_j grad_out[j] * logit_j with respect to every parameter.
/// Only each column's argmax element receives gradient.
inline FusionParams backward(const FusionParams& params, const ForwardCache& cache,
                             std::span<const double> grad_out) {
  if (grad_out.size() != static_cast<std::size_t>(cache.n) ||
      cache.argmax.size() != static_cast<std::size_t>(cache.n)) {
    throw ContractError("backward: gradient length does not match the forward cache");
  }
  const std::size_t p = cache.element_count();
  if (cache.inputs.size() != p * 4 || cache.z1.size() != p * 18 || cache.z2.size() != p * 36 ||
      cache.z3.size() != p * 36) {
    throw ContractError("backward: inconsistent forward cache");
  }
  FusionParams g = FusionParams::zeros();
  const auto& L2 = params.layers[1];
  const auto& L3 = params.layers[2];
  const auto& L4 = params.layers[3];
  std::array<double, 36> d3{}, d2{}, a2{}, a3{};
  std::array<double, 18> d1{}, a1{};
  for (int j = 0; j < cache.n; ++j) {
    const double go = grad_out[j];
    if (go == 0.0) continue;
    const auto e = cache.argmax[j];
    if (e < 0 || static_cast<std::size_t>(e) >= p) throw ContractError("backward: bad argmax index");
    const double* x = &cache.inputs[e * 4];
    const double* z1 = &cache.z1[e * 18];
    const double* z2 = &cache.z2[e * 36];
    const double* z3 = &cache.z3[e * 36];
    for (int c = 0; c < 18; ++c) a1[c] = z1[c] > 0.0 ? z1[c] : 0.0;
    for (int c = 0; c < 36; ++c) a2[c] = z2[c] > 0.0 ? z2[c] : 0.0;
    for (int c = 0; c < 36; ++c) a3[c] = z3[c] > 0.0 ? z3[c] : 0.0;

    // fc4
    for (int c = 0; c < 36; ++c) g.layers[3].weights[c] += go * a3[c];
    g.layers[3].bias[0] += go;
    for (int c = 0; c < 36; ++c) d3[c] = z3[c] > 0.0 ? go * L4.weights[c] : 0.0;
    // fc3
    d2.fill(0.0);
    for (int o = 0; o < 36; ++o) {
      const double d = d3[o];
      if (d == 0.0) continue;
      double* gw = &g.layers[2].weights[o * 36];
      const double* w = &L3.weights[o * 36];
      for (int c = 0; c < 36; ++c) {
        gw[c] += d * a2[c];
        d2[c] += d * w[c];
      }
      g.layers[2].bias[o] += d;
    }
    for (int c = 0; c < 36; ++c) d2[c] = z2[c] > 0.0 ? d2[c] : 0.0;
    // fc2
    d1.fill(0.0);
    for (int o = 0; o < 36; ++o) {
      const double d = d2[o];
      if (d == 0.0) continue;
      double* gw = &g.layers[1].weights[o * 18];
      const double* w = &L2.weights[o * 18];
      for (int c = 0; c < 18; ++c) {
        gw[c] += d * a1[c];
        d1[c] += d * w[c];
      }
      g.layers[1].bias[o] += d;
    }
    // fc1
    for (int o = 0; o < 18; ++o) {
      const double d = z1[o] > 0.0 ? d1[o] : 0.0;
      if (d == 0.0) continue;
      double* gw = &g.layers[0].weights[o * 4];
      for (int c = 0; c < 4; ++c) gw[c] += d * x[c];
      g.layers[0].bias[o] += d;
    }
  }
  return g;
}

/// Single-precision inference without a cache, used on the fusion path.
class FusionEngine {
 public:
  explicit FusionEngine(const FusionParams& params) : packed_(detail::pack<float>(params)) {
    params.validate();
  }

  FusedFrameScores run(const SparseJointTensor& t) const {
    detail::check_tensor(t);
    const std::size_t p = t.elements.size();
    elem_logits_.resize(p);
    detail::BlockBuffers<float> bb;
    for (std::size_t first = 0; first < p; first += kBlock) {
      const int count = static_cast<int>(std::min<std::size_t>(kBlock, p - first));
      detail::load_block(t.elements, first, count, bb);
      detail::run_block(packed_, bb);
      for (int e = 0; e < count; ++e) elem_logits_[first + e] = bb.out[e];
    }
    FusedFrameScores scores;
    scores.class_id = t.class_id;
    detail::column_max(t, elem_logits_, scores.logits, nullptr);
    return scores;
  }

 private:
  detail::PackedParams<float> packed_;
  mutable std::vector<double> elem_logits_;
};

inline double sigmoid_clamped(double logit) {
  return 1.0 / (1.0 + std::exp(-std::clamp(logit, -kLogitClamp, kLogitClamp)));
}

inline std::vector<double> fuse_probabilities(const FusedFrameScores& s) {
  std::vector<double> out(s.logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_clamped(s.logits[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: {version, seed, layers: [{name, rows, cols, weights, bias}]}
// with 17 significant digits per number.

inline constexpr int kCheckpointVersion = 1;

inline std::string format_checkpoint(const FusionParams& p, std::uint64_t seed) {
  std::ostringstream os;
  auto arr = [&](const std::vector<double>& v) {
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << text::fmt_g(v[i], 17);
    os << ']';
  };
  os << "{\n  \"version\": " << kCheckpointVersion << ",\n  \"seed\": " << seed << ",\n  \"layers\": [\n";
  for (int l = 0; l < kNumLayers; ++l) {
    const auto& L = p.layers[l];
    os << "    {\"name\": \"" << kLayerNames[l] << "\", \"rows\": " << L.rows << ", \"cols\": " << L.cols
       << ",\n     \"weights\": ";
    arr(L.weights);
    os << ",\n     \"bias\": ";
    arr(L.bias);
    os << '}' << (l + 1 < kNumLayers ? "," : "") << '\n';
  }
  os << "  ]\n}\n";
  return os.str();
}

struct Checkpoint {
  FusionParams params;
  std::uint64_t seed = 0;
};

/// Shape problems are reported as DataError naming the offending layer.
inline Checkpoint parse_checkpoint(std::string_view text_in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text_in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  Checkpoint ck;
  ck.params = FusionParams::zeros();
  try {
    if (j.at("version").get<int>() != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
    ck.seed = j.at("seed").get<std::uint64_t>();
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != kNumLayers) {
      throw DataError("checkpoint: expected " + std::to_string(kNumLayers) + " layers");
    }
    for (int l = 0; l < kNumLayers; ++l) {
      const auto& jl = layers[l];
      const std::string name = jl.at("name").get<std::string>();
      auto fail = [&](const std::string& why) {
        throw DataError("checkpoint layer " + std::string(kLayerNames[l]) + ": " + why);
      };
      if (name != kLayerNames[l]) fail("unexpected name '" + name + "'");
      auto& L = ck.params.layers[l];
      if (jl.at("rows").get<int>() != L.rows || jl.at("cols").get<int>() != L.cols) {
        fail("shape mismatch, expected " + std::to_string(L.rows) + "x" + std::to_string(L.cols));
      }
      auto w = jl.at("weights").get<std::vector<double>>();
      auto b = jl.at("bias").get<std::vector<double>>();
      if (w.size() != L.weights.size() || b.size() != L.bias.size()) fail("wrong number of values");
      L.weights = std::move(w);
      L.bias = std::move(b);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  try {
    ck.params.validate();
  } catch (const ContractError& e) {
    throw DataError(std::string("checkpoint ") + e.what());
  }
  return ck;
}

}  // namespace clocs
