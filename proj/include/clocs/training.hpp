// SPDX-License-Identifier: Apache-2.0
//
// Target assignment, focal loss, Adam and the per-frame training loop.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "clocs/candidates.hpp"
#include "clocs/encoder.hpp"
#include "clocs/geometry.hpp"
#include "clocs/network.hpp"

namespace clocs {

enum class MatchMetric { kBev, k3d };

inline MatchMetric match_metric_from_name(std::string_view s) {
  if (s == "bev") return MatchMetric::kBev;
  if (s == "3d") return MatchMetric::k3d;
  throw ConfigError("unknown match metric '" + std::string(s) + "' (expected bev or 3d)");
}

inline std::string_view match_metric_name(MatchMetric m) { return m == MatchMetric::kBev ? "bev" : "3d"; }

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  bool focal_enabled = true;
};

struct TrainConfig {
  double lr0 = 3e-3;
  double lr_decay = 0.8;
  int epochs = 15;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Indexed by ClassId: car, pedestrian, cyclist, other.
  std::array<double, kNumClasses> positive_iou = {0.7, 0.5, 0.5, 0.7};
  MatchMetric match_metric = MatchMetric::k3d;
  LossConfig loss{};

  void validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lrDecay must be in (0, 1]");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(loss.alpha > 0.0 && loss.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
    if (!(loss.gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  }

  double learning_rate(int epoch) const { return lr0 * std::pow(lr_decay, epoch); }
};

/// A candidate is positive when its best same-class, non-DontCare match
/// reaches the class threshold. Any number of candidates may share a GT.
inline std::vector<std::uint8_t> assign_targets(std::span<const Detection3D> dets,
                                                std::span<const GroundTruthObject> gts,
                                                const TrainConfig& cfg) {
  std::vector<std::uint8_t> labels(dets.size(), 0);
  for (std::size_t j = 0; j < dets.size(); ++j) {
    const auto& d = dets[j];
    const double thr = cfg.positive_iou[static_cast<int>(d.class_id)];
    for (const auto& g : gts) {
      if (g.is_dont_care || !g.box3d || g.class_id != d.class_id) continue;
      const double iou = cfg.match_metric == MatchMetric::k3d ? iou_3d(d.box, *g.box3d)
                                                              : iou_bev(d.box, *g.box3d);
      if (iou >= thr) {
        labels[j] = 1;
        break;
      }
    }
  }
  return labels;
}

struct LossResult {
  double loss = 0.0;
  std::vector<double> d_logits;
};

inline constexpr double kMinPt = 1e-7;

/// Mean focal loss over candidates, with its exact gradient. Logits are
/// clamped to +-30 first; the gradient is evaluated at the clamped value.
/// With focal_enabled = false this is plain binary cross-entropy.
inline LossResult focal_loss(std::span<const double> logits, std::span<const std::uint8_t> labels,
                             const LossConfig& cfg) {
  if (logits.size() != labels.size()) throw ContractError("focal_loss: length mismatch");
  LossResult r;
  r.d_logits.assign(logits.size(), 0.0);
  if (logits.empty()) return r;
  const double gamma = cfg.focal_enabled ? cfg.gamma : 0.0;
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool pos = labels[i] != 0;
    // Work in the "target" orientation: z_t = z for positives, -z for negatives.
    const double zt = pos ? std::clamp(logits[i], -kLogitClamp, kLogitClamp)
                          : -std::clamp(logits[i], -kLogitClamp, kLogitClamp);
    const double pt = 1.0 / (1.0 + std::exp(-zt));
    const double q = 1.0 - pt;  // == sigmoid(-zt)
    const double at = !cfg.focal_enabled ? 1.0 : pos ? cfg.alpha : 1.0 - cfg.alpha;
    const double log_pt = std::log(std::max(pt, kMinPt));
    const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    total += -at * mod * log_pt;
    // d/dz_t of -at q^g ln(pt) = at q^g (g pt ln(pt) - q)
    const double dzt = at * mod * (gamma * pt * log_pt - q);
    r.d_logits[i] = (pos ? dzt : -dzt) * inv_n;
  }
  r.loss = total * inv_n;
  return r;
}

struct AdamState {
  FusionParams m = FusionParams::zeros();
  FusionParams v = FusionParams::zeros();
  std::int64_t step = 0;
};

/// One bias-corrected Adam update, in place.
inline void adam_step(FusionParams& params, const FusionParams& grads, AdamState& st, double lr,
                      const TrainConfig& cfg) {
  ++st.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (int l = 0; l < kNumLayers; ++l) {
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
      if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
        throw ContractError(std::string("adam_step: shape mismatch in ") + kLayerNames[l]);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
    };
    update(params.layers[l].weights, grads.layers[l].weights, st.m.layers[l].weights,
           st.v.layers[l].weights);
    update(params.layers[l].bias, grads.layers[l].bias, st.m.layers[l].bias, st.v.layers[l].bias);
  }
}

/// One training sample: a class tensor and a binary label per column.
struct TrainingSample {
  std::string frame_id;
  SparseJointTensor tensor;
  std::vector<std::uint8_t> labels;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  FusionParams params;
  std::vector<EpochLog> log;
  std::int64_t steps = 0;
};

/// Per-frame Adam steps with lr = lr0 * decay^epoch; frame order is shuffled
/// every epoch by an RNG seeded from cfg.seed.
inline TrainResult train(std::span<const TrainingSample> dataset, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw DataError("training set is empty");
  TrainResult r;
  r.params = init_params(cfg.seed);
  for (const auto& s : dataset) {
    if (s.labels.size() != static_cast<std::size_t>(s.tensor.n)) {
      throw ContractError("training sample " + s.frame_id + ": label count does not match tensor");
    }
    if (s.tensor.n == 0 && log) *log << "skipping frame " << s.frame_id << ": no candidates\n";
  }
  AdamState st;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::int64_t frames = 0;
    for (auto idx : order) {
      const auto& s = dataset[idx];
      if (s.tensor.n == 0) continue;
      auto [scores, cache] = forward(r.params, s.tensor);
      auto loss = focal_loss(scores.logits, s.labels, cfg.loss);
      auto grads = backward(r.params, cache, loss.d_logits);
      adam_step(r.params, grads, st, lr, cfg);
      loss_sum += loss.loss;
      ++frames;
      ++r.steps;
    }
    r.log.push_back({epoch, frames ? loss_sum / static_cast<double>(frames) : 0.0, lr});
  }
  return r;
}

inline std::string format_loss_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,mean_loss,lr\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + ',' + text::fmt_g(e.mean_loss, 17) + ',' + text::fmt_g(e.lr, 17) + '\n';
  }
  return out;
}

}  // namespace clocs
