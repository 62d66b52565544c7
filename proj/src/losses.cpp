#include "graphcl/losses.hpp"

#include <cmath>

namespace graphcl {

NodePtr seg_loss_weighted(Tape& t, const NodePtr& logits, const LabelMap& target,
                          Tensor weights, const SegLossConfig& cfg) {
  if (logits->val.ndim() != 4)
    throw ShapeError("seg_loss: logits must be rank-4, got " + logits->val.shape_str());
  const int k = logits->val.shape[0];
  const std::int64_t n =
      static_cast<std::int64_t>(logits->val.shape[1]) * logits->val.shape[2] *
      logits->val.shape[3];
  if (k != target.classes)
    throw ShapeError("seg_loss: logits classes " + std::to_string(k) + " vs target " +
                     std::to_string(target.classes));
  if (target.voxels() != n)
    throw ShapeError("seg_loss: target voxel count mismatch");
  if (weights.size() != n) throw ShapeError("seg_loss: weights size mismatch");
  if ((weights.data < 0.0).any()) throw ConfigError("seg_loss: negative weight");
  const real wsum = weights.data.sum();
  if (wsum <= 0.0) throw ConfigError("seg_loss: degenerate all-zero weights");

  // Per-voxel softmax probabilities, cached for backward.
  auto probs = std::make_shared<Tensor>(logits->val.shape);
  real ce_sum = 0;
  std::vector<real> num(k, cfg.dice_eps), den(k, cfg.dice_eps);
  for (std::int64_t v = 0; v < n; ++v) {
    real mx = logits->val.data[v];
    for (int c = 1; c < k; ++c) mx = std::max(mx, logits->val.data[c * n + v]);
    real z = 0;
    for (int c = 0; c < k; ++c) z += std::exp(logits->val.data[c * n + v] - mx);
    const int g = target.grid[v];
    const real w = weights.data[v];
    for (int c = 0; c < k; ++c) {
      const real p = std::exp(logits->val.data[c * n + v] - mx) / z;
      probs->data[c * n + v] = p;
      num[c] += (c == g) ? 2.0 * w * p : 0.0;
      den[c] += w * (p + (c == g ? 1.0 : 0.0));
    }
    ce_sum += -w * std::log(probs->data[static_cast<std::int64_t>(g) * n + v]);
  }
  real dice = 0;
  for (int c = 0; c < k; ++c) dice += 1.0 - num[c] / den[c];
  dice /= k;
  Tensor v({1});
  v.data[0] = (1.0 - cfg.mix) * ce_sum / wsum + cfg.mix * dice;

  auto wts = std::make_shared<Tensor>(std::move(weights));
  auto tgt = std::make_shared<LabelMap>(target);
  return t.record(std::move(v), {logits}, [logits, probs, wts, tgt, cfg, wsum, num, den,
                                           k, n](Node& self) {
    const real u = self.grad.data[0];
    ArrayX g = ArrayX::Zero(static_cast<std::int64_t>(k) * n);
    std::vector<real> dp(k);
    for (std::int64_t v = 0; v < n; ++v) {
      const int gt = tgt->grid[v];
      const real w = wts->data[v];
      // d(dice)/dp, then chain through the per-voxel softmax
      real dot = 0;
      for (int c = 0; c < k; ++c) {
        const real ddice =
            (1.0 / k) * (-(c == gt ? 2.0 * w : 0.0) / den[c] + num[c] * w / (den[c] * den[c]));
        dp[c] = cfg.mix * ddice;
        dot += dp[c] * probs->data[c * n + v];
      }
      for (int c = 0; c < k; ++c) {
        const real p = probs->data[c * n + v];
        real dz = p * (dp[c] - dot);  // dice share
        dz += (1.0 - cfg.mix) * w * (p - (c == gt ? 1.0 : 0.0)) / wsum;  // CE share
        g[c * n + v] = u * dz;
      }
    }
    accum_grad(*logits, g);
  });
}

namespace {

Tensor mask_weights(const MixMask& m, real w_one, real w_zero) {
  Tensor w({m.dims[0], m.dims[1], m.dims[2]});
  for (std::int64_t i = 0; i < m.voxels(); ++i) w.data[i] = m.is_one(i) ? w_one : w_zero;
  return w;
}

}  // namespace

Tensor mask_weights_in(const MixMask& m, real alpha) { return mask_weights(m, 1.0, alpha); }
Tensor mask_weights_out(const MixMask& m, real alpha) { return mask_weights(m, alpha, 1.0); }

NodePtr loss_in(Tape& t, const NodePtr& q_in, const LabelMap& y_in, const MixMask& m,
                real alpha, const SegLossConfig& cfg) {
  if (alpha < 0) throw ConfigError("loss_in: alpha must be >= 0");
  return seg_loss_weighted(t, q_in, y_in, mask_weights_in(m, alpha), cfg);
}

NodePtr loss_out(Tape& t, const NodePtr& q_out, const LabelMap& y_out, const MixMask& m,
                 real alpha, const SegLossConfig& cfg) {
  if (alpha < 0) throw ConfigError("loss_out: alpha must be >= 0");
  return seg_loss_weighted(t, q_out, y_out, mask_weights_out(m, alpha), cfg);
}

LossReport total_loss(real l_in, real l_out, std::optional<real> l_cc, real kappa,
                      real alpha) {
  if (!std::isfinite(l_in) || !std::isfinite(l_out) ||
      (l_cc && !std::isfinite(*l_cc)))
    throw NumericError("total_loss: non-finite loss term");
  LossReport r;
  r.l_in = l_in;
  r.l_out = l_out;
  r.alpha = alpha;
  r.kappa = kappa;
  r.has_cc = l_cc.has_value();
  r.l_cc = l_cc.value_or(0.0);
  r.l_all = l_in + l_out + (l_cc ? kappa * *l_cc : 0.0);
  return r;
}

}  // namespace graphcl
