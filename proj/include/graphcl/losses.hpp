#pragma once

#include <optional>

#include "graphcl/autodiff.hpp"
#include "graphcl/bcpmix.hpp"
#include "graphcl/volume.hpp"

namespace graphcl {

struct LossReport {
  real l_in = 0, l_out = 0, l_cc = 0, l_all = 0;
  real alpha = 0, kappa = 0;
  real weight_sum_in = 0, weight_sum_out = 0;
  bool has_cc = false;
};

// 0.5/0.5 CE + soft-Dice by default; `mix` is the Dice share.
struct SegLossConfig {
  real mix = 0.5;
  real dice_eps = 1e-5;
};

// logits {k,D,H,W}; weights one entry per voxel, >= 0, not all zero.
NodePtr seg_loss_weighted(Tape& t, const NodePtr& logits, const LabelMap& target,
                          Tensor weights, const SegLossConfig& cfg = {});

Tensor mask_weights_in(const MixMask& m, real alpha);   // M + alpha(1-M)
Tensor mask_weights_out(const MixMask& m, real alpha);  // (1-M) + alpha*M

NodePtr loss_in(Tape& t, const NodePtr& q_in, const LabelMap& y_in, const MixMask& m,
                real alpha, const SegLossConfig& cfg = {});
NodePtr loss_out(Tape& t, const NodePtr& q_out, const LabelMap& y_out, const MixMask& m,
                 real alpha, const SegLossConfig& cfg = {});

// l_all = l_in + l_out + kappa * l_cc (exact linear combination).
LossReport total_loss(real l_in, real l_out, std::optional<real> l_cc, real kappa,
                      real alpha);

}  // namespace graphcl
