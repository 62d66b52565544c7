#include "graphcl/backbone.hpp"

#include <cmath>

namespace graphcl {

Tensor init_conv_weight(int co, int ci, int kd, int kh, int kw, Rng& rng) {
  const real limit = std::sqrt(3.0 / (static_cast<real>(ci) * kd * kh * kw));
  return Tensor::uniform({co, ci, kd, kh, kw}, rng, -limit, limit);
}

Tensor init_dense_weight(int d, int m, Rng& rng) {
  const real limit = std::sqrt(3.0 / static_cast<real>(d));
  return Tensor::uniform({d, m}, rng, -limit, limit);
}

Tensor init_bias(int n, Rng& rng) {
  // Small nonzero draws: a zero bias would park relu pre-activations exactly
  // on the kink wherever the incoming receptive field is all dead.
  return Tensor::uniform({n}, rng, -0.05, 0.05);
}

namespace {

void add_conv(ParamStore& store, const std::string& name, int co, int ci, int k,
              bool mode3d, Rng& rng) {
  const int kd = mode3d ? k : 1;
  store.add(name + ".w", init_conv_weight(co, ci, kd, k, k, rng));
  store.add(name + ".b", init_bias(co, rng));
}

NodePtr conv_relu(Tape& t, const NodePtr& x, ParamBinder& P, const std::string& name) {
  return relu(t, conv(t, x, P(name + ".w"), P(name + ".b")));
}

}  // namespace

void init_backbone_params(ParamStore& store, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  for (int l = 1; l <= cfg.levels; ++l) {
    const int ci = l == 1 ? cfg.in_channels : cfg.channels_at(l - 1);
    const int co = cfg.channels_at(l);
    add_conv(store, "enc" + std::to_string(l) + ".conv1", co, ci, 3, cfg.mode3d, rng);
    add_conv(store, "enc" + std::to_string(l) + ".conv2", co, co, 3, cfg.mode3d, rng);
  }
  for (int l = cfg.levels - 1; l >= 1; --l) {
    const int ci = cfg.channels_at(l + 1) + cfg.channels_at(l);  // upsampled + skip
    const int co = cfg.channels_at(l);
    add_conv(store, "dec" + std::to_string(l) + ".conv1", co, ci, 3, cfg.mode3d, rng);
    add_conv(store, "dec" + std::to_string(l) + ".conv2", co, co, 3, cfg.mode3d, rng);
  }
  add_conv(store, "head", cfg.classes, cfg.base_channels, 1, cfg.mode3d, rng);
}

std::vector<NodePtr> backbone_encode(Tape& tape, const NodePtr& x, ParamBinder& P,
                                     const BackboneConfig& cfg) {
  cfg.validate();
  std::vector<NodePtr> enc;
  NodePtr cur = x;
  for (int l = 1; l <= cfg.levels; ++l) {
    if (l > 1) cur = maxpool2(tape, cur, cfg.mode3d);
    cur = conv_relu(tape, cur, P, "enc" + std::to_string(l) + ".conv1");
    cur = conv_relu(tape, cur, P, "enc" + std::to_string(l) + ".conv2");
    enc.push_back(cur);
  }
  return enc;
}

NodePtr backbone_decode(Tape& tape, const std::vector<NodePtr>& enc, ParamBinder& P,
                        const BackboneConfig& cfg) {
  NodePtr cur = enc[cfg.levels - 1];
  for (int l = cfg.levels - 1; l >= 1; --l) {
    cur = upsample2(tape, cur, cfg.mode3d);
    cur = concat_channels(tape, cur, enc[l - 1]);
    cur = conv_relu(tape, cur, P, "dec" + std::to_string(l) + ".conv1");
    cur = conv_relu(tape, cur, P, "dec" + std::to_string(l) + ".conv2");
  }
  return conv(tape, cur, P("head.w"), P("head.b"));
}

BackboneOut backbone_forward(Tape& tape, const NodePtr& x, ParamBinder& P,
                             const BackboneConfig& cfg, const TapTransform& tap) {
  BackboneOut out;
  out.enc = backbone_encode(tape, x, P, cfg);
  out.tapped = out.enc[cfg.gcn_level - 1];
  if (tap) out.enc[cfg.gcn_level - 1] = tap(tape, out.tapped);
  out.deep = out.enc[cfg.levels - 1];
  out.logits = backbone_decode(tape, out.enc, P, cfg);
  return out;
}

}  // namespace graphcl
