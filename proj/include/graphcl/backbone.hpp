#pragma once

#include <functional>

#include "graphcl/params.hpp"
#include "graphcl/rng.hpp"

namespace graphcl {

struct BackboneConfig {
  int levels = 3;
  int base_channels = 8;
  int classes = 2;
  int in_channels = 1;
  bool mode3d = false;
  int gcn_level = 3;  // encoder level whose feature map the SA tap replaces

  int channels_at(int level) const { return base_channels << (level - 1); }
  void validate() const {
    if (levels < 2) throw ConfigError("BackboneConfig.levels: must be >= 2");
    if (base_channels < 1) throw ConfigError("BackboneConfig.base_channels: must be >= 1");
    if (classes < 2) throw ConfigError("BackboneConfig.classes: must be >= 2");
    if (gcn_level < 1 || gcn_level > levels)
      throw ConfigError("BackboneConfig.gcn_level: must be in [1, levels]");
  }
};

// Maps the tapped encoder feature map to its replacement (e.g. SA merge).
using TapTransform = std::function<NodePtr(Tape&, const NodePtr&)>;

struct BackboneOut {
  NodePtr logits;             // {classes, D, H, W}, input resolution
  std::vector<NodePtr> enc;   // per-level encoder features (post tap at gcn_level)
  NodePtr deep;               // bottleneck feature map
  NodePtr tapped;             // feature map at gcn_level, pre-transform
};

// Registers all backbone parameters with the "init" substream; creation order
// is fixed so equal seeds give bitwise-equal initializations.
void init_backbone_params(ParamStore& store, const BackboneConfig& cfg, Rng& rng);

BackboneOut backbone_forward(Tape& tape, const NodePtr& x, ParamBinder& params,
                             const BackboneConfig& cfg,
                             const TapTransform& tap = nullptr);

// Split forward, for batch-level transforms between encoder and decoder.
std::vector<NodePtr> backbone_encode(Tape& tape, const NodePtr& x, ParamBinder& params,
                                     const BackboneConfig& cfg);
NodePtr backbone_decode(Tape& tape, const std::vector<NodePtr>& enc,
                        ParamBinder& params, const BackboneConfig& cfg);

// Fan-in-scaled uniform weights; biases drawn small but nonzero.
Tensor init_conv_weight(int co, int ci, int kd, int kh, int kw, Rng& rng);
Tensor init_dense_weight(int d, int m, Rng& rng);
Tensor init_bias(int n, Rng& rng);

}  // namespace graphcl
