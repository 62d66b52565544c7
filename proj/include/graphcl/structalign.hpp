#pragma once

#include <vector>

#include "graphcl/backbone.hpp"
#include "graphcl/params.hpp"

namespace graphcl {

struct StructAlignConfig {
  int score_dim = 16;  // structure-feature dim h
  int feature_channels = 0;  // channels of the tapped map (d)
};

struct InstanceGraphNodes {
  NodePtr adjacency;  // {w,w}, Gram of structure scores
  NodePtr degrees;    // {w}, row sums
};

// DSA parameter block: dsa.{w,b}, sa_gcn.w, sa_merge.{w,b}.
void init_structalign_params(ParamStore& store, const StructAlignConfig& cfg, Rng& rng);

// GAP -> dense(h) -> row softmax over the batch; rows sum to 1. Training
// requires w >= 2; single-volume inference may pass allow_singleton.
NodePtr dsa_scores(Tape& t, const std::vector<NodePtr>& deep_maps, ParamBinder& P,
                   const StructAlignConfig& cfg, bool allow_singleton = false);

InstanceGraphNodes build_instance_graph(Tape& t, const NodePtr& scores);

// Z = D^{-1/2} A D^{-1/2} X W
NodePtr gcn_propagate(Tape& t, const InstanceGraphNodes& g, const NodePtr& signal,
                      const NodePtr& weight);

// Projects one Z row to the map's channel count, broadcasts spatially, adds.
NodePtr merge_features(Tape& t, const NodePtr& cnn_map, const NodePtr& z_row,
                       ParamBinder& P);

// Full path: replacement maps for each sample in the batch.
std::vector<NodePtr> structure_aware_transform(Tape& t,
                                               const std::vector<NodePtr>& tapped_maps,
                                               ParamBinder& P,
                                               const StructAlignConfig& cfg,
                                               bool allow_singleton = false);

}  // namespace graphcl
