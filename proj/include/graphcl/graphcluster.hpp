#pragma once

#include <vector>

#include "graphcl/params.hpp"
#include "graphcl/rng.hpp"

namespace graphcl {

struct GraphClusterConfig {
  real tau = 2.0;
  int c_max = 8;
  int feature_dim = 0;   // node feature dim d (deep channel count)
  bool normalize = false;  // divide L_CC by n^2

  void validate() const {
    if (tau <= 0) throw ConfigError("GraphClusterConfig.tau: must be > 0");
    if (c_max < 1) throw ConfigError("GraphClusterConfig.c_max: must be >= 1");
    if (feature_dim <= 0) throw ConfigError("GraphClusterConfig.feature_dim: must be > 0");
  }
};

// Parameter block: gnn.w, mlp.{w1,b1,w2,b2}.
void init_graphcluster_params(ParamStore& store, const GraphClusterConfig& cfg, Rng& rng);

// W = F F^T - max(F F^T)/tau (global scalar max).
NodePtr build_affinity(Tape& t, const NodePtr& f, real tau);

// N_hat = relu((W / max|W|) N Theta); signed affinities kept as-is.
NodePtr gnn_layer(Tape& t, const NodePtr& n, const NodePtr& w_aff, const NodePtr& theta);

// Two-layer MLP (hidden = d, relu) then row softmax -> {n, C_max}.
NodePtr assign_clusters(Tape& t, const NodePtr& n_hat, ParamBinder& P);

// Per-sample clustering loss from node features F {n,d}.
NodePtr cluster_loss(Tape& t, const NodePtr& f, ParamBinder& P,
                     const GraphClusterConfig& cfg);

// Hard assignment: argmax per row with lowest-index tie-break.
struct ClusterExtraction {
  std::vector<int> node_cluster;
  int count = 0;
};
ClusterExtraction extract_clusters(const Tensor& s);

}  // namespace graphcl
