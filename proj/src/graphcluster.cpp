#include "graphcl/graphcluster.hpp"

#include "graphcl/backbone.hpp"

namespace graphcl {

void init_graphcluster_params(ParamStore& store, const GraphClusterConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.feature_dim;
  store.add("gnn.w", init_dense_weight(d, d, rng));
  store.add("mlp.w1", init_dense_weight(d, d, rng));
  store.add("mlp.b1", init_bias(d, rng));
  store.add("mlp.w2", init_dense_weight(d, cfg.c_max, rng));
  store.add("mlp.b2", init_bias(cfg.c_max, rng));
}

NodePtr build_affinity(Tape& t, const NodePtr& f, real tau) {
  if (tau <= 0) throw ConfigError("build_affinity: tau must be > 0");
  if (f->val.ndim() != 2 || f->val.shape[0] < 2)
    throw ShapeError("build_affinity: need at least 2 node rows, got " + f->val.shape_str());
  NodePtr gram = matmul(t, f, f, false, true);
  return shift_scaled_max(t, gram, tau);
}

NodePtr gnn_layer(Tape& t, const NodePtr& n, const NodePtr& w_aff, const NodePtr& theta) {
  NodePtr scaled = scale_by_maxabs(t, w_aff);
  return relu(t, matmul(t, matmul(t, scaled, n), theta));
}

NodePtr assign_clusters(Tape& t, const NodePtr& n_hat, ParamBinder& P) {
  NodePtr hidden = relu(t, dense(t, n_hat, P("mlp.w1"), P("mlp.b1")));
  return softmax_rows(t, dense(t, hidden, P("mlp.w2"), P("mlp.b2")));
}

NodePtr cluster_loss(Tape& t, const NodePtr& f, ParamBinder& P,
                     const GraphClusterConfig& cfg) {
  // Unit-norm node rows make FF^T a correlation matrix and bound the trace
  // objective; raw features let the loss run away through the feature scale.
  NodePtr fn = row_l2_normalize(t, f);
  NodePtr w = build_affinity(t, fn, cfg.tau);
  NodePtr n_hat = gnn_layer(t, fn, w, P("gnn.w"));
  NodePtr s = assign_clusters(t, n_hat, P);
  NodePtr loss = cc_loss_op(t, w, s);
  if (cfg.normalize) {
    const real n = static_cast<real>(f->val.shape[0]);
    loss = scale(t, loss, 1.0 / (n * n));
  }
  return loss;
}

ClusterExtraction extract_clusters(const Tensor& s) {
  if (s.ndim() != 2) throw ShapeError("extract_clusters: expected rank-2 S");
  const int n = s.shape[0], c = s.shape[1];
  ClusterExtraction out;
  out.node_cluster.resize(n);
  std::vector<char> seen(c, 0);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (s.data[static_cast<std::int64_t>(i) * c + j] >
          s.data[static_cast<std::int64_t>(i) * c + best])
        best = j;
    out.node_cluster[i] = best;
    if (!seen[best]) { seen[best] = 1; ++out.count; }
  }
  return out;
}

}  // namespace graphcl
