#include "graphcl/structalign.hpp"

namespace graphcl {

void init_structalign_params(ParamStore& store, const StructAlignConfig& cfg, Rng& rng) {
  const int d = cfg.feature_channels;
  if (d <= 0) throw ConfigError("StructAlignConfig.feature_channels: must be > 0");
  if (cfg.score_dim < 1) throw ConfigError("StructAlignConfig.score_dim: must be >= 1");
  store.add("dsa.w", init_dense_weight(d, cfg.score_dim, rng));
  store.add("dsa.b", init_bias(cfg.score_dim, rng));
  store.add("sa_gcn.w", init_dense_weight(d, d, rng));  // d' = d
  store.add("sa_merge.w", init_dense_weight(d, d, rng));
  store.add("sa_merge.b", init_bias(d, rng));
}

NodePtr dsa_scores(Tape& t, const std::vector<NodePtr>& deep_maps, ParamBinder& P,
                   const StructAlignConfig& cfg, bool allow_singleton) {
  if (deep_maps.size() < (allow_singleton ? 1u : 2u))
    throw ConfigError("dsa_scores: batch too small (need >= 2 samples for a graph)");
  std::vector<NodePtr> pooled;
  pooled.reserve(deep_maps.size());
  for (const auto& m : deep_maps) pooled.push_back(global_avg_pool(t, m));
  NodePtr x = stack_rows(t, pooled);                       // {w, d}
  NodePtr scores = dense(t, x, P("dsa.w"), P("dsa.b"));    // {w, h}
  return softmax_rows(t, scores);
}

InstanceGraphNodes build_instance_graph(Tape& t, const NodePtr& scores) {
  InstanceGraphNodes g;
  g.adjacency = matmul(t, scores, scores, false, true);  // Gram, symmetric PSD
  g.degrees = rowsum(t, g.adjacency);
  return g;
}

NodePtr gcn_propagate(Tape& t, const InstanceGraphNodes& g, const NodePtr& signal,
                      const NodePtr& weight) {
  NodePtr dinv = rsqrt(t, g.degrees, "gcn_propagate: singular graph");
  NodePtr norm = scale_rows_cols(t, g.adjacency, dinv);
  return matmul(t, matmul(t, norm, signal), weight);
}

NodePtr merge_features(Tape& t, const NodePtr& cnn_map, const NodePtr& z_row,
                       ParamBinder& P) {
  const int d = static_cast<int>(z_row->val.size());
  NodePtr row = t.record(
      Tensor({1, d}, z_row->val.data), {z_row},
      [z = z_row](Node& self) { accum_grad(*z, self.grad.data); });
  NodePtr proj = dense(t, row, P("sa_merge.w"), P("sa_merge.b"));  // {1, C}
  const int c = proj->val.shape[1];
  NodePtr vec = t.record(
      Tensor({c}, proj->val.data), {proj},
      [p = proj](Node& self) { accum_grad(*p, self.grad.data); });
  if (cnn_map->val.shape[0] != c)
    throw ShapeError("merge_features: projected channels " + std::to_string(c) +
                     " vs map " + cnn_map->val.shape_str());
  return broadcast_channels_add(t, cnn_map, vec);
}

std::vector<NodePtr> structure_aware_transform(Tape& t,
                                               const std::vector<NodePtr>& tapped_maps,
                                               ParamBinder& P,
                                               const StructAlignConfig& cfg,
                                               bool allow_singleton) {
  NodePtr scores = dsa_scores(t, tapped_maps, P, cfg, allow_singleton);
  InstanceGraphNodes graph = build_instance_graph(t, scores);
  std::vector<NodePtr> pooled;
  for (const auto& m : tapped_maps) pooled.push_back(global_avg_pool(t, m));
  NodePtr signal = stack_rows(t, pooled);  // {w, d}
  NodePtr z = gcn_propagate(t, graph, signal, P("sa_gcn.w"));
  std::vector<NodePtr> merged;
  merged.reserve(tapped_maps.size());
  for (std::size_t i = 0; i < tapped_maps.size(); ++i)
    merged.push_back(merge_features(t, tapped_maps[i], take_row(t, z, static_cast<int>(i)), P));
  return merged;
}

}  // namespace graphcl
