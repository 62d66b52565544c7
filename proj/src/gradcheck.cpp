#include "graphcl/gradcheck.hpp"

#include <cmath>

#include "graphcl/backbone.hpp"
#include "graphcl/graphcluster.hpp"
#include "graphcl/losses.hpp"
#include "graphcl/structalign.hpp"

namespace graphcl {

real finite_diff_check(const ParamStore& params, const LossBuilder& f, real eps) {
  // Analytic pass.
  ParamStore work = params;
  ParamStore grads;
  {
    Tape tape;
    ParamBinder bind(tape, work);
    NodePtr loss = f(tape, bind);
    tape.backward(loss);
    grads = bind.collect_grads();
  }
  auto eval = [&](const ParamStore& p) {
    Tape tape;
    ParamBinder bind(tape, p, /*track_grads=*/false);
    return f(tape, bind)->val.data[0];
  };
  real max_rel = 0;
  for (auto& [name, g] : grads.items()) {
    for (std::int64_t i = 0; i < g.size(); ++i) {
      const real saved = work.at(name).data[i];
      work.at(name).data[i] = saved + eps;
      const real fp = eval(work);
      work.at(name).data[i] = saved - eps;
      const real fm = eval(work);
      work.at(name).data[i] = saved;
      const real numeric = (fp - fm) / (2 * eps);
      const real analytic = g.data[i];
      const real rel = std::abs(analytic - numeric) /
                       std::max({real(1), std::abs(analytic), std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace {

struct Case {
  std::string name;
  std::string module;
  std::function<real(std::uint64_t, real)> run;
};

Tensor rand_t(std::vector<int> shape, Rng& rng, real scale = 1.0) {
  return Tensor::uniform(std::move(shape), rng, -scale, scale);
}

// Scalar probe: dot with fixed random coefficients so gradients are generic.
NodePtr probe(Tape& t, const NodePtr& x, Rng& rng) {
  return weighted_dot(t, x, rand_t(x->val.shape, rng));
}

real check_conv2d(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("x", rand_t({2, 1, 5, 6}, rng));
  p.add("w", rand_t({3, 2, 1, 3, 3}, rng));
  p.add("b", rand_t({3}, rng));
  Tensor r = rand_t({3, 1, 5, 6}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, conv(t, P("x"), P("w"), P("b")), r);
  }, eps);
}

real check_conv3d(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("x", rand_t({2, 4, 4, 4}, rng));
  p.add("w", rand_t({2, 2, 3, 3, 3}, rng));
  p.add("b", rand_t({2}, rng));
  Tensor r = rand_t({2, 4, 4, 4}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, conv(t, P("x"), P("w"), P("b")), r);
  }, eps);
}

real check_relu(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("x", rand_t({1, 1, 4, 4}, rng));
  Tensor r = rand_t({1, 1, 4, 4}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, relu(t, P("x")), r);
  }, eps);
}

real check_maxpool(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("x", rand_t({2, 1, 4, 6}, rng));
  Tensor r = rand_t({2, 1, 2, 3}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, maxpool2(t, P("x"), false), r);
  }, eps);
}

real check_upsample(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("x", rand_t({2, 1, 3, 2}, rng));
  Tensor r = rand_t({2, 1, 6, 4}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, upsample2(t, P("x"), false), r);
  }, eps);
}

real check_dense(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("x", rand_t({3, 4}, rng));
  p.add("w", rand_t({4, 5}, rng));
  p.add("b", rand_t({5}, rng));
  Tensor r = rand_t({3, 5}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, dense(t, P("x"), P("w"), P("b")), r);
  }, eps);
}

real check_matmul(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("a", rand_t({3, 4}, rng));
  p.add("b", rand_t({5, 4}, rng));
  Tensor r = rand_t({3, 5}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, matmul(t, P("a"), P("b"), false, true), r);
  }, eps);
}

real check_softmax(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("x", rand_t({4, 5}, rng));
  Tensor r = rand_t({4, 5}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, softmax_rows(t, P("x")), r);
  }, eps);
}

real check_gap(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("x", rand_t({3, 2, 4, 4}, rng));
  Tensor r = rand_t({3}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, global_avg_pool(t, P("x")), r);
  }, eps);
}

real check_add_concat(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("a", rand_t({2, 1, 3, 3}, rng));
  p.add("b", rand_t({2, 1, 3, 3}, rng));
  p.add("c", rand_t({1, 1, 3, 3}, rng));
  Tensor r = rand_t({3, 1, 3, 3}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    return weighted_dot(t, concat_channels(t, add(t, P("a"), P("b")), P("c")), r);
  }, eps);
}

real check_backbone(std::uint64_t seed, real eps) {
  Rng rng(seed);
  BackboneConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  cfg.classes = 2;
  cfg.gcn_level = 2;
  ParamStore p;
  Rng init = make_substream(seed, "init");
  init_backbone_params(p, cfg, init);
  p.add("x", rand_t({1, 1, 8, 8}, rng));
  return finite_diff_check(p, [cfg](Tape& t, ParamBinder& P) {
    return mean_all(t, backbone_forward(t, P("x"), P, cfg).logits);
  }, eps);
}

real check_sa_path(std::uint64_t seed, real eps) {
  Rng rng(seed);
  StructAlignConfig sa;
  sa.score_dim = 3;
  sa.feature_channels = 2;
  ParamStore p;
  Rng init = make_substream(seed, "init");
  init_structalign_params(p, sa, init);
  p.add("f0", rand_t({2, 1, 4, 4}, rng));
  p.add("f1", rand_t({2, 1, 4, 4}, rng));
  p.add("f2", rand_t({2, 1, 4, 4}, rng));
  Tensor r0 = rand_t({2, 1, 4, 4}, rng);
  Tensor r1 = rand_t({2, 1, 4, 4}, rng);
  Tensor r2 = rand_t({2, 1, 4, 4}, rng);
  return finite_diff_check(p, [&](Tape& t, ParamBinder& P) {
    std::vector<NodePtr> maps = {P("f0"), P("f1"), P("f2")};
    std::vector<NodePtr> merged = structure_aware_transform(t, maps, P, sa);
    return weighted_sum(t,
                        {weighted_dot(t, merged[0], r0), weighted_dot(t, merged[1], r1),
                         weighted_dot(t, merged[2], r2)},
                        {1.0, 1.0, 1.0});
  }, eps);
}

real check_sa_into_decoder(std::uint64_t seed, real eps) {
  Rng rng(seed);
  BackboneConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  cfg.classes = 2;
  cfg.gcn_level = 2;
  StructAlignConfig sa;
  sa.score_dim = 3;
  sa.feature_channels = cfg.channels_at(cfg.gcn_level);
  ParamStore p;
  Rng init = make_substream(seed, "init");
  init_backbone_params(p, cfg, init);
  init_structalign_params(p, sa, init);
  p.add("x0", rand_t({1, 1, 8, 8}, rng));
  p.add("x1", rand_t({1, 1, 8, 8}, rng));
  return finite_diff_check(p, [&](Tape& t, ParamBinder& P) {
    // Batch SA: encode both samples, transform tapped maps jointly, decode.
    std::vector<NodePtr> xs = {P("x0"), P("x1")};
    std::vector<std::vector<NodePtr>> encs;
    std::vector<NodePtr> tapped;
    for (const auto& x : xs) {
      encs.push_back(backbone_encode(t, x, P, cfg));
      tapped.push_back(encs.back()[cfg.gcn_level - 1]);
    }
    std::vector<NodePtr> merged = structure_aware_transform(t, tapped, P, sa);
    std::vector<NodePtr> losses;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      encs[i][cfg.gcn_level - 1] = merged[i];
      losses.push_back(mean_all(t, backbone_decode(t, encs[i], P, cfg)));
    }
    return weighted_sum(t, losses, {1.0, 1.0});
  }, eps);
}

real check_cc_path(std::uint64_t seed, real eps) {
  Rng rng(seed);
  GraphClusterConfig cfg;
  cfg.tau = 2.0;
  cfg.c_max = 4;
  cfg.feature_dim = 3;
  ParamStore p;
  Rng init = make_substream(seed, "init");
  init_graphcluster_params(p, cfg, init);
  p.add("f", rand_t({6, 3}, rng));
  return finite_diff_check(p, [cfg](Tape& t, ParamBinder& P) {
    return cluster_loss(t, P("f"), P, cfg);
  }, eps);
}

real check_gcn_propagate(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("scores", rand_t({4, 3}, rng, 0.5));
  p.add("x", rand_t({4, 2}, rng));
  p.add("w", rand_t({2, 2}, rng));
  Tensor r = rand_t({4, 2}, rng);
  return finite_diff_check(p, [&r](Tape& t, ParamBinder& P) {
    NodePtr scores = softmax_rows(t, P("scores"));
    InstanceGraphNodes g = build_instance_graph(t, scores);
    return weighted_dot(t, gcn_propagate(t, g, P("x"), P("w")), r);
  }, eps);
}

real check_seg_loss(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("logits", rand_t({3, 1, 4, 4}, rng, 2.0));
  LabelMap y;
  y.classes = 3;
  y.dims = {1, 4, 4};
  y.grid.resize(16);
  for (auto& g : y.grid) g = static_cast<std::uint8_t>(rng.uniform_index(3));
  Tensor w = Tensor::uniform({1, 4, 4}, rng, 0.1, 1.0);
  return finite_diff_check(p, [&](Tape& t, ParamBinder& P) {
    return seg_loss_weighted(t, P("logits"), y, w);
  }, eps);
}

real check_masked_losses(std::uint64_t seed, real eps) {
  Rng rng(seed);
  ParamStore p;
  p.add("q_in", rand_t({2, 1, 4, 6}, rng, 2.0));
  p.add("q_out", rand_t({2, 1, 4, 6}, rng, 2.0));
  LabelMap y;
  y.classes = 2;
  y.dims = {1, 4, 6};
  y.grid.resize(24);
  for (auto& g : y.grid) g = static_cast<std::uint8_t>(rng.uniform_index(2));
  MixMask m = gen_mask({1, 4, 6}, {1.0, 0.5, 0.5}, rng);
  return finite_diff_check(p, [&](Tape& t, ParamBinder& P) {
    return weighted_sum(t,
                        {loss_in(t, P("q_in"), y, m, 0.5),
                         loss_out(t, P("q_out"), y, m, 0.5)},
                        {1.0, 1.0});
  }, eps);
}

const std::vector<Case>& cases() {
  static const std::vector<Case> kCases = {
      {"conv2d", "netcore", check_conv2d},
      {"conv3d", "netcore", check_conv3d},
      {"relu", "netcore", check_relu},
      {"maxpool2", "netcore", check_maxpool},
      {"upsample2", "netcore", check_upsample},
      {"dense", "netcore", check_dense},
      {"matmul", "netcore", check_matmul},
      {"softmax", "netcore", check_softmax},
      {"global_avg_pool", "netcore", check_gap},
      {"add_concat", "netcore", check_add_concat},
      {"backbone", "netcore", check_backbone},
      {"dsa_gram_gcn_merge", "structalign", check_sa_path},
      {"gcn_propagate", "structalign", check_gcn_propagate},
      {"sa_into_decoder", "structalign", check_sa_into_decoder},
      {"affinity_gnn_mlp_cc", "graphcluster", check_cc_path},
      {"seg_loss_weighted", "losses", check_seg_loss},
      {"masked_in_out", "losses", check_masked_losses},
  };
  return kCases;
}

}  // namespace

std::vector<std::string> gradcheck_modules() {
  return {"netcore", "structalign", "graphcluster", "losses"};
}

std::vector<GradResult> run_gradchecks(const std::string& module_filter,
                                       std::uint64_t seed, int instances) {
  std::vector<GradResult> out;
  for (const auto& c : cases()) {
    if (module_filter != "all" && module_filter != c.module) continue;
    GradResult r;
    r.name = c.name;
    r.module = c.module;
    for (int i = 0; i < instances; ++i) {
      const real kEps = 1e-5;
      const real kTol = 1e-4;
      std::uint64_t s = seed + 1000ULL * i;
      real err = c.run(s, kEps);
      // A relu/maxpool kink can land within eps of the operating point, so the
      // central difference straddles the non-smooth point and the instance,
      // not the gradient, is at fault. Distinguish by shrinking eps: an
      // analytic bug is eps-independent, a straddled kink collapses. Redraw
      // only instances the smaller step confirms as artifacts.
      for (int redraw = 0;
           err > kTol && redraw < 5 && c.run(s, kEps / 4) <= kTol / 10;
           ++redraw) {
        s = s * 6364136223846793005ULL + 1442695040888963407ULL;
        err = c.run(s, kEps);
      }
      r.max_rel_err = std::max(r.max_rel_err, err);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace graphcl
