#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "graphcl/gradcheck.hpp"
#include "graphcl/structalign.hpp"

using namespace graphcl;

namespace {

ParamStore make_sa_params(int channels, int score_dim, std::uint64_t seed) {
  ParamStore ps;
  Rng rng = make_substream(seed, "init");
  StructAlignConfig cfg;
  cfg.feature_channels = channels;
  cfg.score_dim = score_dim;
  init_structalign_params(ps, cfg, rng);
  return ps;
}

}  // namespace

TEST_CASE("dsa_scores rows sum to 1, entries nonnegative") {
  StructAlignConfig cfg;
  cfg.feature_channels = 3;
  cfg.score_dim = 4;
  ParamStore ps = make_sa_params(3, 4, 1);
  Tape t;
  ParamBinder P(t, ps, false);
  Rng rng(2);
  std::vector<NodePtr> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(t.constant(Tensor::normal({3, 1, 4, 4}, rng)));
  NodePtr s = dsa_scores(t, maps, P, cfg);
  REQUIRE(s->val.shape == std::vector<int>{3, 4});
  for (int i = 0; i < 3; ++i) {
    real sum = 0;
    for (int j = 0; j < 4; ++j) {
      CHECK(s->val[i * 4 + j] >= 0.0);
      sum += s->val[i * 4 + j];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("identical samples produce identical score rows") {
  StructAlignConfig cfg;
  cfg.feature_channels = 2;
  cfg.score_dim = 5;
  ParamStore ps = make_sa_params(2, 5, 3);
  Tape t;
  ParamBinder P(t, ps, false);
  Rng rng(4);
  Tensor sample = Tensor::normal({2, 1, 3, 3}, rng);
  std::vector<NodePtr> maps = {t.constant(sample), t.constant(sample)};
  NodePtr s = dsa_scores(t, maps, P, cfg);
  for (int j = 0; j < 5; ++j) CHECK(s->val[j] == s->val[5 + j]);
}

TEST_CASE("dsa_scores rejects a 1-sample batch unless allow_singleton") {
  StructAlignConfig cfg;
  cfg.feature_channels = 2;
  cfg.score_dim = 3;
  ParamStore ps = make_sa_params(2, 3, 5);
  Tape t;
  ParamBinder P(t, ps, false);
  Rng rng(6);
  std::vector<NodePtr> one = {t.constant(Tensor::normal({2, 1, 2, 2}, rng))};
  CHECK_THROWS_AS(dsa_scores(t, one, P, cfg), ConfigError);
  CHECK_NOTHROW(dsa_scores(t, one, P, cfg, true));
}

TEST_CASE("instance graph of orthonormal rows is the identity") {
  Tape t;
  NodePtr scores = t.constant(Tensor::from_values({2, 2}, {1, 0, 0, 1}));
  InstanceGraphNodes g = build_instance_graph(t, scores);
  CHECK(g.adjacency->val[0] == 1.0);
  CHECK(g.adjacency->val[1] == 0.0);
  CHECK(g.adjacency->val[2] == 0.0);
  CHECK(g.adjacency->val[3] == 1.0);
  CHECK(g.degrees->val[0] == 1.0);
  CHECK(g.degrees->val[1] == 1.0);
}

TEST_CASE("instance graph of [[1],[1]] is all-ones") {
  Tape t;
  NodePtr scores = t.constant(Tensor::from_values({2, 1}, {1, 1}));
  InstanceGraphNodes g = build_instance_graph(t, scores);
  for (int i = 0; i < 4; ++i) CHECK(g.adjacency->val[i] == 1.0);
  CHECK(g.degrees->val[0] == 2.0);
}

TEST_CASE("random Gram adjacency is symmetric and PSD (eigensolver oracle)") {
  Rng rng(7);
  for (int it = 0; it < 10; ++it) {
    const int w = 2 + static_cast<int>(rng.uniform_index(7));  // <= 8
    const int h = 1 + static_cast<int>(rng.uniform_index(5));
    Tape t;
    Tensor raw = Tensor::normal({w, h}, rng);
    // softmax-like positive rows are the production case, but PSD holds for any rows
    NodePtr g = build_instance_graph(t, t.constant(raw)).adjacency;
    MatrixX a = g->val.as_matrix(w, w);
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixX> es(a);
    REQUIRE(es.info() == Eigen::Success);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("gcn hand example: all-ones adjacency averages the batch") {
  Tape t;
  NodePtr scores = t.constant(Tensor::from_values({2, 1}, {1, 1}));
  InstanceGraphNodes g = build_instance_graph(t, scores);
  NodePtr x = t.constant(Tensor::from_values({2, 2}, {2, 0, 0, 2}));
  NodePtr w = t.constant(Tensor::from_values({2, 2}, {1, 0, 0, 1}));
  NodePtr z = gcn_propagate(t, g, x, w);
  for (int i = 0; i < 4; ++i) CHECK(z->val[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identity adjacency reduces gcn to XW") {
  Tape t;
  NodePtr scores = t.constant(Tensor::from_values({2, 2}, {1, 0, 0, 1}));
  InstanceGraphNodes g = build_instance_graph(t, scores);
  Rng rng(8);
  Tensor xv = Tensor::normal({2, 3}, rng);
  Tensor wv = Tensor::normal({3, 3}, rng);
  NodePtr z = gcn_propagate(t, g, t.constant(xv), t.constant(wv));
  MatrixX expect = xv.as_matrix(2, 3) * wv.as_matrix(3, 3);
  MatrixX got = z->val.as_matrix(2, 3);
  CHECK((got - expect).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("all-ones adjacency replicates the per-column batch mean") {
  Rng rng(9);
  const int w = 4, d = 3;
  Tape t;
  NodePtr scores = t.constant(Tensor::full({w, 1}, 1.0));
  InstanceGraphNodes g = build_instance_graph(t, scores);
  Tensor xv = Tensor::normal({w, d}, rng);
  NodePtr z = gcn_propagate(t, g, t.constant(xv),
                            t.constant(Tensor::from_values({d, d}, {1, 0, 0, 0, 1, 0, 0, 0, 1})));
  for (int j = 0; j < d; ++j) {
    real mean = 0;
    for (int i = 0; i < w; ++i) mean += xv[i * d + j];
    mean /= w;
    for (int i = 0; i < w; ++i) CHECK(z->val[i * d + j] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("gcn_propagate raises on a singular (zero-degree) graph") {
  Tape t;
  NodePtr scores = t.constant(Tensor::zeros({2, 2}));
  InstanceGraphNodes g = build_instance_graph(t, scores);
  NodePtr x = t.constant(Tensor::zeros({2, 2}));
  NodePtr w = t.constant(Tensor::zeros({2, 2}));
  CHECK_THROWS_AS(gcn_propagate(t, g, x, w), NumericError);
}

TEST_CASE("merge with zero row and zero projection params is the identity") {
  ParamStore ps = make_sa_params(3, 4, 11);
  ps.at("sa_merge.w").data.setZero();
  ps.at("sa_merge.b").data.setZero();
  Tape t;
  ParamBinder P(t, ps, false);
  Rng rng(12);
  Tensor mapv = Tensor::normal({3, 1, 2, 2}, rng);
  NodePtr merged = merge_features(t, t.constant(mapv), t.constant(Tensor::zeros({3})), P);
  CHECK((merged->val.data == mapv.data).all());
}

TEST_CASE("merge broadcast: zero map carries the projected row everywhere") {
  ParamStore ps = make_sa_params(2, 4, 13);
  // identity projection, zero bias: projected row equals z itself
  ps.at("sa_merge.w") = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  ps.at("sa_merge.b").data.setZero();
  Tape t;
  ParamBinder P(t, ps, false);
  NodePtr merged = merge_features(t, t.constant(Tensor::zeros({2, 1, 3, 3})),
                                  t.constant(Tensor::from_values({2}, {0.5, -1.5})), P);
  for (int i = 0; i < 9; ++i) {
    CHECK(merged->val[i] == 0.5);
    CHECK(merged->val[9 + i] == -1.5);
  }
}

TEST_CASE("structure_aware_transform keeps map shapes and batch size") {
  StructAlignConfig cfg;
  cfg.feature_channels = 4;
  cfg.score_dim = 3;
  ParamStore ps = make_sa_params(4, 3, 14);
  Tape t;
  ParamBinder P(t, ps, false);
  Rng rng(15);
  std::vector<NodePtr> maps;
  for (int i = 0; i < 4; ++i) maps.push_back(t.constant(Tensor::normal({4, 1, 4, 4}, rng)));
  auto out = structure_aware_transform(t, maps, P, cfg);
  REQUIRE(out.size() == maps.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i]->val.shape == maps[i]->val.shape);
    CHECK(out[i]->val.all_finite());
  }
}

TEST_CASE("structalign registered gradient suites pass") {
  const auto results = run_gradchecks("structalign", 23, 2);
  CHECK_FALSE(results.empty());
  for (const auto& r : results) {
    INFO(r.name, " err=", r.max_rel_err);
    CHECK(r.pass());
  }
}
