#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "graphcl/gradcheck.hpp"
#include "graphcl/graphcluster.hpp"

using namespace graphcl;

namespace {

ParamStore make_gc_params(int d, int c_max, std::uint64_t seed) {
  GraphClusterConfig cfg;
  cfg.feature_dim = d;
  cfg.c_max = c_max;
  ParamStore ps;
  Rng rng = make_substream(seed, "init");
  init_graphcluster_params(ps, cfg, rng);
  return ps;
}

// -sum_ij W_ij <s_i, s_j>, computed the slow way.
real brute_cc(const Tensor& w, const Tensor& s) {
  const int n = w.shape[0], c = s.shape[1];
  real acc = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      real dot = 0;
      for (int k = 0; k < c; ++k) dot += s[i * c + k] * s[j * c + k];
      acc += w[i * n + j] * dot;
    }
  return -acc;
}

Tensor one_hot(const std::vector<int>& assign, int c) {
  Tensor s({static_cast<int>(assign.size()), c});
  for (std::size_t i = 0; i < assign.size(); ++i) s[i * c + assign[i]] = 1.0;
  return s;
}

// All assignments of n nodes to c labels.
void enumerate(int n, int c, std::vector<int>& cur, const std::function<void()>& visit) {
  if (static_cast<int>(cur.size()) == n) {
    visit();
    return;
  }
  for (int k = 0; k < c; ++k) {
    cur.push_back(k);
    enumerate(n, c, cur, visit);
    cur.pop_back();
  }
}

int positive_count(const Tensor& w) {
  int c = 0;
  for (std::int64_t i = 0; i < w.size(); ++i) c += w[i] > 0.0 ? 1 : 0;
  return c;
}

}  // namespace

TEST_CASE("affinity hand example: F=[[1,0],[0,1],[1,0]], tau=2") {
  Tape t;
  NodePtr f = t.constant(Tensor::from_values({3, 2}, {1, 0, 0, 1, 1, 0}));
  NodePtr w = build_affinity(t, f, 2.0);
  const real expect[9] = {0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5};
  for (int i = 0; i < 9; ++i) CHECK(w->val[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("tau=1 makes the max affinity entry exactly 0") {
  Rng rng(3);
  for (int it = 0; it < 10; ++it) {
    Tape t;
    NodePtr f = t.constant(Tensor::normal({4, 3}, rng));
    NodePtr w = build_affinity(t, f, 1.0);
    CHECK(w->val.data.maxCoeff() == 0.0);
  }
}

TEST_CASE("affinity guards: tau <= 0 and n < 2") {
  Tape t;
  NodePtr f = t.constant(Tensor::zeros({3, 2}));
  CHECK_THROWS_AS(build_affinity(t, f, 0.0), ConfigError);
  CHECK_THROWS_AS(build_affinity(t, t.constant(Tensor::zeros({1, 2})), 2.0), ShapeError);
}

TEST_CASE("sign census is non-decreasing over tau in {1,2,4,8}") {
  Rng rng(5);
  for (int it = 0; it < 20; ++it) {
    const int n = 3 + static_cast<int>(rng.uniform_index(5));
    const int d = 2 + static_cast<int>(rng.uniform_index(4));
    Tensor fv = Tensor::normal({n, d}, rng);
    int prev = -1;
    for (const real tau : {1.0, 2.0, 4.0, 8.0}) {
      Tape t;
      NodePtr w = build_affinity(t, t.constant(fv), tau);
      const int cnt = positive_count(w->val);
      CHECK(cnt >= prev);
      prev = cnt;
    }
  }
}

TEST_CASE("gnn hand case: W=[[0,1],[1,0]], Theta=I, N=I") {
  Tape t;
  NodePtr w = t.constant(Tensor::from_values({2, 2}, {0, 1, 1, 0}));
  NodePtr n = t.constant(Tensor::from_values({2, 2}, {1, 0, 0, 1}));
  NodePtr theta = t.constant(Tensor::from_values({2, 2}, {1, 0, 0, 1}));
  NodePtr out = gnn_layer(t, n, w, theta);
  // max|W| = 1, pre-relu [[0,1],[1,0]], relu keeps it
  CHECK(out->val[0] == 0.0);
  CHECK(out->val[1] == 1.0);
  CHECK(out->val[2] == 1.0);
  CHECK(out->val[3] == 0.0);
}

TEST_CASE("gnn with zero affinity outputs zero") {
  Rng rng(6);
  Tape t;
  NodePtr w = t.constant(Tensor::zeros({3, 3}));
  NodePtr n = t.constant(Tensor::normal({3, 4}, rng));
  NodePtr theta = t.constant(Tensor::normal({4, 4}, rng));
  NodePtr out = gnn_layer(t, n, w, theta);
  CHECK((out->val.data == 0.0).all());
}

TEST_CASE("assign_clusters rows sum to 1; zero params give uniform rows") {
  const int d = 3, c = 5;
  ParamStore ps = make_gc_params(d, c, 7);
  SUBCASE("random params") {
    Tape t;
    ParamBinder P(t, ps, false);
    Rng rng(8);
    NodePtr s = assign_clusters(t, t.constant(Tensor::normal({4, d}, rng)), P);
    REQUIRE(s->val.shape == std::vector<int>{4, c});
    for (int i = 0; i < 4; ++i) {
      real sum = 0;
      for (int j = 0; j < c; ++j) sum += s->val[i * c + j];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  SUBCASE("zero params") {
    for (auto& [name, tensor] : ps.items()) tensor.data.setZero();
    Tape t;
    ParamBinder P(t, ps, false);
    Rng rng(9);
    NodePtr s = assign_clusters(t, t.constant(Tensor::normal({3, d}, rng)), P);
    for (std::int64_t i = 0; i < s->val.size(); ++i)
      CHECK(s->val[i] == doctest::Approx(1.0 / c).epsilon(1e-12));
  }
}

TEST_CASE("cc_loss hand example: clusters {0,2},{1} on the tau=2 affinity") {
  Tape t;
  NodePtr f = t.constant(Tensor::from_values({3, 2}, {1, 0, 0, 1, 1, 0}));
  NodePtr w = build_affinity(t, f, 2.0);
  NodePtr s = t.constant(one_hot({0, 1, 0}, 2));
  NodePtr loss = cc_loss_op(t, w, s);
  CHECK(loss->val[0] == doctest::Approx(-2.5).epsilon(1e-12));
}

TEST_CASE("cc_loss of a zero affinity is 0 for any S") {
  Rng rng(10);
  Tape t;
  NodePtr w = t.constant(Tensor::zeros({4, 4}));
  NodePtr s = t.constant(softmax_rows(t, t.constant(Tensor::normal({4, 3}, rng)))->val);
  CHECK(cc_loss_op(t, w, s)->val[0] == 0.0);
}

TEST_CASE("cc_loss matches the brute-force double sum on random graphs") {
  Rng rng(11);
  for (int it = 0; it < 25; ++it) {
    const int n = 2 + static_cast<int>(rng.uniform_index(5));  // <= 6
    const int c = 2 + static_cast<int>(rng.uniform_index(2));
    Tape t;
    NodePtr w = build_affinity(t, t.constant(Tensor::normal({n, 3}, rng)), 2.0);
    NodePtr s = softmax_rows(t, t.constant(Tensor::normal({n, c}, rng)));
    NodePtr loss = cc_loss_op(t, w, s);
    CHECK(loss->val[0] == doctest::Approx(brute_cc(w->val, s->val)).epsilon(1e-10));
  }
}

TEST_CASE("exhaustive partitions: module value agrees at the trace maximizer") {
  Rng rng(12);
  for (int it = 0; it < 10; ++it) {
    const int n = 3 + static_cast<int>(rng.uniform_index(5));  // <= 7
    const int c = 2 + static_cast<int>(rng.uniform_index(2));  // <= 3
    Tape t;
    NodePtr w = build_affinity(t, t.constant(Tensor::normal({n, 2}, rng)), 2.0);
    real best = -std::numeric_limits<real>::infinity();
    std::vector<int> cur, best_assign;
    enumerate(n, c, cur, [&] {
      const real trace = -brute_cc(w->val, one_hot(cur, c));
      if (trace > best) {
        best = trace;
        best_assign = cur;
      }
    });
    NodePtr loss = cc_loss_op(t, w, t.constant(one_hot(best_assign, c)));
    CHECK(-loss->val[0] == doctest::Approx(best).epsilon(1e-10));
  }
}

TEST_CASE("cc_loss gradient identity dL/dS = -(W + W^T)S") {
  Rng rng(13);
  const int n = 5, c = 3;
  Tape t;
  Tensor wv = Tensor::normal({n, n}, rng);
  NodePtr w = t.constant(wv);
  NodePtr s = t.param(Tensor::uniform({n, c}, rng, 0.0, 1.0));
  NodePtr loss = cc_loss_op(t, w, s);
  t.backward(loss);
  MatrixX wm = wv.as_matrix(n, n);
  MatrixX sm = s->val.as_matrix(n, c);
  MatrixX expect = -(wm + wm.transpose()) * sm;
  for (int i = 0; i < n * c; ++i)
    CHECK(s->grad[i] == doctest::Approx(expect(i / c, i % c)).epsilon(1e-12));
}

TEST_CASE("extract_clusters examples") {
  ClusterExtraction e =
      extract_clusters(Tensor::from_values({3, 2}, {0.9, 0.1, 0.8, 0.2, 0.1, 0.9}));
  CHECK(e.node_cluster == std::vector<int>{0, 0, 1});
  CHECK(e.count == 2);

  ClusterExtraction u = extract_clusters(Tensor::full({4, 3}, 1.0 / 3));
  CHECK(u.node_cluster == std::vector<int>{0, 0, 0, 0});
  CHECK(u.count == 1);
}

TEST_CASE("cluster count never exceeds C_max") {
  Rng rng(14);
  for (int it = 0; it < 20; ++it) {
    const int n = 2 + static_cast<int>(rng.uniform_index(10));
    const int c = 1 + static_cast<int>(rng.uniform_index(6));
    Tape t;
    NodePtr s = softmax_rows(t, t.constant(Tensor::normal({n, c}, rng)));
    CHECK(extract_clusters(s->val).count <= c);
  }
}

TEST_CASE("permutation equivariance of cluster_loss inputs") {
  Rng rng(15);
  const int n = 6, d = 4;
  ParamStore ps = make_gc_params(d, 3, 16);
  GraphClusterConfig cfg;
  cfg.feature_dim = d;
  cfg.c_max = 3;
  Tensor fv = Tensor::normal({n, d}, rng);
  // reversal permutation
  Tensor fp({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) fp[i * d + j] = fv[(n - 1 - i) * d + j];
  Tape t1, t2;
  ParamBinder P1(t1, ps, false), P2(t2, ps, false);
  NodePtr l1 = cluster_loss(t1, t1.constant(fv), P1, cfg);
  NodePtr l2 = cluster_loss(t2, t2.constant(fp), P2, cfg);
  CHECK(l1->val[0] == doctest::Approx(l2->val[0]).epsilon(1e-10));
}

TEST_CASE("cc_normalize divides the loss by n^2") {
  Rng rng(17);
  const int n = 5, d = 3;
  ParamStore ps = make_gc_params(d, 4, 18);
  GraphClusterConfig raw;
  raw.feature_dim = d;
  raw.c_max = 4;
  GraphClusterConfig norm = raw;
  norm.normalize = true;
  Tensor fv = Tensor::normal({n, d}, rng);
  Tape t1, t2;
  ParamBinder P1(t1, ps, false), P2(t2, ps, false);
  NodePtr a = cluster_loss(t1, t1.constant(fv), P1, raw);
  NodePtr b = cluster_loss(t2, t2.constant(fv), P2, norm);
  CHECK(b->val[0] == doctest::Approx(a->val[0] / (n * n)).epsilon(1e-12));
}

TEST_CASE("graphcluster registered gradient suites pass") {
  const auto results = run_gradchecks("graphcluster", 29, 2);
  CHECK_FALSE(results.empty());
  for (const auto& r : results) {
    INFO(r.name, " err=", r.max_rel_err);
    CHECK(r.pass());
  }
}
