#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "graphcl/autodiff.hpp"
#include "graphcl/gradcheck.hpp"
#include "graphcl/params.hpp"

using namespace graphcl;

namespace {

// Loss = sum_i r_i * out_i with a fixed random probe vector, so every output
// entry participates in the finite-difference comparison.
LossBuilder probe_loss(std::function<NodePtr(Tape&, ParamBinder&)> fwd,
                       std::uint64_t seed) {
  return [fwd, seed](Tape& t, ParamBinder& P) {
    NodePtr out = fwd(t, P);
    Rng rng(seed);
    return weighted_dot(t, out, Tensor::normal(out->val.shape, rng));
  };
}

}  // namespace

TEST_CASE("relu backward at x=-1 with upstream 1 is 0") {
  Tape t;
  NodePtr x = t.param(Tensor::from_values({2}, {-1.0, 2.0}));
  NodePtr y = relu(t, x);
  CHECK(y->val[0] == 0.0);
  CHECK(y->val[1] == 2.0);
  NodePtr loss = weighted_dot(t, y, Tensor::full({2}, 1.0));
  t.backward(loss);
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == 1.0);
}

TEST_CASE("softmax of [0,0] is [0.5,0.5]") {
  Tape t;
  NodePtr x = t.constant(Tensor::zeros({1, 2}));
  NodePtr y = softmax_rows(t, x);
  CHECK(y->val[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y->val[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to 1 within 1e-12, entries in (0,1)") {
  Rng rng(4);
  Tape t;
  NodePtr x = t.constant(Tensor::normal({5, 7}, rng, 3.0));
  NodePtr y = softmax_rows(t, x);
  for (int i = 0; i < 5; ++i) {
    real s = 0;
    for (int j = 0; j < 7; ++j) {
      const real p = y->val[i * 7 + j];
      CHECK(p > 0.0);
      CHECK(p < 1.0);
      s += p;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("conv on random 1x4x4 input: analytic vs finite differences") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng rng(seed);
    ParamStore ps;
    ps.add("x", Tensor::normal({1, 1, 4, 4}, rng));
    ps.add("w", Tensor::normal({2, 1, 1, 3, 3}, rng, 0.5));
    ps.add("b", Tensor::normal({2}, rng, 0.1));
    const real err = finite_diff_check(
        ps, probe_loss([](Tape& t, ParamBinder& P) { return conv(t, P("x"), P("w"), P("b")); },
                       seed + 100));
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("maxpool2 and upsample2 gradients match finite differences") {
  Rng rng(9);
  ParamStore ps;
  ps.add("x", Tensor::normal({2, 1, 4, 6}, rng));
  real err = finite_diff_check(
      ps, probe_loss([](Tape& t, ParamBinder& P) { return maxpool2(t, P("x"), false); }, 5));
  CHECK(err <= 1e-4);
  err = finite_diff_check(
      ps, probe_loss([](Tape& t, ParamBinder& P) { return upsample2(t, P("x"), false); }, 6));
  CHECK(err <= 1e-4);
}

TEST_CASE("dense, matmul, softmax chain gradient matches finite differences") {
  Rng rng(12);
  ParamStore ps;
  ps.add("x", Tensor::normal({3, 4}, rng));
  ps.add("w", Tensor::normal({4, 5}, rng, 0.5));
  ps.add("b", Tensor::normal({5}, rng, 0.1));
  const real err = finite_diff_check(
      ps, probe_loss(
              [](Tape& t, ParamBinder& P) {
                return softmax_rows(t, dense(t, P("x"), P("w"), P("b")));
              },
              7));
  CHECK(err <= 1e-4);
}

TEST_CASE("concat, gap and broadcast-add gradients match finite differences") {
  Rng rng(21);
  ParamStore ps;
  ps.add("a", Tensor::normal({2, 1, 3, 3}, rng));
  ps.add("b", Tensor::normal({3, 1, 3, 3}, rng));
  ps.add("v", Tensor::normal({2}, rng));
  real err = finite_diff_check(
      ps, probe_loss([](Tape& t, ParamBinder& P) { return concat_channels(t, P("a"), P("b")); },
                     8));
  CHECK(err <= 1e-4);
  err = finite_diff_check(
      ps, probe_loss([](Tape& t, ParamBinder& P) { return global_avg_pool(t, P("a")); }, 9));
  CHECK(err <= 1e-4);
  err = finite_diff_check(
      ps, probe_loss(
              [](Tape& t, ParamBinder& P) {
                return broadcast_channels_add(t, P("a"), P("v"));
              },
              10));
  CHECK(err <= 1e-4);
}

TEST_CASE("row_l2_normalize and scale_rows_cols gradients match finite differences") {
  Rng rng(31);
  ParamStore ps;
  ps.add("x", Tensor::normal({4, 3}, rng));
  ps.add("a", Tensor::normal({4, 4}, rng));
  ps.add("u", Tensor::uniform({4}, rng, 0.5, 2.0));
  real err = finite_diff_check(
      ps, probe_loss([](Tape& t, ParamBinder& P) { return row_l2_normalize(t, P("x")); }, 11));
  CHECK(err <= 1e-4);
  err = finite_diff_check(
      ps, probe_loss([](Tape& t, ParamBinder& P) { return scale_rows_cols(t, P("a"), P("u")); },
                     12));
  CHECK(err <= 1e-4);
}

TEST_CASE("rsqrt rejects nonpositive entries") {
  Tape t;
  NodePtr v = t.constant(Tensor::from_values({2}, {1.0, 0.0}));
  CHECK_THROWS_AS(rsqrt(t, v, "test"), NumericError);
}

TEST_CASE("shape mismatches name both shapes") {
  Tape t;
  NodePtr a = t.constant(Tensor::zeros({2, 3}));
  NodePtr b = t.constant(Tensor::zeros({2, 3}));
  CHECK_THROWS_WITH_AS(add(t, a, t.constant(Tensor::zeros({3, 2}))),
                       doctest::Contains("[2,3]"), ShapeError);
  CHECK_NOTHROW(add(t, a, b));
}

TEST_CASE("gradient accumulates across reuse of the same node") {
  Tape t;
  NodePtr x = t.param(Tensor::from_values({2}, {3.0, -2.0}));
  NodePtr y = add(t, x, x);  // y = 2x
  NodePtr loss = weighted_dot(t, y, Tensor::full({2}, 1.0));
  t.backward(loss);
  CHECK(x->grad[0] == 2.0);
  CHECK(x->grad[1] == 2.0);
}

TEST_CASE("weighted_sum composes scalar nodes exactly") {
  Tape t;
  NodePtr a = t.param(Tensor::full({1}, 1.5));
  NodePtr b = t.param(Tensor::full({1}, -2.0));
  NodePtr s = weighted_sum(t, {a, b}, {1.0, 0.25});
  CHECK(s->val[0] == 1.0);
  t.backward(s);
  CHECK(a->grad[0] == 1.0);
  CHECK(b->grad[0] == 0.25);
}
