#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "graphcl/tensor.hpp"

namespace graphcl {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;
  bool needs_grad = false;
  std::vector<NodePtr> parents;
  // Adds this node's contribution into parents' grads.
  std::function<void(Node&)> backprop;
};

// Reverse-mode tape. Nodes are recorded in creation order, which is a valid
// topological order; backward() walks it in reverse.
class Tape {
 public:
  NodePtr constant(Tensor v);
  NodePtr param(Tensor v);  // leaf with gradient tracking
  NodePtr record(Tensor val, std::vector<NodePtr> parents,
                 std::function<void(Node&)> backprop);

  // Seeds d(loss)/d(loss)=1 and accumulates gradients into every
  // grad-tracked node. `loss` must be a scalar node of this tape.
  void backward(const NodePtr& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<NodePtr> nodes_;
};

// Accumulates `g` into the parent's gradient buffer if it is tracked.
void accum_grad(Node& parent, const ArrayX& g);

// ---- operator set -------------------------------------------------------

NodePtr add(Tape& t, const NodePtr& a, const NodePtr& b);
NodePtr scale(Tape& t, const NodePtr& a, real s);
// Scalar result: sum_i coeff_i * x_i over scalar nodes.
NodePtr weighted_sum(Tape& t, const std::vector<NodePtr>& xs,
                     const std::vector<real>& coeffs);
NodePtr relu(Tape& t, const NodePtr& a);
// Scalar result: sum_i r_i * a_i (r fixed). Handy as a generic test loss.
NodePtr weighted_dot(Tape& t, const NodePtr& a, Tensor r);
NodePtr mean_all(Tape& t, const NodePtr& a);

// a viewed {m,k}, b viewed {k,n}; trans flags transpose the stored matrix.
NodePtr matmul(Tape& t, const NodePtr& a, const NodePtr& b,
               bool trans_a = false, bool trans_b = false);
// x {n,d} * w {d,m} + row-broadcast bias {m}.
NodePtr dense(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b);
NodePtr softmax_rows(Tape& t, const NodePtr& a);

// x {C,D,H,W}, w {Co,Ci,kd,kh,kw}, bias {Co}; stride 1, same padding.
NodePtr conv(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b);
// Pools H and W by 2; pools D by 2 as well when pool_depth.
NodePtr maxpool2(Tape& t, const NodePtr& x, bool pool_depth);
NodePtr upsample2(Tape& t, const NodePtr& x, bool up_depth);
NodePtr global_avg_pool(Tape& t, const NodePtr& x);  // {C,D,H,W} -> {C}
NodePtr concat_channels(Tape& t, const NodePtr& a, const NodePtr& b);
NodePtr broadcast_channels_add(Tape& t, const NodePtr& map, const NodePtr& vec);

NodePtr stack_rows(Tape& t, const std::vector<NodePtr>& rows);  // n x {d} -> {n,d}
NodePtr take_row(Tape& t, const NodePtr& a, int row);           // {n,d} -> {d}
// {C,D,H,W} -> {D*H*W, C}: one row per spatial position.
NodePtr spatial_to_rows(Tape& t, const NodePtr& x);

NodePtr rowsum(Tape& t, const NodePtr& a);  // {n,m} -> {n}
// Scales each row of {n,m} to unit L2 norm (norm floored at `floor_`).
NodePtr row_l2_normalize(Tape& t, const NodePtr& a, real floor_ = 1e-12);
// v^{-1/2} elementwise; throws NumericError if any entry <= 0.
NodePtr rsqrt(Tape& t, const NodePtr& v, const char* what);
// B_ij = u_i * A_ij * u_j for square A {n,n}, u {n}.
NodePtr scale_rows_cols(Tape& t, const NodePtr& a, const NodePtr& u);

// W = G - max(G)/tau (global scalar max).
NodePtr shift_scaled_max(Tape& t, const NodePtr& g, real tau);
// B = W / max(max|W|, floor).
NodePtr scale_by_maxabs(Tape& t, const NodePtr& w, real floor_ = 1e-12);
// Scalar: -sum_ij W_ij (S S^T)_ij.
NodePtr cc_loss_op(Tape& t, const NodePtr& w, const NodePtr& s);

}  // namespace graphcl
