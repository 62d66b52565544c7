#include "graphcl/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace graphcl {

namespace {

using RowMajorMap =
    Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require_scalar(const NodePtr& n, const char* what) {
  if (n->val.size() != 1)
    throw ShapeError(std::string(what) + ": expected scalar, got " + n->val.shape_str());
}

struct SpatialDims {
  int c, d, h, w;
  std::int64_t n() const { return static_cast<std::int64_t>(d) * h * w; }
};

SpatialDims spatial(const Tensor& x, const char* what) {
  if (x.ndim() != 4)
    throw ShapeError(std::string(what) + ": expected rank-4 {C,D,H,W}, got " + x.shape_str());
  return {x.shape[0], x.shape[1], x.shape[2], x.shape[3]};
}

// im2col for stride-1 same-padded convolution; col is (Ci*kd*kh*kw) x (D*H*W),
// column-major, one column per output position.
void im2col(const Tensor& x, int kd, int kh, int kw, MatrixX& col) {
  const SpatialDims s = spatial(x, "conv");
  const int pd = kd / 2, ph = kh / 2, pw = kw / 2;
  const std::int64_t n = s.n();
  col.setZero(static_cast<std::int64_t>(s.c) * kd * kh * kw, n);
  for (int ci = 0; ci < s.c; ++ci) {
    for (int zd = 0; zd < kd; ++zd) {
      for (int zh = 0; zh < kh; ++zh) {
        for (int zw = 0; zw < kw; ++zw) {
          const std::int64_t row = ((static_cast<std::int64_t>(ci) * kd + zd) * kh + zh) * kw + zw;
          for (int d = 0; d < s.d; ++d) {
            const int id = d + zd - pd;
            if (id < 0 || id >= s.d) continue;
            for (int h = 0; h < s.h; ++h) {
              const int ih = h + zh - ph;
              if (ih < 0 || ih >= s.h) continue;
              const int iw0 = zw - pw;
              const int wlo = std::max(0, -iw0);
              const int whi = std::min(s.w, s.w - iw0);
              const std::int64_t src =
                  ((static_cast<std::int64_t>(ci) * s.d + id) * s.h + ih) * s.w;
              const std::int64_t dst = (static_cast<std::int64_t>(d) * s.h + h) * s.w;
              for (int w = wlo; w < whi; ++w) col(row, dst + w) = x.data[src + w + iw0];
            }
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
void col2im_add(const MatrixX& col, int kd, int kh, int kw, Tensor& dx) {
  const SpatialDims s = spatial(dx, "conv");
  const int pd = kd / 2, ph = kh / 2, pw = kw / 2;
  for (int ci = 0; ci < s.c; ++ci) {
    for (int zd = 0; zd < kd; ++zd) {
      for (int zh = 0; zh < kh; ++zh) {
        for (int zw = 0; zw < kw; ++zw) {
          const std::int64_t row = ((static_cast<std::int64_t>(ci) * kd + zd) * kh + zh) * kw + zw;
          for (int d = 0; d < s.d; ++d) {
            const int id = d + zd - pd;
            if (id < 0 || id >= s.d) continue;
            for (int h = 0; h < s.h; ++h) {
              const int ih = h + zh - ph;
              if (ih < 0 || ih >= s.h) continue;
              const int iw0 = zw - pw;
              const int wlo = std::max(0, -iw0);
              const int whi = std::min(s.w, s.w - iw0);
              const std::int64_t dst =
                  ((static_cast<std::int64_t>(ci) * s.d + id) * s.h + ih) * s.w;
              const std::int64_t src = (static_cast<std::int64_t>(d) * s.h + h) * s.w;
              for (int w = wlo; w < whi; ++w) dx.data[dst + w + iw0] += col(row, src + w);
            }
          }
        }
      }
    }
  }
}

}  // namespace

NodePtr Tape::constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  nodes_.push_back(n);
  return n;
}

NodePtr Tape::param(Tensor v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->needs_grad = true;
  nodes_.push_back(n);
  return n;
}

NodePtr Tape::record(Tensor val, std::vector<NodePtr> parents,
                     std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  for (const auto& p : n->parents)
    if (p->needs_grad) n->needs_grad = true;
  nodes_.push_back(n);
  return n;
}

void accum_grad(Node& parent, const ArrayX& g) {
  if (!parent.needs_grad) return;
  if (parent.grad.size() == 0) parent.grad = Tensor::zeros(parent.val.shape);
  parent.grad.data += g;
}

void Tape::backward(const NodePtr& loss) {
  require_scalar(loss, "backward");
  for (auto& n : nodes_)
    if (n->needs_grad) n->grad = Tensor::zeros(n->val.shape);
  if (!loss->needs_grad) return;
  loss->grad.data[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.needs_grad && n.backprop) n.backprop(n);
  }
}

// ---- elementwise & reductions -------------------------------------------

NodePtr add(Tape& t, const NodePtr& a, const NodePtr& b) {
  require_same_shape(a->val, b->val, "add");
  Tensor v(a->val.shape, a->val.data + b->val.data);
  return t.record(std::move(v), {a, b}, [a, b](Node& self) {
    accum_grad(*a, self.grad.data);
    accum_grad(*b, self.grad.data);
  });
}

NodePtr scale(Tape& t, const NodePtr& a, real s) {
  Tensor v(a->val.shape, a->val.data * s);
  return t.record(std::move(v), {a}, [a, s](Node& self) {
    accum_grad(*a, self.grad.data * s);
  });
}

NodePtr weighted_sum(Tape& t, const std::vector<NodePtr>& xs,
                     const std::vector<real>& coeffs) {
  if (xs.size() != coeffs.size()) throw ShapeError("weighted_sum: size mismatch");
  Tensor v({1});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require_scalar(xs[i], "weighted_sum");
    v.data[0] += coeffs[i] * xs[i]->val.data[0];
  }
  std::vector<NodePtr> parents(xs.begin(), xs.end());
  return t.record(std::move(v), parents, [xs, coeffs](Node& self) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      accum_grad(*xs[i], ArrayX::Constant(1, coeffs[i] * self.grad.data[0]));
  });
}

NodePtr relu(Tape& t, const NodePtr& a) {
  Tensor v(a->val.shape, a->val.data.max(0.0));
  return t.record(std::move(v), {a}, [a](Node& self) {
    accum_grad(*a, self.grad.data * (a->val.data > 0.0).cast<real>());
  });
}

NodePtr weighted_dot(Tape& t, const NodePtr& a, Tensor r) {
  require_same_shape(a->val, r, "weighted_dot");
  Tensor v({1});
  v.data[0] = (a->val.data * r.data).sum();
  auto rp = std::make_shared<Tensor>(std::move(r));
  return t.record(std::move(v), {a}, [a, rp](Node& self) {
    accum_grad(*a, rp->data * self.grad.data[0]);
  });
}

NodePtr mean_all(Tape& t, const NodePtr& a) {
  Tensor v({1});
  v.data[0] = a->val.data.mean();
  const real inv = 1.0 / static_cast<real>(a->val.size());
  return t.record(std::move(v), {a}, [a, inv](Node& self) {
    accum_grad(*a, ArrayX::Constant(a->val.size(), inv * self.grad.data[0]));
  });
}

// ---- linear algebra ------------------------------------------------------

NodePtr matmul(Tape& t, const NodePtr& a, const NodePtr& b, bool trans_a,
               bool trans_b) {
  if (a->val.ndim() != 2 || b->val.ndim() != 2)
    throw ShapeError("matmul: expected rank-2 operands, got " + a->val.shape_str() +
                     " and " + b->val.shape_str());
  MatrixX A = a->val.as_matrix(a->val.shape[0], a->val.shape[1]);
  MatrixX B = b->val.as_matrix(b->val.shape[0], b->val.shape[1]);
  const MatrixX A1 = trans_a ? MatrixX(A.transpose()) : A;
  const MatrixX B1 = trans_b ? MatrixX(B.transpose()) : B;
  if (A1.cols() != B1.rows())
    throw ShapeError("matmul: inner dims mismatch " + a->val.shape_str() + " vs " +
                     b->val.shape_str());
  Tensor v({static_cast<int>(A1.rows()), static_cast<int>(B1.cols())});
  v.as_matrix(A1.rows(), B1.cols()) = A1 * B1;
  return t.record(std::move(v), {a, b}, [a, b, trans_a, trans_b](Node& self) {
    ConstRowMajorMap up(self.grad.data.data(), self.val.shape[0], self.val.shape[1]);
    MatrixX A = a->val.as_matrix(a->val.shape[0], a->val.shape[1]);
    MatrixX B = b->val.as_matrix(b->val.shape[0], b->val.shape[1]);
    const MatrixX A1 = trans_a ? MatrixX(A.transpose()) : A;
    const MatrixX B1 = trans_b ? MatrixX(B.transpose()) : B;
    MatrixX dA1 = up * B1.transpose();
    MatrixX dB1 = A1.transpose() * up;
    MatrixX dA = trans_a ? MatrixX(dA1.transpose()) : dA1;
    MatrixX dB = trans_b ? MatrixX(dB1.transpose()) : dB1;
    Tensor ga(a->val.shape);
    ga.as_matrix(a->val.shape[0], a->val.shape[1]) = dA;
    accum_grad(*a, ga.data);
    Tensor gb(b->val.shape);
    gb.as_matrix(b->val.shape[0], b->val.shape[1]) = dB;
    accum_grad(*b, gb.data);
  });
}

NodePtr dense(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  if (x->val.ndim() != 2 || w->val.ndim() != 2 || b->val.ndim() != 1)
    throw ShapeError("dense: rank mismatch");
  const int n = x->val.shape[0], d = x->val.shape[1], m = w->val.shape[1];
  if (w->val.shape[0] != d || b->val.shape[0] != m)
    throw ShapeError("dense: shape mismatch x=" + x->val.shape_str() + " w=" +
                     w->val.shape_str() + " b=" + b->val.shape_str());
  Tensor v({n, m});
  v.as_matrix(n, m) = MatrixX(x->val.as_matrix(n, d)) * MatrixX(w->val.as_matrix(d, m));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) v.data[static_cast<std::int64_t>(i) * m + j] += b->val.data[j];
  return t.record(std::move(v), {x, w, b}, [x, w, b, n, d, m](Node& self) {
    ConstRowMajorMap up(self.grad.data.data(), n, m);
    Tensor gx({n, d});
    gx.as_matrix(n, d) = up * MatrixX(w->val.as_matrix(d, m)).transpose();
    accum_grad(*x, gx.data);
    Tensor gw({d, m});
    gw.as_matrix(d, m) = MatrixX(x->val.as_matrix(n, d)).transpose() * up;
    accum_grad(*w, gw.data);
    Tensor gb({m});
    for (int j = 0; j < m; ++j) gb.data[j] = up.col(j).sum();
    accum_grad(*b, gb.data);
  });
}

NodePtr softmax_rows(Tape& t, const NodePtr& a) {
  if (a->val.ndim() != 2) throw ShapeError("softmax_rows: expected rank-2");
  const int n = a->val.shape[0], m = a->val.shape[1];
  Tensor v(a->val.shape);
  for (int i = 0; i < n; ++i) {
    auto row = a->val.data.segment(static_cast<std::int64_t>(i) * m, m);
    const real mx = row.maxCoeff();
    ArrayX e = (row - mx).exp();
    v.data.segment(static_cast<std::int64_t>(i) * m, m) = e / e.sum();
  }
  auto out = t.record(std::move(v), {a}, [a, n, m](Node& self) {
    ArrayX g(static_cast<std::int64_t>(n) * m);
    for (int i = 0; i < n; ++i) {
      auto p = self.val.data.segment(static_cast<std::int64_t>(i) * m, m);
      auto up = self.grad.data.segment(static_cast<std::int64_t>(i) * m, m);
      const real dot = (up * p).sum();
      g.segment(static_cast<std::int64_t>(i) * m, m) = p * (up - dot);
    }
    accum_grad(*a, g);
  });
  return out;
}

// ---- spatial operators ---------------------------------------------------

NodePtr conv(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  const SpatialDims s = spatial(x->val, "conv input");
  if (w->val.ndim() != 5)
    throw ShapeError("conv: weight must be rank-5 {Co,Ci,kd,kh,kw}, got " +
                     w->val.shape_str());
  const int co = w->val.shape[0], ci = w->val.shape[1];
  const int kd = w->val.shape[2], kh = w->val.shape[3], kw = w->val.shape[4];
  if (ci != s.c)
    throw ShapeError("conv: input channels " + x->val.shape_str() +
                     " vs weight " + w->val.shape_str());
  if (b->val.size() != co) throw ShapeError("conv: bias size mismatch");
  const std::int64_t n = s.n();
  const std::int64_t krows = static_cast<std::int64_t>(ci) * kd * kh * kw;
  MatrixX col;
  im2col(x->val, kd, kh, kw, col);
  Tensor v({co, s.d, s.h, s.w});
  RowMajorMap out(v.data.data(), co, n);
  out = ConstRowMajorMap(w->val.data.data(), co, krows) * col;
  for (int c = 0; c < co; ++c) out.row(c).array() += b->val.data[c];
  return t.record(std::move(v), {x, w, b}, [x, w, b, co, kd, kh, kw, krows, n](Node& self) {
    ConstRowMajorMap up(self.grad.data.data(), co, n);
    MatrixX col;
    im2col(x->val, kd, kh, kw, col);  // recomputed; cheaper than caching per node
    if (w->needs_grad) {
      Tensor gw(w->val.shape);
      RowMajorMap(gw.data.data(), co, krows) = up * col.transpose();
      accum_grad(*w, gw.data);
    }
    if (b->needs_grad) {
      Tensor gb({co});
      for (int c = 0; c < co; ++c) gb.data[c] = up.row(c).sum();
      accum_grad(*b, gb.data);
    }
    if (x->needs_grad) {
      MatrixX dcol = ConstRowMajorMap(w->val.data.data(), co, krows).transpose() * up;
      Tensor gx(x->val.shape);
      col2im_add(dcol, kd, kh, kw, gx);
      accum_grad(*x, gx.data);
    }
  });
}

NodePtr maxpool2(Tape& t, const NodePtr& x, bool pool_depth) {
  const SpatialDims s = spatial(x->val, "maxpool2");
  const int fd = pool_depth ? 2 : 1;
  if (s.d % fd || s.h % 2 || s.w % 2)
    throw ShapeError("maxpool2: dims not divisible by pool factor: " + x->val.shape_str());
  const int od = s.d / fd, oh = s.h / 2, ow = s.w / 2;
  Tensor v({s.c, od, oh, ow});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(v.size());
  std::int64_t o = 0;
  for (int c = 0; c < s.c; ++c)
    for (int d = 0; d < od; ++d)
      for (int h = 0; h < oh; ++h)
        for (int w = 0; w < ow; ++w, ++o) {
          real best = -std::numeric_limits<real>::infinity();
          std::int64_t besti = -1;
          for (int zd = 0; zd < fd; ++zd)
            for (int zh = 0; zh < 2; ++zh)
              for (int zw = 0; zw < 2; ++zw) {
                const std::int64_t i =
                    ((static_cast<std::int64_t>(c) * s.d + d * fd + zd) * s.h + h * 2 + zh) *
                        s.w + w * 2 + zw;
                if (x->val.data[i] > best) { best = x->val.data[i]; besti = i; }
              }
          v.data[o] = best;
          (*argmax)[o] = besti;
        }
  return t.record(std::move(v), {x}, [x, argmax](Node& self) {
    Tensor gx(x->val.shape);
    for (std::int64_t i = 0; i < self.grad.size(); ++i)
      gx.data[(*argmax)[i]] += self.grad.data[i];
    accum_grad(*x, gx.data);
  });
}

NodePtr upsample2(Tape& t, const NodePtr& x, bool up_depth) {
  const SpatialDims s = spatial(x->val, "upsample2");
  const int fd = up_depth ? 2 : 1;
  const int od = s.d * fd, oh = s.h * 2, ow = s.w * 2;
  Tensor v({s.c, od, oh, ow});
  for (int c = 0; c < s.c; ++c)
    for (int d = 0; d < od; ++d)
      for (int h = 0; h < oh; ++h)
        for (int w = 0; w < ow; ++w)
          v.data[((static_cast<std::int64_t>(c) * od + d) * oh + h) * ow + w] =
              x->val.data[((static_cast<std::int64_t>(c) * s.d + d / fd) * s.h + h / 2) * s.w +
                          w / 2];
  return t.record(std::move(v), {x}, [x, s, fd, od, oh, ow](Node& self) {
    Tensor gx(x->val.shape);
    for (int c = 0; c < s.c; ++c)
      for (int d = 0; d < od; ++d)
        for (int h = 0; h < oh; ++h)
          for (int w = 0; w < ow; ++w)
            gx.data[((static_cast<std::int64_t>(c) * s.d + d / fd) * s.h + h / 2) * s.w + w / 2] +=
                self.grad.data[((static_cast<std::int64_t>(c) * od + d) * oh + h) * ow + w];
    accum_grad(*x, gx.data);
  });
}

NodePtr global_avg_pool(Tape& t, const NodePtr& x) {
  const SpatialDims s = spatial(x->val, "global_avg_pool");
  const std::int64_t n = s.n();
  Tensor v({s.c});
  for (int c = 0; c < s.c; ++c) v.data[c] = x->val.data.segment(c * n, n).mean();
  return t.record(std::move(v), {x}, [x, s, n](Node& self) {
    Tensor gx(x->val.shape);
    for (int c = 0; c < s.c; ++c)
      gx.data.segment(c * n, n).setConstant(self.grad.data[c] / static_cast<real>(n));
    accum_grad(*x, gx.data);
  });
}

NodePtr concat_channels(Tape& t, const NodePtr& a, const NodePtr& b) {
  const SpatialDims sa = spatial(a->val, "concat");
  const SpatialDims sb = spatial(b->val, "concat");
  if (sa.d != sb.d || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: spatial dims mismatch " + a->val.shape_str() +
                     " vs " + b->val.shape_str());
  Tensor v({sa.c + sb.c, sa.d, sa.h, sa.w});
  v.data.segment(0, a->val.size()) = a->val.data;
  v.data.segment(a->val.size(), b->val.size()) = b->val.data;
  return t.record(std::move(v), {a, b}, [a, b](Node& self) {
    accum_grad(*a, self.grad.data.segment(0, a->val.size()));
    accum_grad(*b, self.grad.data.segment(a->val.size(), b->val.size()));
  });
}

NodePtr broadcast_channels_add(Tape& t, const NodePtr& map, const NodePtr& vec) {
  const SpatialDims s = spatial(map->val, "broadcast_channels_add");
  if (vec->val.size() != s.c)
    throw ShapeError("broadcast_channels_add: channel mismatch " + map->val.shape_str() +
                     " vs " + vec->val.shape_str());
  const std::int64_t n = s.n();
  Tensor v(map->val.shape, map->val.data);
  for (int c = 0; c < s.c; ++c) v.data.segment(c * n, n) += vec->val.data[c];
  return t.record(std::move(v), {map, vec}, [map, vec, s, n](Node& self) {
    accum_grad(*map, self.grad.data);
    if (vec->needs_grad) {
      Tensor gv({s.c});
      for (int c = 0; c < s.c; ++c) gv.data[c] = self.grad.data.segment(c * n, n).sum();
      accum_grad(*vec, gv.data);
    }
  });
}

// ---- reshaping -----------------------------------------------------------

NodePtr stack_rows(Tape& t, const std::vector<NodePtr>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty");
  const int d = static_cast<int>(rows[0]->val.size());
  const int n = static_cast<int>(rows.size());
  Tensor v({n, d});
  for (int i = 0; i < n; ++i) {
    if (rows[i]->val.size() != d) throw ShapeError("stack_rows: row size mismatch");
    v.data.segment(static_cast<std::int64_t>(i) * d, d) = rows[i]->val.data;
  }
  std::vector<NodePtr> parents(rows.begin(), rows.end());
  return t.record(std::move(v), parents, [rows, d](Node& self) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      accum_grad(*rows[i], self.grad.data.segment(static_cast<std::int64_t>(i) * d, d));
  });
}

NodePtr take_row(Tape& t, const NodePtr& a, int row) {
  if (a->val.ndim() != 2) throw ShapeError("take_row: expected rank-2");
  const int n = a->val.shape[0], d = a->val.shape[1];
  if (row < 0 || row >= n) throw ShapeError("take_row: row out of range");
  Tensor v({d});
  v.data = a->val.data.segment(static_cast<std::int64_t>(row) * d, d);
  return t.record(std::move(v), {a}, [a, row, n, d](Node& self) {
    ArrayX g = ArrayX::Zero(static_cast<std::int64_t>(n) * d);
    g.segment(static_cast<std::int64_t>(row) * d, d) = self.grad.data;
    accum_grad(*a, g);
  });
}

NodePtr spatial_to_rows(Tape& t, const NodePtr& x) {
  const SpatialDims s = spatial(x->val, "spatial_to_rows");
  const std::int64_t n = s.n();
  Tensor v({static_cast<int>(n), s.c});
  for (int c = 0; c < s.c; ++c)
    for (std::int64_t j = 0; j < n; ++j) v.data[j * s.c + c] = x->val.data[c * n + j];
  return t.record(std::move(v), {x}, [x, s, n](Node& self) {
    Tensor gx(x->val.shape);
    for (int c = 0; c < s.c; ++c)
      for (std::int64_t j = 0; j < n; ++j) gx.data[c * n + j] = self.grad.data[j * s.c + c];
    accum_grad(*x, gx.data);
  });
}

// ---- graph-specific operators -------------------------------------------

NodePtr rowsum(Tape& t, const NodePtr& a) {
  if (a->val.ndim() != 2) throw ShapeError("rowsum: expected rank-2");
  const int n = a->val.shape[0], m = a->val.shape[1];
  Tensor v({n});
  for (int i = 0; i < n; ++i)
    v.data[i] = a->val.data.segment(static_cast<std::int64_t>(i) * m, m).sum();
  return t.record(std::move(v), {a}, [a, n, m](Node& self) {
    ArrayX g(static_cast<std::int64_t>(n) * m);
    for (int i = 0; i < n; ++i)
      g.segment(static_cast<std::int64_t>(i) * m, m).setConstant(self.grad.data[i]);
    accum_grad(*a, g);
  });
}

NodePtr row_l2_normalize(Tape& t, const NodePtr& a, real floor_) {
  if (a->val.ndim() != 2) throw ShapeError("row_l2_normalize: expected rank-2");
  const int n = a->val.shape[0], m = a->val.shape[1];
  auto norms = std::make_shared<ArrayX>(n);
  Tensor v(a->val.shape);
  for (int i = 0; i < n; ++i) {
    auto row = a->val.data.segment(static_cast<std::int64_t>(i) * m, m);
    const real nn = std::max(std::sqrt(row.square().sum()), floor_);
    (*norms)[i] = nn;
    v.data.segment(static_cast<std::int64_t>(i) * m, m) = row / nn;
  }
  return t.record(std::move(v), {a}, [a, norms, n, m](Node& self) {
    ArrayX g(static_cast<std::int64_t>(n) * m);
    for (int i = 0; i < n; ++i) {
      auto x = a->val.data.segment(static_cast<std::int64_t>(i) * m, m);
      auto up = self.grad.data.segment(static_cast<std::int64_t>(i) * m, m);
      const real nn = (*norms)[i];
      const real dot = (up * x).sum();
      g.segment(static_cast<std::int64_t>(i) * m, m) = up / nn - x * (dot / (nn * nn * nn));
    }
    accum_grad(*a, g);
  });
}

NodePtr rsqrt(Tape& t, const NodePtr& v, const char* what) {
  if ((v->val.data <= 0.0).any())
    throw NumericError(std::string(what) + ": nonpositive entry in rsqrt");
  Tensor out(v->val.shape, v->val.data.rsqrt());
  return t.record(std::move(out), {v}, [v](Node& self) {
    // d(v^-1/2)/dv = -1/2 v^-3/2
    accum_grad(*v, self.grad.data * (-0.5) * v->val.data.pow(-1.5));
  });
}

NodePtr scale_rows_cols(Tape& t, const NodePtr& a, const NodePtr& u) {
  if (a->val.ndim() != 2 || a->val.shape[0] != a->val.shape[1])
    throw ShapeError("scale_rows_cols: expected square matrix");
  const int n = a->val.shape[0];
  if (u->val.size() != n) throw ShapeError("scale_rows_cols: vector length mismatch");
  Tensor v({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      v.data[static_cast<std::int64_t>(i) * n + j] =
          u->val.data[i] * a->val.data[static_cast<std::int64_t>(i) * n + j] * u->val.data[j];
  return t.record(std::move(v), {a, u}, [a, u, n](Node& self) {
    if (a->needs_grad) {
      ArrayX ga(static_cast<std::int64_t>(n) * n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<std::int64_t>(i) * n + j] =
              u->val.data[i] * u->val.data[j] *
              self.grad.data[static_cast<std::int64_t>(i) * n + j];
      accum_grad(*a, ga);
    }
    if (u->needs_grad) {
      ArrayX gu = ArrayX::Zero(n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const real up = self.grad.data[static_cast<std::int64_t>(i) * n + j];
          const real aij = a->val.data[static_cast<std::int64_t>(i) * n + j];
          gu[i] += up * aij * u->val.data[j];
          gu[j] += up * aij * u->val.data[i];
        }
      accum_grad(*u, gu);
    }
  });
}

NodePtr shift_scaled_max(Tape& t, const NodePtr& g, real tau) {
  if (tau <= 0.0) throw ConfigError("tau must be > 0");
  std::int64_t am = 0;
  const real mx = g->val.data.maxCoeff(&am);
  Tensor v(g->val.shape, g->val.data - mx / tau);
  return t.record(std::move(v), {g}, [g, tau, am](Node& self) {
    ArrayX gg = self.grad.data;
    gg[am] -= self.grad.data.sum() / tau;
    accum_grad(*g, gg);
  });
}

NodePtr scale_by_maxabs(Tape& t, const NodePtr& w, real floor_) {
  std::int64_t am = 0;
  const real ma = w->val.data.abs().maxCoeff(&am);
  const real s = std::max(ma, floor_);
  const bool at_floor = ma < floor_;
  Tensor v(w->val.shape, w->val.data / s);
  return t.record(std::move(v), {w}, [w, s, am, at_floor](Node& self) {
    ArrayX gw = self.grad.data / s;
    if (!at_floor) {
      const real dls = -(self.grad.data * w->val.data).sum() / (s * s);
      gw[am] += dls * (w->val.data[am] >= 0 ? 1.0 : -1.0);
    }
    accum_grad(*w, gw);
  });
}

NodePtr cc_loss_op(Tape& t, const NodePtr& w, const NodePtr& s) {
  if (w->val.ndim() != 2 || s->val.ndim() != 2 || w->val.shape[0] != w->val.shape[1] ||
      s->val.shape[0] != w->val.shape[0])
    throw ShapeError("cc_loss: shape mismatch W=" + w->val.shape_str() + " S=" +
                     s->val.shape_str());
  const int n = s->val.shape[0], c = s->val.shape[1];
  MatrixX S = s->val.as_matrix(n, c);
  MatrixX W = w->val.as_matrix(n, n);
  MatrixX SSt = S * S.transpose();
  Tensor v({1});
  v.data[0] = -(W.array() * SSt.array()).sum();
  return t.record(std::move(v), {w, s}, [w, s, n, c](Node& self) {
    const real up = self.grad.data[0];
    MatrixX S = s->val.as_matrix(n, c);
    MatrixX W = w->val.as_matrix(n, n);
    if (w->needs_grad) {
      Tensor gw({n, n});
      gw.as_matrix(n, n) = -up * (S * S.transpose());
      accum_grad(*w, gw.data);
    }
    if (s->needs_grad) {
      Tensor gs({n, c});
      gs.as_matrix(n, c) = -up * ((W + W.transpose()) * S);
      accum_grad(*s, gs.data);
    }
  });
}

}  // namespace graphcl
