#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace laspa {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace ag {

// Handle into a Graph's node arena.
template <typename T>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Dynamic reverse-mode tape over dense matrices. One Graph per forward pass;
// ops append nodes, backward() walks the tape in reverse creation order.
// Values and gradients are plain Eigen matrices, so the same code runs in
// float (training) and double (finite-difference verification).
template <typename T>
class Graph {
 public:
  using M = Mat<T>;

  Var<T> input(M value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), M(), nullptr, needs_grad});
    return Var<T>{static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(M value) { return input(std::move(value), false); }

  const M& val(Var<T> v) const { return nodes_[v.id].value; }
  const M& grad(Var<T> v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var<T> v) const { return nodes_[v.id].rg; }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(out)/d(out) = 1 and propagates to every reachable input.
  // `out` must be 1x1.
  void backward(Var<T> out) {
    if (nodes_[out.id].value.size() != 1)
      throw std::invalid_argument("backward: output is not a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[out.id].grad = M::Ones(1, 1);
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() != 0) n.back();
    }
  }

  // ---- elementwise / arithmetic -------------------------------------------

  Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape(a, b, "add");
    Var<T> o = make(val(a) + val(b), {a, b});
    set_back(o, [this, a, b, o] {
      accum(a, nodes_[o.id].grad);
      accum(b, nodes_[o.id].grad);
    });
    return o;
  }

  Var<T> sub(Var<T> a, Var<T> b) {
    require_same_shape(a, b, "sub");
    Var<T> o = make(val(a) - val(b), {a, b});
    set_back(o, [this, a, b, o] {
      accum(a, nodes_[o.id].grad);
      accum(b, -nodes_[o.id].grad);
    });
    return o;
  }

  Var<T> mul(Var<T> a, Var<T> b) {  // hadamard
    require_same_shape(a, b, "mul");
    Var<T> o = make(val(a).cwiseProduct(val(b)), {a, b});
    set_back(o, [this, a, b, o] {
      accum(a, nodes_[o.id].grad.cwiseProduct(val(b)));
      accum(b, nodes_[o.id].grad.cwiseProduct(val(a)));
    });
    return o;
  }

  Var<T> scale(Var<T> a, T c) {
    Var<T> o = make(val(a) * c, {a});
    set_back(o, [this, a, o, c] { accum(a, nodes_[o.id].grad * c); });
    return o;
  }

  Var<T> add_scalar(Var<T> a, T c) {
    Var<T> o = make((val(a).array() + c).matrix(), {a});
    set_back(o, [this, a, o] { accum(a, nodes_[o.id].grad); });
    return o;
  }

  // ---- matrix products -----------------------------------------------------

  Var<T> matmul(Var<T> a, Var<T> b) {  // A * B
    if (val(a).cols() != val(b).rows())
      throw std::invalid_argument("matmul: inner dimensions disagree");
    Var<T> o = make(val(a) * val(b), {a, b});
    set_back(o, [this, a, b, o] {
      const M& g = nodes_[o.id].grad;
      accum(a, g * val(b).transpose());
      accum(b, val(a).transpose() * g);
    });
    return o;
  }

  Var<T> matmul_nt(Var<T> a, Var<T> b) {  // A * B^T
    if (val(a).cols() != val(b).cols())
      throw std::invalid_argument("matmul_nt: inner dimensions disagree");
    Var<T> o = make(val(a) * val(b).transpose(), {a, b});
    set_back(o, [this, a, b, o] {
      const M& g = nodes_[o.id].grad;
      accum(a, g * val(b));
      accum(b, g.transpose() * val(a));
    });
    return o;
  }

  // ---- broadcasts ----------------------------------------------------------

  // A + r, r is 1 x C broadcast over rows (bias add).
  Var<T> add_rowvec(Var<T> a, Var<T> r) {
    if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
      throw std::invalid_argument("add_rowvec: bad row-vector shape");
    M y = val(a);
    y.rowwise() += val(r).row(0);
    Var<T> o = make(std::move(y), {a, r});
    set_back(o, [this, a, r, o] {
      const M& g = nodes_[o.id].grad;
      accum(a, g);
      accum(r, g.colwise().sum());
    });
    return o;
  }

  // A(i,j) * c(i), c is R x 1 broadcast over columns.
  Var<T> mul_colvec(Var<T> a, Var<T> c) {
    if (val(c).cols() != 1 || val(c).rows() != val(a).rows())
      throw std::invalid_argument("mul_colvec: bad column-vector shape");
    Var<T> o = make(
        (val(a).array().colwise() * val(c).col(0).array()).matrix(), {a, c});
    set_back(o, [this, a, c, o] {
      const M& g = nodes_[o.id].grad;
      accum(a, (g.array().colwise() * val(c).col(0).array()).matrix());
      accum(c, g.cwiseProduct(val(a)).rowwise().sum());
    });
    return o;
  }

  // A(i,j) / c(i).
  Var<T> div_colvec(Var<T> a, Var<T> c) {
    if (val(c).cols() != 1 || val(c).rows() != val(a).rows())
      throw std::invalid_argument("div_colvec: bad column-vector shape");
    Var<T> o = make(
        (val(a).array().colwise() / val(c).col(0).array()).matrix(), {a, c});
    set_back(o, [this, a, c, o] {
      const M& g = nodes_[o.id].grad;
      Eigen::Array<T, Eigen::Dynamic, 1> cinv =
          val(c).col(0).array().inverse();
      accum(a, (g.array().colwise() * cinv).matrix());
      accum(c, (-(g.cwiseProduct(nodes_[o.id].value).rowwise().sum().array() *
                  cinv))
                   .matrix());
    });
    return o;
  }

  // ---- unary ----------------------------------------------------------------

  Var<T> relu(Var<T> a) {
    Var<T> o = make(val(a).cwiseMax(T(0)), {a});
    set_back(o, [this, a, o] {
      M zero = M::Zero(rows(a), cols(a));
      accum(a, (val(a).array() > T(0)).select(nodes_[o.id].grad, zero));
    });
    return o;
  }

  Var<T> sigmoid(Var<T> a) {
    Var<T> o =
        make(((T(1) + (-val(a).array()).exp()).inverse()).matrix(), {a});
    set_back(o, [this, a, o] {
      const M& y = nodes_[o.id].value;
      accum(a, (nodes_[o.id].grad.array() * y.array() * (T(1) - y.array()))
                   .matrix());
    });
    return o;
  }

  Var<T> tanh_v(Var<T> a) {
    Var<T> o = make(val(a).array().tanh().matrix(), {a});
    set_back(o, [this, a, o] {
      const M& y = nodes_[o.id].value;
      accum(a,
            (nodes_[o.id].grad.array() * (T(1) - y.array().square())).matrix());
    });
    return o;
  }

  Var<T> exp_v(Var<T> a) {
    Var<T> o = make(val(a).array().exp().matrix(), {a});
    set_back(o, [this, a, o] {
      accum(a, nodes_[o.id].grad.cwiseProduct(nodes_[o.id].value));
    });
    return o;
  }

  Var<T> log_v(Var<T> a) {
    Var<T> o = make(val(a).array().log().matrix(), {a});
    set_back(o, [this, a, o] {
      accum(a, nodes_[o.id].grad.cwiseQuotient(val(a)));
    });
    return o;
  }

  Var<T> sqrt_v(Var<T> a) {
    Var<T> o = make(val(a).array().sqrt().matrix(), {a});
    set_back(o, [this, a, o] {
      accum(a, (nodes_[o.id].grad.array() /
                (T(2) * nodes_[o.id].value.array()))
                   .matrix());
    });
    return o;
  }

  Var<T> square(Var<T> a) {
    Var<T> o = make(val(a).array().square().matrix(), {a});
    set_back(o, [this, a, o] {
      accum(a, T(2) * nodes_[o.id].grad.cwiseProduct(val(a)));
    });
    return o;
  }

  Var<T> abs_v(Var<T> a) {
    Var<T> o = make(val(a).cwiseAbs(), {a});
    set_back(o, [this, a, o] {
      accum(a, nodes_[o.id].grad.cwiseProduct(val(a).cwiseSign()));
    });
    return o;
  }

  Var<T> cos_v(Var<T> a) {
    Var<T> o = make(val(a).array().cos().matrix(), {a});
    set_back(o, [this, a, o] {
      accum(a, (-nodes_[o.id].grad.array() * val(a).array().sin()).matrix());
    });
    return o;
  }

  // acos(clamp(x, lo, hi)); derivative is zero where the clamp is active.
  Var<T> acos_clamped(Var<T> a, T lo, T hi) {
    Var<T> o =
        make(val(a).array().max(lo).min(hi).acos().matrix(), {a});
    set_back(o, [this, a, o, lo, hi] {
      auto xa = val(a).array();
      Mat<T> inside =
          ((xa > lo && xa < hi).template cast<T>()).matrix();
      auto xc = xa.max(lo).min(hi);
      accum(a, (nodes_[o.id].grad.array() * inside.array() *
                (T(-1) / (T(1) - xc.square()).sqrt()))
                   .matrix());
    });
    return o;
  }

  Var<T> min_scalar(Var<T> a, T c) {
    Var<T> o = make(val(a).cwiseMin(c), {a});
    set_back(o, [this, a, o, c] {
      M zero = M::Zero(rows(a), cols(a));
      accum(a, (val(a).array() < c).select(nodes_[o.id].grad, zero));
    });
    return o;
  }

  // var -> (var < threshold) ? 0 : 1/sqrt(var). The hard zero implements the
  // zero-variance guard in Pearson correlation.
  Var<T> guarded_inv_sqrt(Var<T> a, T threshold) {
    M zero = M::Zero(val(a).rows(), val(a).cols());
    M y = (val(a).array() < threshold)
              .select(zero, val(a).array().rsqrt().matrix());
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o, threshold] {
      auto xa = val(a).array();
      M zero2 = M::Zero(rows(a), cols(a));
      M d = (xa < threshold)
                .select(zero2, (T(-0.5) * xa.pow(T(-1.5))).matrix());
      accum(a, nodes_[o.id].grad.cwiseProduct(d));
    });
    return o;
  }

  // ---- row/col reductions and softmax ---------------------------------------

  Var<T> softmax_rows(Var<T> a) {
    M y = val(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      T m = y.row(i).maxCoeff();
      y.row(i) = (y.row(i).array() - m).exp().matrix();
      y.row(i) /= y.row(i).sum();
    }
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o] {
      const M& y2 = nodes_[o.id].value;
      const M& g = nodes_[o.id].grad;
      M d(y2.rows(), y2.cols());
      for (Eigen::Index i = 0; i < y2.rows(); ++i) {
        T dot = y2.row(i).dot(g.row(i));
        d.row(i) = y2.row(i).cwiseProduct(g.row(i)) - dot * y2.row(i);
      }
      accum(a, d);
    });
    return o;
  }

  Var<T> logsumexp_rows(Var<T> a) {  // R x C -> R x 1
    const M& x = val(a);
    M y(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      T m = x.row(i).maxCoeff();
      y(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
    }
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o] {
      const M& x2 = val(a);
      const M& lse = nodes_[o.id].value;
      const M& g = nodes_[o.id].grad;
      M d(x2.rows(), x2.cols());
      for (Eigen::Index i = 0; i < x2.rows(); ++i)
        d.row(i) = g(i, 0) * (x2.row(i).array() - lse(i, 0)).exp().matrix();
      accum(a, d);
    });
    return o;
  }

  // out(i, 0) = A(i, idx[i]).
  Var<T> gather_cols(Var<T> a, std::vector<int> idx) {
    const M& x = val(a);
    if (static_cast<Eigen::Index>(idx.size()) != x.rows())
      throw std::invalid_argument("gather_cols: one index per row required");
    M y(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (idx[i] < 0 || idx[i] >= x.cols())
        throw std::out_of_range("gather_cols: index out of range");
      y(i, 0) = x(i, idx[i]);
    }
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o, idx = std::move(idx)] {
      M d = M::Zero(rows(a), cols(a));
      const M& g = nodes_[o.id].grad;
      for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, idx[i]) = g(i, 0);
      accum(a, d);
    });
    return o;
  }

  Var<T> sum_all(Var<T> a) {
    M y(1, 1);
    y(0, 0) = val(a).sum();
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o] {
      accum(a, M::Constant(rows(a), cols(a), nodes_[o.id].grad(0, 0)));
    });
    return o;
  }

  Var<T> mean_all(Var<T> a) {
    T n = static_cast<T>(val(a).size());
    M y(1, 1);
    y(0, 0) = val(a).sum() / n;
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o, n] {
      accum(a, M::Constant(rows(a), cols(a), nodes_[o.id].grad(0, 0) / n));
    });
    return o;
  }

  Var<T> colmean(Var<T> a) {  // R x C -> 1 x C
    T n = static_cast<T>(val(a).rows());
    Var<T> o = make(val(a).colwise().sum() / n, {a});
    set_back(o, [this, a, o, n] {
      const M& g = nodes_[o.id].grad;
      accum(a, (M::Ones(rows(a), 1) * g) / n);
    });
    return o;
  }

  Var<T> rowsum(Var<T> a) {  // R x C -> R x 1
    Var<T> o = make(val(a).rowwise().sum(), {a});
    set_back(o, [this, a, o] {
      accum(a, nodes_[o.id].grad * M::Ones(1, cols(a)));
    });
    return o;
  }

  // Subtract the column mean from every row.
  Var<T> center_cols(Var<T> a) {
    T n = static_cast<T>(val(a).rows());
    M mu = val(a).colwise().sum() / n;
    M y = val(a);
    y.rowwise() -= mu.row(0);
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o, n] {
      const M& g = nodes_[o.id].grad;
      M gmu = g.colwise().sum() / n;
      M d = g;
      d.rowwise() -= gmu.row(0);
      accum(a, d);
    });
    return o;
  }

  // ---- shape ops -------------------------------------------------------------

  Var<T> hconcat(Var<T> a, Var<T> b) {
    if (val(a).rows() != val(b).rows())
      throw std::invalid_argument("hconcat: row counts disagree");
    M y(val(a).rows(), val(a).cols() + val(b).cols());
    y.leftCols(val(a).cols()) = val(a);
    y.rightCols(val(b).cols()) = val(b);
    Var<T> o = make(std::move(y), {a, b});
    set_back(o, [this, a, b, o] {
      const M& g = nodes_[o.id].grad;
      accum(a, g.leftCols(cols(a)));
      accum(b, g.rightCols(cols(b)));
    });
    return o;
  }

  Var<T> vstack(std::vector<Var<T>> parts) {
    if (parts.empty()) throw std::invalid_argument("vstack: empty");
    Eigen::Index r = 0, c = val(parts[0]).cols();
    for (auto p : parts) {
      if (val(p).cols() != c)
        throw std::invalid_argument("vstack: column counts disagree");
      r += val(p).rows();
    }
    M y(r, c);
    Eigen::Index at = 0;
    for (auto p : parts) {
      y.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
    }
    Var<T> o = make(std::move(y), parts);
    set_back(o, [this, parts, o] {
      const M& g = nodes_[o.id].grad;
      Eigen::Index at2 = 0;
      for (auto p : parts) {
        accum(p, g.middleRows(at2, rows(p)));
        at2 += rows(p);
      }
    });
    return o;
  }

  Var<T> slice_cols(Var<T> a, Eigen::Index j0, Eigen::Index n) {
    if (j0 < 0 || n < 0 || j0 + n > val(a).cols())
      throw std::invalid_argument("slice_cols: range out of bounds");
    Var<T> o = make(val(a).middleCols(j0, n), {a});
    set_back(o, [this, a, o, j0, n] {
      M d = M::Zero(rows(a), cols(a));
      d.middleCols(j0, n) = nodes_[o.id].grad;
      accum(a, d);
    });
    return o;
  }

  Var<T> slice_rows(Var<T> a, Eigen::Index i0, Eigen::Index n) {
    if (i0 < 0 || n < 0 || i0 + n > val(a).rows())
      throw std::invalid_argument("slice_rows: range out of bounds");
    Var<T> o = make(val(a).middleRows(i0, n), {a});
    set_back(o, [this, a, o, i0, n] {
      M d = M::Zero(rows(a), cols(a));
      d.middleRows(i0, n) = nodes_[o.id].grad;
      accum(a, d);
    });
    return o;
  }

  // ---- image ops --------------------------------------------------------------

  // Input layout: feature maps of B images stored as (B*H*W) x C, row index
  // (b*H + i)*W + j. Produces (B*Ho*Wo) x (k*k*C) patches with zero padding.
  Var<T> im2col(Var<T> a, int B, int H, int W, int C, int k, int stride,
                int pad) {
    const M& x = val(a);
    if (x.rows() != static_cast<Eigen::Index>(B) * H * W || x.cols() != C)
      throw std::invalid_argument("im2col: input layout mismatch");
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0)
      throw std::invalid_argument("im2col: empty output plane");
    M y = M::Zero(static_cast<Eigen::Index>(B) * Ho * Wo,
                  static_cast<Eigen::Index>(k) * k * C);
    for (int b = 0; b < B; ++b)
      for (int io = 0; io < Ho; ++io)
        for (int jo = 0; jo < Wo; ++jo) {
          Eigen::Index orow =
              (static_cast<Eigen::Index>(b) * Ho + io) * Wo + jo;
          for (int ki = 0; ki < k; ++ki) {
            int ii = io * stride - pad + ki;
            if (ii < 0 || ii >= H) continue;
            for (int kj = 0; kj < k; ++kj) {
              int jj = jo * stride - pad + kj;
              if (jj < 0 || jj >= W) continue;
              Eigen::Index irow =
                  (static_cast<Eigen::Index>(b) * H + ii) * W + jj;
              y.block(orow, (ki * k + kj) * C, 1, C) = x.block(irow, 0, 1, C);
            }
          }
        }
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o, B, H, W, C, k, stride, pad] {
      const int Ho2 = (H + 2 * pad - k) / stride + 1;
      const int Wo2 = (W + 2 * pad - k) / stride + 1;
      const M& g = nodes_[o.id].grad;
      M d = M::Zero(rows(a), cols(a));
      for (int b = 0; b < B; ++b)
        for (int io = 0; io < Ho2; ++io)
          for (int jo = 0; jo < Wo2; ++jo) {
            Eigen::Index orow =
                (static_cast<Eigen::Index>(b) * Ho2 + io) * Wo2 + jo;
            for (int ki = 0; ki < k; ++ki) {
              int ii = io * stride - pad + ki;
              if (ii < 0 || ii >= H) continue;
              for (int kj = 0; kj < k; ++kj) {
                int jj = jo * stride - pad + kj;
                if (jj < 0 || jj >= W) continue;
                Eigen::Index irow =
                    (static_cast<Eigen::Index>(b) * H + ii) * W + jj;
                d.block(irow, 0, 1, C) +=
                    g.block(orow, (ki * k + kj) * C, 1, C);
              }
            }
          }
      accum(a, d);
    });
    return o;
  }

  // Temporal statistics pooling. Input (B*To*Mo) x C; per sample, mean and
  // std over the To axis of every (m, c) feature. Output B x (2*Mo*C) with
  // feature order [means..., stds...], feature index m*C + c. std uses
  // sqrt(var + eps) so the gradient stays finite on constant columns.
  Var<T> time_stats_pool(Var<T> a, int B, int To, int Mo, T eps) {
    const M& x = val(a);
    const int C = static_cast<int>(x.cols());
    if (x.rows() != static_cast<Eigen::Index>(B) * To * Mo)
      throw std::invalid_argument("time_stats_pool: layout mismatch");
    const int F = Mo * C;
    M y(B, 2 * F);
    for (int b = 0; b < B; ++b)
      for (int m = 0; m < Mo; ++m)
        for (int c = 0; c < C; ++c) {
          T s = 0, s2 = 0;
          for (int t = 0; t < To; ++t) {
            T v = x((static_cast<Eigen::Index>(b) * To + t) * Mo + m, c);
            s += v;
            s2 += v * v;
          }
          T mu = s / To;
          T var = s2 / To - mu * mu;
          if (var < T(0)) var = T(0);
          y(b, m * C + c) = mu;
          y(b, F + m * C + c) = std::sqrt(var + eps);
        }
    Var<T> o = make(std::move(y), {a});
    set_back(o, [this, a, o, B, To, Mo, C, F] {
      const M& x2 = val(a);
      const M& y2 = nodes_[o.id].value;
      const M& g = nodes_[o.id].grad;
      M d(x2.rows(), x2.cols());
      for (int b = 0; b < B; ++b)
        for (int m = 0; m < Mo; ++m)
          for (int c = 0; c < C; ++c) {
            T mu = y2(b, m * C + c);
            T sd = y2(b, F + m * C + c);
            T gmu = g(b, m * C + c);
            T gsd = g(b, F + m * C + c);
            for (int t = 0; t < To; ++t) {
              Eigen::Index r =
                  (static_cast<Eigen::Index>(b) * To + t) * Mo + m;
              d(r, c) = gmu / To + gsd * (x2(r, c) - mu) / (To * sd);
            }
          }
      accum(a, d);
    });
    return o;
  }

 private:
  struct Node {
    M value;
    M grad;
    std::function<void()> back;
    bool rg = false;
  };

  std::vector<Node> nodes_;

  Eigen::Index rows(Var<T> v) const { return nodes_[v.id].value.rows(); }
  Eigen::Index cols(Var<T> v) const { return nodes_[v.id].value.cols(); }

  Var<T> make(M value, const std::vector<Var<T>>& parents) {
    bool rg = false;
    for (auto p : parents) rg = rg || nodes_[p.id].rg;
    nodes_.push_back(Node{std::move(value), M(), nullptr, rg});
    return Var<T>{static_cast<int>(nodes_.size()) - 1};
  }

  void set_back(Var<T> o, std::function<void()> fn) {
    if (nodes_[o.id].rg) nodes_[o.id].back = std::move(fn);
  }

  template <typename Expr>
  void accum(Var<T> v, const Expr& delta) {
    Node& n = nodes_[v.id];
    if (!n.rg) return;
    if (n.grad.size() == 0)
      n.grad = delta;
    else
      n.grad += delta;
  }

  void require_same_shape(Var<T> a, Var<T> b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
};

}  // namespace ag
}  // namespace laspa
