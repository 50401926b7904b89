#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "psdn/errors.hpp"

namespace psdn::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Parameter {
  std::string name;
  Mat<S> value;
  bool trainable = true;
  int index = -1;  // registration ordinal within its store
  // Forward-use instrumentation; lets tests assert which parameters an
  // operation touched.
  mutable std::atomic<std::uint64_t> use_count{0};
};

// Dynamically built reverse-mode tape over dense matrices. One graph per
// utterance; parameters are shared read-only leaves, their gradients are
// accumulated per graph and merged by the caller in a deterministic order.
template <class S>
class Graph {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  struct Conv2dOut {
    Var var;
    int h = 0;
    int w = 0;
  };

  explicit Graph(bool training = false) : training_(training) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }

  // ---- leaves ------------------------------------------------------------

  // External value; caller keeps it alive for the graph's lifetime.
  Var input(const Mat<S>& x) {
    Node& n = push();
    n.value = &x;
    return Var{n.id};
  }

  Var constant(Mat<S> x) {
    Node& n = push();
    n.owned = std::move(x);
    n.value = &n.owned;
    return Var{n.id};
  }

  Var param(const Parameter<S>& p) {
    auto it = param_vars_.find(&p);
    if (it != param_vars_.end()) return it->second;
    p.use_count.fetch_add(1, std::memory_order_relaxed);
    Node& n = push();
    n.value = &p.value;
    n.requires_grad = p.trainable;
    n.param = &p;
    Var v{n.id};
    param_vars_.emplace(&p, v);
    if (p.trainable) param_leaves_.push_back(n.id);
    return v;
  }

  // ---- accessors ----------------------------------------------------------

  const Mat<S>& value(Var v) const { return *node(v.id).value; }
  S scalar(Var v) const {
    const Mat<S>& m = value(v);
    check(m.rows() == 1 && m.cols() == 1, "scalar() on non-1x1 value");
    return m(0, 0);
  }
  // Gradient of the last backward() w.r.t. this var (zeros if untouched).
  Mat<S> grad(Var v) const {
    const Node& n = node(v.id);
    if (n.grad.size() == 0) return Mat<S>::Zero(n.value->rows(), n.value->cols());
    return n.grad;
  }

  // Parameter gradients accumulated by the last backward().
  const std::unordered_map<const Parameter<S>*, Mat<S>>& param_grads() const {
    return param_grads_;
  }
  std::unordered_map<const Parameter<S>*, Mat<S>> take_param_grads() {
    return std::move(param_grads_);
  }

  struct BnUpdate {
    Parameter<S>* mean_buf;
    Parameter<S>* var_buf;
    Mat<S> batch_mean;  // [1 x C]
    Mat<S> batch_var;   // [1 x C], unbiased
  };
  const std::vector<BnUpdate>& bn_updates() const { return bn_updates_; }
  std::vector<BnUpdate> take_bn_updates() { return std::move(bn_updates_); }

  // ---- arithmetic ----------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Mat<S>&A = value(a), &B = value(b);
    check(A.cols() == B.rows(), "matmul shape mismatch");
    Var out = make(A * B, {a, b});
    defer(out, [this, a, b, out] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(a)) grad_of(a).noalias() += dy * value(b).transpose();
      if (wants(b)) grad_of(b).noalias() += value(a).transpose() * dy;
    });
    return out;
  }

  // y = A * B^T
  Var matmul_nt(Var a, Var b) {
    const Mat<S>&A = value(a), &B = value(b);
    check(A.cols() == B.cols(), "matmul_nt shape mismatch");
    Var out = make(A * B.transpose(), {a, b});
    defer(out, [this, a, b, out] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(a)) grad_of(a).noalias() += dy * value(b);
      if (wants(b)) grad_of(b).noalias() += dy.transpose() * value(a);
    });
    return out;
  }

  Var add(Var a, Var b) {
    check(same_shape(a, b), "add shape mismatch");
    Var out = make(value(a) + value(b), {a, b});
    defer(out, [this, a, b, out] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(a)) grad_of(a) += dy;
      if (wants(b)) grad_of(b) += dy;
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check(same_shape(a, b), "sub shape mismatch");
    Var out = make(value(a) - value(b), {a, b});
    defer(out, [this, a, b, out] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(a)) grad_of(a) += dy;
      if (wants(b)) grad_of(b) -= dy;
    });
    return out;
  }

  Var add_rowvec(Var x, Var v) {
    const Mat<S>& X = value(x);
    check(value(v).rows() == 1 && value(v).cols() == X.cols(),
          "add_rowvec shape mismatch");
    Mat<S> y = X;
    y.rowwise() += value(v).row(0);
    Var out = make(std::move(y), {x, v});
    defer(out, [this, x, v, out] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(x)) grad_of(x) += dy;
      if (wants(v)) grad_of(v) += dy.colwise().sum();
    });
    return out;
  }

  Var scale(Var x, double c) {
    Var out = make(value(x) * static_cast<S>(c), {x});
    defer(out, [this, x, c, out] {
      if (wants(x)) grad_of(x) += node(out.id).grad * static_cast<S>(c);
    });
    return out;
  }

  Var cmul(Var a, Var b) {
    check(same_shape(a, b), "cmul shape mismatch");
    Var out = make(value(a).cwiseProduct(value(b)), {a, b});
    defer(out, [this, a, b, out] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(a)) grad_of(a) += dy.cwiseProduct(value(b));
      if (wants(b)) grad_of(b) += dy.cwiseProduct(value(a));
    });
    return out;
  }

  Var concat_cols(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_cols of nothing");
    const Eigen::Index rows = value(xs[0]).rows();
    Eigen::Index cols = 0;
    for (Var x : xs) {
      check(value(x).rows() == rows, "concat_cols row mismatch");
      cols += value(x).cols();
    }
    Mat<S> y(rows, cols);
    Eigen::Index at = 0;
    for (Var x : xs) {
      y.middleCols(at, value(x).cols()) = value(x);
      at += value(x).cols();
    }
    Var out = make(std::move(y), xs);
    defer(out, [this, xs, out] {
      const Mat<S>& dy = node(out.id).grad;
      Eigen::Index at = 0;
      for (Var x : xs) {
        const Eigen::Index w = value(x).cols();
        if (wants(x)) grad_of(x) += dy.middleCols(at, w);
        at += w;
      }
    });
    return out;
  }

  Var slice_cols(Var x, int c0, int n) {
    check(c0 >= 0 && n >= 1 && c0 + n <= value(x).cols(), "slice_cols bounds");
    Var out = make(Mat<S>(value(x).middleCols(c0, n)), {x});
    defer(out, [this, x, c0, n, out] {
      if (wants(x)) grad_of(x).middleCols(c0, n) += node(out.id).grad;
    });
    return out;
  }

  Var slice_rows(Var x, int r0, int n) {
    check(r0 >= 0 && n >= 1 && r0 + n <= value(x).rows(), "slice_rows bounds");
    Var out = make(Mat<S>(value(x).middleRows(r0, n)), {x});
    defer(out, [this, x, r0, n, out] {
      if (wants(x)) grad_of(x).middleRows(r0, n) += node(out.id).grad;
    });
    return out;
  }

  Var broadcast_row(Var v, int rows) {
    check(value(v).rows() == 1, "broadcast_row needs a row vector");
    Var out = make(Mat<S>(value(v).replicate(rows, 1)), {v});
    defer(out, [this, v, out] {
      if (wants(v)) grad_of(v) += node(out.id).grad.colwise().sum();
    });
    return out;
  }

  // Row-major reshape (same scalar order, new dims).
  Var reshape(Var x, int rows, int cols) {
    const Mat<S>& X = value(x);
    check(static_cast<Eigen::Index>(rows) * cols == X.size(),
          "reshape size mismatch");
    Mat<S> y(rows, cols);
    std::copy(X.data(), X.data() + X.size(), y.data());
    Var out = make(std::move(y), {x});
    defer(out, [this, x, out] {
      if (!wants(x)) return;
      const Mat<S>& dy = node(out.id).grad;
      Mat<S>& dx = grad_of(x);
      for (Eigen::Index i = 0; i < dy.size(); ++i)
        dx.data()[i] += dy.data()[i];
    });
    return out;
  }

  Var reverse_rows(Var x) {
    Var out = make(Mat<S>(value(x).colwise().reverse()), {x});
    defer(out, [this, x, out] {
      if (wants(x)) grad_of(x) += node(out.id).grad.colwise().reverse();
    });
    return out;
  }

  Var pad_rows_repeat_last(Var x, int new_rows) {
    const Eigen::Index t = value(x).rows();
    check(new_rows >= t && t >= 1, "pad_rows_repeat_last target too small");
    if (new_rows == t) return x;
    Mat<S> y(new_rows, value(x).cols());
    y.topRows(t) = value(x);
    y.bottomRows(new_rows - t) = value(x).row(t - 1).replicate(new_rows - t, 1);
    Var out = make(std::move(y), {x});
    defer(out, [this, x, t, out] {
      if (!wants(x)) return;
      const Mat<S>& dy = node(out.id).grad;
      grad_of(x) += dy.topRows(t);
      grad_of(x).row(t - 1) += dy.bottomRows(dy.rows() - t).colwise().sum();
    });
    return out;
  }

  // ---- normalization -------------------------------------------------------

  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Mat<S>& X = value(x);
    const Eigen::Index c = X.cols();
    check(value(gamma).cols() == c && value(beta).cols() == c,
          "layer_norm affine shape mismatch");
    Mat<S> xhat(X.rows(), c);
    Mat<S> inv_std(X.rows(), 1);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const S mu = X.row(r).mean();
      const S var = (X.row(r).array() - mu).square().mean();
      const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
      inv_std(r, 0) = inv;
      xhat.row(r) = (X.row(r).array() - mu) * inv;
    }
    Mat<S> y = xhat;
    y.array().rowwise() *= value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    Var out = make(std::move(y), {x, gamma, beta});
    defer(out, [this, x, gamma, beta, out, xhat = std::move(xhat),
                inv_std = std::move(inv_std)] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(beta)) grad_of(beta) += dy.colwise().sum();
      if (wants(gamma)) grad_of(gamma) += dy.cwiseProduct(xhat).colwise().sum();
      if (!wants(x)) return;
      Mat<S>& dx = grad_of(x);
      for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        Eigen::Array<S, 1, Eigen::Dynamic> dxh =
            dy.row(r).array() * value(gamma).row(0).array();
        const S m1 = dxh.mean();
        const S m2 = (dxh * xhat.row(r).array()).mean();
        dx.row(r).array() +=
            inv_std(r, 0) * (dxh - m1 - xhat.row(r).array() * m2);
      }
    });
    return out;
  }

  // Per-column batch norm over rows (spatial positions of one item).
  // Training mode normalizes with the item's statistics and records a
  // running-stat update for the caller to apply; eval mode uses the buffers.
  Var batchnorm_cols(Var x, Var gamma, Var beta, Parameter<S>& run_mean,
                     Parameter<S>& run_var, double eps = 1e-5) {
    const Mat<S>& X = value(x);
    const Eigen::Index n = X.rows(), c = X.cols();
    check(value(gamma).cols() == c && value(beta).cols() == c,
          "batchnorm affine shape mismatch");
    if (training_) {
      Mat<S> mu = X.colwise().mean();
      Mat<S> var(1, c);
      for (Eigen::Index j = 0; j < c; ++j)
        var(0, j) = (X.col(j).array() - mu(0, j)).square().mean();
      Mat<S> inv(1, c);
      for (Eigen::Index j = 0; j < c; ++j)
        inv(0, j) = S(1) / std::sqrt(var(0, j) + static_cast<S>(eps));
      Mat<S> xhat = X;
      xhat.rowwise() -= mu.row(0);
      xhat.array().rowwise() *= inv.row(0).array();

      const S unbias = n > 1 ? static_cast<S>(n) / static_cast<S>(n - 1) : S(1);
      bn_updates_.push_back(
          BnUpdate{&run_mean, &run_var, mu, Mat<S>(var * unbias)});

      Mat<S> y = xhat;
      y.array().rowwise() *= value(gamma).row(0).array();
      y.rowwise() += value(beta).row(0);
      Var out = make(std::move(y), {x, gamma, beta});
      defer(out, [this, x, gamma, beta, out, xhat = std::move(xhat),
                  inv = std::move(inv)] {
        const Mat<S>& dy = node(out.id).grad;
        if (wants(beta)) grad_of(beta) += dy.colwise().sum();
        if (wants(gamma))
          grad_of(gamma) += dy.cwiseProduct(xhat).colwise().sum();
        if (!wants(x)) return;
        Mat<S> dxh = dy;
        dxh.array().rowwise() *= value(gamma).row(0).array();
        Mat<S> m1 = dxh.colwise().mean();
        Mat<S> m2 = dxh.cwiseProduct(xhat).colwise().mean();
        Mat<S> dx = dxh;
        dx.rowwise() -= m1.row(0);
        dx.array() -= xhat.array().rowwise() * m2.row(0).array();
        dx.array().rowwise() *= inv.row(0).array();
        grad_of(x) += dx;
      });
      return out;
    }
    // Evaluation: running statistics are constants.
    run_mean.use_count.fetch_add(1, std::memory_order_relaxed);
    run_var.use_count.fetch_add(1, std::memory_order_relaxed);
    Mat<S> inv(1, c);
    for (Eigen::Index j = 0; j < c; ++j)
      inv(0, j) = S(1) / std::sqrt(run_var.value(0, j) + static_cast<S>(eps));
    Mat<S> xhat = X;
    xhat.rowwise() -= run_mean.value.row(0);
    xhat.array().rowwise() *= inv.row(0).array();
    Mat<S> y = xhat;
    y.array().rowwise() *= value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    Var out = make(std::move(y), {x, gamma, beta});
    defer(out, [this, x, gamma, beta, out, xhat = std::move(xhat),
                inv = std::move(inv)] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(beta)) grad_of(beta) += dy.colwise().sum();
      if (wants(gamma)) grad_of(gamma) += dy.cwiseProduct(xhat).colwise().sum();
      if (wants(x)) {
        Eigen::Array<S, 1, Eigen::Dynamic> f =
            value(gamma).row(0).array() * inv.row(0).array();
        Mat<S> dx = dy;
        dx.array().rowwise() *= f;
        grad_of(x) += dx;
      }
    });
    return out;
  }

  // ---- nonlinearities ------------------------------------------------------

  Var relu(Var x) {
    Var out = make(Mat<S>(value(x).cwiseMax(S(0))), {x});
    defer(out, [this, x, out] {
      if (wants(x))
        grad_of(x).array() += node(out.id).grad.array() *
                              (value(x).array() > S(0)).template cast<S>();
    });
    return out;
  }

  Var leaky_relu(Var x, double slope = 0.01) {
    const S a = static_cast<S>(slope);
    Var out = make(
        Mat<S>(value(x).array().max(value(x).array() * a).matrix()), {x});
    defer(out, [this, x, a, out] {
      if (!wants(x)) return;
      auto pos = (value(x).array() > S(0)).template cast<S>();
      grad_of(x).array() +=
          node(out.id).grad.array() * (pos + (S(1) - pos) * a);
    });
    return out;
  }

  Var sigmoid(Var x) {
    Mat<S> y = value(x).unaryExpr(
        [](S v) { return S(1) / (S(1) + std::exp(-v)); });
    Var out = make(std::move(y), {x});
    defer(out, [this, x, out] {
      if (!wants(x)) return;
      const auto& y = node(out.id).value->array();
      grad_of(x).array() += node(out.id).grad.array() * y * (S(1) - y);
    });
    return out;
  }

  Var tanh_act(Var x) {
    Mat<S> y = value(x).unaryExpr([](S v) { return std::tanh(v); });
    Var out = make(std::move(y), {x});
    defer(out, [this, x, out] {
      if (!wants(x)) return;
      const auto& y = node(out.id).value->array();
      grad_of(x).array() += node(out.id).grad.array() * (S(1) - y * y);
    });
    return out;
  }

  Var silu(Var x) {
    Mat<S> sig = value(x).unaryExpr(
        [](S v) { return S(1) / (S(1) + std::exp(-v)); });
    Mat<S> y = value(x).cwiseProduct(sig);
    Var out = make(std::move(y), {x});
    defer(out, [this, x, out, sig = std::move(sig)] {
      if (!wants(x)) return;
      const auto s = sig.array();
      grad_of(x).array() += node(out.id).grad.array() *
                            (s + value(x).array() * s * (S(1) - s));
    });
    return out;
  }

  // Gated linear unit over column halves: y = a .* sigmoid(b).
  Var glu_cols(Var x) {
    const Eigen::Index c = value(x).cols();
    check(c % 2 == 0, "glu_cols needs an even column count");
    const Eigen::Index h = c / 2;
    Mat<S> sig = value(x).rightCols(h).unaryExpr(
        [](S v) { return S(1) / (S(1) + std::exp(-v)); });
    Mat<S> y = value(x).leftCols(h).cwiseProduct(sig);
    Var out = make(std::move(y), {x});
    defer(out, [this, x, h, out, sig = std::move(sig)] {
      if (!wants(x)) return;
      const Mat<S>& dy = node(out.id).grad;
      Mat<S>& dx = grad_of(x);
      dx.leftCols(h) += dy.cwiseProduct(sig);
      dx.rightCols(h).array() += dy.array() * value(x).leftCols(h).array() *
                                 sig.array() * (S(1) - sig.array());
    });
    return out;
  }

  Var softmax_rows(Var x) {
    const Mat<S>& X = value(x);
    Mat<S> y(X.rows(), X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const S m = X.row(r).maxCoeff();
      y.row(r) = (X.row(r).array() - m).exp();
      y.row(r) /= y.row(r).sum();
    }
    Var out = make(std::move(y), {x});
    defer(out, [this, x, out] {
      if (!wants(x)) return;
      const Mat<S>& dy = node(out.id).grad;
      const Mat<S>& y = *node(out.id).value;
      Mat<S>& dx = grad_of(x);
      for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const S dot = y.row(r).cwiseProduct(dy.row(r)).sum();
        dx.row(r).array() += y.row(r).array() * (dy.row(r).array() - dot);
      }
    });
    return out;
  }

  // ---- structural / adversarial -------------------------------------------

  // Identity forward; backward scales the upstream gradient by -lambda,
  // elementwise, exactly.
  Var grl(Var x, double lambda) {
    check(lambda >= 0.0, "grl lambda must be >= 0");
    Node& n = push();
    n.value = node(x.id).value;  // alias, no copy
    n.requires_grad = node(x.id).requires_grad;
    Var out{n.id};
    defer(out, [this, x, lambda, out] {
      if (wants(x))
        grad_of(x) += node(out.id).grad * static_cast<S>(-lambda);
    });
    return out;
  }

  // ---- convolutions ---------------------------------------------------------

  // x [T x Cin], w [(k*Cin) x Cout] with patch column (tap, channel),
  // b [1 x Cout]. SAME-style zero padding `pad`, stride >= 1.
  Var conv1d(Var x, Var w, Var b, int kernel, int stride, int pad) {
    const Mat<S>& X = value(x);
    const int t_in = static_cast<int>(X.rows());
    const int cin = static_cast<int>(X.cols());
    check(value(w).rows() == kernel * cin, "conv1d weight rows != k*Cin");
    const int t_out = (t_in + 2 * pad - kernel) / stride + 1;
    check(t_out >= 1, "conv1d produces empty output");

    Mat<S> patches = Mat<S>::Zero(t_out, kernel * cin);
    for (int i = 0; i < t_out; ++i) {
      for (int kk = 0; kk < kernel; ++kk) {
        const int t = i * stride - pad + kk;
        if (t >= 0 && t < t_in)
          patches.row(i).segment(kk * cin, cin) = X.row(t);
      }
    }
    Mat<S> y = patches * value(w);
    y.rowwise() += value(b).row(0);
    Var out = make(std::move(y), {x, w, b});
    defer(out, [this, x, w, b, kernel, stride, pad, cin, t_in, out,
                patches = std::move(patches)] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(b)) grad_of(b) += dy.colwise().sum();
      if (wants(w)) grad_of(w).noalias() += patches.transpose() * dy;
      if (!wants(x)) return;
      Mat<S> dp = dy * value(w).transpose();
      Mat<S>& dx = grad_of(x);
      for (int i = 0; i < static_cast<int>(dp.rows()); ++i) {
        for (int kk = 0; kk < kernel; ++kk) {
          const int t = i * stride - pad + kk;
          if (t >= 0 && t < t_in)
            dx.row(t) += dp.row(i).segment(kk * cin, cin);
        }
      }
    });
    return out;
  }

  // Depthwise temporal convolution: x [T x C], w [k x C], b [1 x C],
  // stride 1, zero padding `pad`.
  Var dwconv1d(Var x, Var w, Var b, int pad) {
    const Mat<S>& X = value(x);
    const int t_in = static_cast<int>(X.rows());
    const int c = static_cast<int>(X.cols());
    const int kernel = static_cast<int>(value(w).rows());
    check(value(w).cols() == c, "dwconv1d channel mismatch");
    const int t_out = t_in + 2 * pad - kernel + 1;
    check(t_out >= 1, "dwconv1d produces empty output");

    Mat<S> y = Mat<S>::Zero(t_out, c);
    y.rowwise() += value(b).row(0);
    for (int kk = 0; kk < kernel; ++kk) {
      const int lo = std::max(0, pad - kk);
      const int hi = std::min(t_out, t_in + pad - kk);
      if (lo >= hi) continue;
      y.middleRows(lo, hi - lo).array() +=
          X.middleRows(lo + kk - pad, hi - lo).array().rowwise() *
          value(w).row(kk).array();
    }
    Var out = make(std::move(y), {x, w, b});
    defer(out, [this, x, w, b, kernel, pad, t_in, out] {
      const Mat<S>& dy = node(out.id).grad;
      const int t_out = static_cast<int>(dy.rows());
      if (wants(b)) grad_of(b) += dy.colwise().sum();
      for (int kk = 0; kk < kernel; ++kk) {
        const int lo = std::max(0, pad - kk);
        const int hi = std::min(t_out, t_in + pad - kk);
        if (lo >= hi) continue;
        auto dy_blk = dy.middleRows(lo, hi - lo);
        if (wants(w))
          grad_of(w).row(kk) +=
              dy_blk.cwiseProduct(value(x).middleRows(lo + kk - pad, hi - lo))
                  .colwise()
                  .sum();
        if (wants(x))
          grad_of(x).middleRows(lo + kk - pad, hi - lo).array() +=
              dy_blk.array().rowwise() * value(w).row(kk).array();
      }
    });
    return out;
  }

  // 2-D convolution over a spatial-major map: x [(H*W) x Cin] with row
  // index h*W + w, weights [(k*k*Cin) x Cout] with patch column
  // ((kh*k + kw)*Cin + c), bias [1 x Cout].
  Conv2dOut conv2d(Var x, int in_h, int in_w, Var w, Var b, int kernel,
                   int stride, int pad) {
    const Mat<S>& X = value(x);
    const int cin = static_cast<int>(X.cols());
    check(static_cast<int>(X.rows()) == in_h * in_w, "conv2d spatial mismatch");
    check(value(w).rows() == kernel * kernel * cin,
          "conv2d weight rows != k*k*Cin");
    const int oh = (in_h + 2 * pad - kernel) / stride + 1;
    const int ow = (in_w + 2 * pad - kernel) / stride + 1;
    check(oh >= 1 && ow >= 1, "conv2d produces empty output");

    Mat<S> patches = Mat<S>::Zero(oh * ow, kernel * kernel * cin);
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        const int row = i * ow + j;
        for (int kh = 0; kh < kernel; ++kh) {
          const int ih = i * stride - pad + kh;
          if (ih < 0 || ih >= in_h) continue;
          for (int kw = 0; kw < kernel; ++kw) {
            const int iw = j * stride - pad + kw;
            if (iw < 0 || iw >= in_w) continue;
            patches.row(row).segment((kh * kernel + kw) * cin, cin) =
                X.row(ih * in_w + iw);
          }
        }
      }
    }
    Mat<S> y = patches * value(w);
    y.rowwise() += value(b).row(0);
    Var out = make(std::move(y), {x, w, b});
    defer(out, [this, x, w, b, kernel, stride, pad, cin, in_h, in_w, oh, ow,
                out, patches = std::move(patches)] {
      const Mat<S>& dy = node(out.id).grad;
      if (wants(b)) grad_of(b) += dy.colwise().sum();
      if (wants(w)) grad_of(w).noalias() += patches.transpose() * dy;
      if (!wants(x)) return;
      Mat<S> dp = dy * value(w).transpose();
      Mat<S>& dx = grad_of(x);
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const int row = i * ow + j;
          for (int kh = 0; kh < kernel; ++kh) {
            const int ih = i * stride - pad + kh;
            if (ih < 0 || ih >= in_h) continue;
            for (int kw = 0; kw < kernel; ++kw) {
              const int iw = j * stride - pad + kw;
              if (iw < 0 || iw >= in_w) continue;
              dx.row(ih * in_w + iw) +=
                  dp.row(row).segment((kh * kernel + kw) * cin, cin);
            }
          }
        }
      }
    });
    return {out, oh, ow};
  }

  // ---- recurrent -------------------------------------------------------------

  // GRU over rows, h0 = 0. Gate order (r, z, n); returns all hidden states
  // [T x H].
  Var gru_seq(Var x, Var w_ih, Var w_hh, Var b_ih, Var b_hh) {
    const Mat<S>& X = value(x);
    const int t_len = static_cast<int>(X.rows());
    const int h = static_cast<int>(value(w_hh).rows());
    check(value(w_ih).rows() == X.cols() && value(w_ih).cols() == 3 * h &&
              value(w_hh).cols() == 3 * h,
          "gru_seq weight shapes");

    Mat<S> y(t_len, h);
    Mat<S> rs(t_len, h), zs(t_len, h), ns(t_len, h), ghn(t_len, h);
    Eigen::Matrix<S, 1, Eigen::Dynamic> hprev =
        Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(h);
    for (int t = 0; t < t_len; ++t) {
      Eigen::Matrix<S, 1, Eigen::Dynamic> gi =
          X.row(t) * value(w_ih) + value(b_ih).row(0);
      Eigen::Matrix<S, 1, Eigen::Dynamic> gh =
          hprev * value(w_hh) + value(b_hh).row(0);
      auto sig = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
      for (int j = 0; j < h; ++j) {
        const S r = sig(gi(j) + gh(j));
        const S z = sig(gi(h + j) + gh(h + j));
        const S n = std::tanh(gi(2 * h + j) + r * gh(2 * h + j));
        rs(t, j) = r;
        zs(t, j) = z;
        ns(t, j) = n;
        ghn(t, j) = gh(2 * h + j);
        y(t, j) = (S(1) - z) * n + z * hprev(j);
      }
      hprev = y.row(t);
    }
    Var out = make(std::move(y), {x, w_ih, w_hh, b_ih, b_hh});
    defer(out, [this, x, w_ih, w_hh, b_ih, b_hh, t_len, h, out,
                rs = std::move(rs), zs = std::move(zs), ns = std::move(ns),
                ghn = std::move(ghn)] {
      const Mat<S>& dy = node(out.id).grad;
      const Mat<S>& y = *node(out.id).value;
      using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;
      Row dh = Row::Zero(h);
      Mat<S> dgi_all = Mat<S>::Zero(t_len, 3 * h);
      Mat<S> dgh_all = Mat<S>::Zero(t_len, 3 * h);
      for (int t = t_len - 1; t >= 0; --t) {
        dh += dy.row(t);
        Row hprev = t > 0 ? Row(y.row(t - 1)) : Row(Row::Zero(h));
        Row dz = dh.cwiseProduct(hprev - ns.row(t));
        Row dn = (dh.array() * (S(1) - zs.row(t).array())).matrix();
        Row dh_prev = dh.cwiseProduct(zs.row(t));
        Row dan =
            (dn.array() * (S(1) - ns.row(t).array() * ns.row(t).array()))
                .matrix();
        Row dr = dan.cwiseProduct(ghn.row(t));
        Row dghn = dan.cwiseProduct(rs.row(t));
        Row dar =
            (dr.array() * rs.row(t).array() * (S(1) - rs.row(t).array()))
                .matrix();
        Row daz =
            (dz.array() * zs.row(t).array() * (S(1) - zs.row(t).array()))
                .matrix();
        dgi_all.row(t).segment(0, h) = dar;
        dgi_all.row(t).segment(h, h) = daz;
        dgi_all.row(t).segment(2 * h, h) = dan;
        dgh_all.row(t).segment(0, h) = dar;
        dgh_all.row(t).segment(h, h) = daz;
        dgh_all.row(t).segment(2 * h, h) = dghn;
        dh = dh_prev + dgh_all.row(t) * value(w_hh).transpose();
      }
      if (wants(w_ih))
        grad_of(w_ih).noalias() += value(x).transpose() * dgi_all;
      if (wants(b_ih)) grad_of(b_ih) += dgi_all.colwise().sum();
      if (wants(b_hh)) grad_of(b_hh) += dgh_all.colwise().sum();
      if (wants(x)) grad_of(x).noalias() += dgi_all * value(w_ih).transpose();
      if (wants(w_hh)) {
        Mat<S>& dwh = grad_of(w_hh);
        for (int t = 1; t < t_len; ++t)
          dwh.noalias() += y.row(t - 1).transpose() * dgh_all.row(t);
      }
    });
    return out;
  }

  // LSTM over rows, h0 = c0 = 0. Gate order (i, f, g, o); single merged
  // bias. Returns all hidden states [T x H].
  Var lstm_seq(Var x, Var w_ih, Var w_hh, Var b) {
    const Mat<S>& X = value(x);
    const int t_len = static_cast<int>(X.rows());
    const int h = static_cast<int>(value(w_hh).rows());
    check(value(w_ih).rows() == X.cols() && value(w_ih).cols() == 4 * h &&
              value(w_hh).cols() == 4 * h,
          "lstm_seq weight shapes");

    Mat<S> y(t_len, h), cs(t_len, h);
    Mat<S> gates(t_len, 4 * h);  // post-activation (i, f, g, o)
    Eigen::Matrix<S, 1, Eigen::Dynamic> hprev =
        Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(h);
    Eigen::Matrix<S, 1, Eigen::Dynamic> cprev = hprev;
    auto sig = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
    for (int t = 0; t < t_len; ++t) {
      Eigen::Matrix<S, 1, Eigen::Dynamic> a =
          X.row(t) * value(w_ih) + hprev * value(w_hh) + value(b).row(0);
      for (int j = 0; j < h; ++j) {
        const S gi = sig(a(j));
        const S gf = sig(a(h + j));
        const S gg = std::tanh(a(2 * h + j));
        const S go = sig(a(3 * h + j));
        const S c = gf * cprev(j) + gi * gg;
        gates(t, j) = gi;
        gates(t, h + j) = gf;
        gates(t, 2 * h + j) = gg;
        gates(t, 3 * h + j) = go;
        cs(t, j) = c;
        y(t, j) = go * std::tanh(c);
      }
      hprev = y.row(t);
      cprev = cs.row(t);
    }
    Var out = make(std::move(y), {x, w_ih, w_hh, b});
    defer(out, [this, x, w_ih, w_hh, b, t_len, h, out, cs = std::move(cs),
                gates = std::move(gates)] {
      const Mat<S>& dy = node(out.id).grad;
      const Mat<S>& y = *node(out.id).value;
      using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;
      Row dh = Row::Zero(h), dc = Row::Zero(h);
      Mat<S> da_all = Mat<S>::Zero(t_len, 4 * h);
      for (int t = t_len - 1; t >= 0; --t) {
        dh += dy.row(t);
        Row cprev = t > 0 ? Row(cs.row(t - 1)) : Row(Row::Zero(h));
        Row tanh_c = cs.row(t).array().tanh().matrix();
        auto gi = gates.row(t).segment(0, h).array();
        auto gf = gates.row(t).segment(h, h).array();
        auto gg = gates.row(t).segment(2 * h, h).array();
        auto go = gates.row(t).segment(3 * h, h).array();
        Row dgo = (dh.array() * tanh_c.array()).matrix();
        dc.array() += dh.array() * go * (S(1) - tanh_c.array().square());
        Row dgi = (dc.array() * gg).matrix();
        Row dgg = (dc.array() * gi).matrix();
        Row dgf = (dc.array() * cprev.array()).matrix();
        Row dc_prev = (dc.array() * gf).matrix();
        da_all.row(t).segment(0, h) =
            (dgi.array() * gi * (S(1) - gi)).matrix();
        da_all.row(t).segment(h, h) =
            (dgf.array() * gf * (S(1) - gf)).matrix();
        da_all.row(t).segment(2 * h, h) =
            (dgg.array() * (S(1) - gg.square())).matrix();
        da_all.row(t).segment(3 * h, h) =
            (dgo.array() * go * (S(1) - go)).matrix();
        dh = da_all.row(t) * value(w_hh).transpose();
        dc = dc_prev;
      }
      if (wants(w_ih))
        grad_of(w_ih).noalias() += value(x).transpose() * da_all;
      if (wants(b)) grad_of(b) += da_all.colwise().sum();
      if (wants(x)) grad_of(x).noalias() += da_all * value(w_ih).transpose();
      if (wants(w_hh)) {
        Mat<S>& dwh = grad_of(w_hh);
        for (int t = 1; t < t_len; ++t)
          dwh.noalias() += y.row(t - 1).transpose() * da_all.row(t);
      }
    });
    return out;
  }

  // ---- reductions and losses --------------------------------------------------

  Var sum_all(Var x) {
    Mat<S> y(1, 1);
    y(0, 0) = value(x).sum();
    Var out = make(std::move(y), {x});
    defer(out, [this, x, out] {
      if (wants(x))
        grad_of(x).array() += node(out.id).grad(0, 0);
    });
    return out;
  }

  Var row_mean(Var x) {
    const S inv = S(1) / static_cast<S>(value(x).rows());
    Var out = make(Mat<S>(value(x).colwise().mean()), {x});
    defer(out, [this, x, inv, out] {
      if (wants(x))
        grad_of(x) += node(out.id).grad.replicate(value(x).rows(), 1) * inv;
    });
    return out;
  }

  // Mean absolute difference over all entries; the L1 reconstruction loss.
  Var mean_abs_diff(Var a, Var b) {
    check(same_shape(a, b), "mean_abs_diff shape mismatch");
    const S inv = S(1) / static_cast<S>(value(a).size());
    Mat<S> y(1, 1);
    y(0, 0) = (value(a) - value(b)).cwiseAbs().sum() * inv;
    Var out = make(std::move(y), {a, b});
    defer(out, [this, a, b, inv, out] {
      const S g = node(out.id).grad(0, 0) * inv;
      Mat<S> s = (value(a) - value(b))
                     .unaryExpr([](S v) {
                       return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
                     });
      if (wants(a)) grad_of(a) += s * g;
      if (wants(b)) grad_of(b) -= s * g;
    });
    return out;
  }

  // Softmax cross-entropy of a single [1 x K] logit row against a class id.
  Var cross_entropy_logits(Var logits, int label) {
    const Mat<S>& L = value(logits);
    check(L.rows() == 1, "cross_entropy_logits expects one logit row");
    check(label >= 0 && label < L.cols(), "label out of range");
    const S m = L.row(0).maxCoeff();
    Mat<S> p = (L.array() - m).exp().matrix();
    const S z = p.sum();
    p /= z;
    Mat<S> y(1, 1);
    y(0, 0) = std::log(z) + m - L(0, label);
    Var out = make(std::move(y), {logits});
    defer(out, [this, logits, label, out, p = std::move(p)] {
      if (!wants(logits)) return;
      const S g = node(out.id).grad(0, 0);
      Mat<S> d = p * g;
      d(0, label) -= g;
      grad_of(logits) += d;
    });
    return out;
  }

  // ---- engine ------------------------------------------------------------------

  void backward(Var loss) {
    Node& ln = node(loss.id);
    check(ln.value->rows() == 1 && ln.value->cols() == 1,
          "backward() needs a scalar loss");
    if (!ln.requires_grad) return;
    ln.grad = Mat<S>::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward();
      if (n.param != nullptr && n.param->trainable) {
        auto [it, fresh] = param_grads_.try_emplace(n.param);
        if (fresh)
          it->second = n.grad;
        else
          it->second += n.grad;
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int id = -1;
    Mat<S> owned;
    const Mat<S>* value = nullptr;
    Mat<S> grad;
    bool requires_grad = false;
    const Parameter<S>* param = nullptr;
    std::function<void()> backward;
  };

  Node& push() {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.id = static_cast<int>(nodes_.size()) - 1;
    return n;
  }

  Node& node(int id) {
    check(id >= 0 && id < static_cast<int>(nodes_.size()), "bad var id");
    return nodes_[id];
  }
  const Node& node(int id) const {
    check(id >= 0 && id < static_cast<int>(nodes_.size()), "bad var id");
    return nodes_[id];
  }

  Var make(Mat<S> value, const std::vector<Var>& inputs) {
    Node& n = push();
    n.owned = std::move(value);
    n.value = &n.owned;
    for (Var in : inputs)
      n.requires_grad = n.requires_grad || node(in.id).requires_grad;
    return Var{n.id};
  }

  template <class F>
  void defer(Var out, F&& f) {
    Node& n = node(out.id);
    if (n.requires_grad) n.backward = std::forward<F>(f);
  }

  bool wants(Var v) { return node(v.id).requires_grad; }

  Mat<S>& grad_of(Var v) {
    Node& n = node(v.id);
    if (n.grad.size() == 0)
      n.grad = Mat<S>::Zero(n.value->rows(), n.value->cols());
    return n.grad;
  }

  bool same_shape(Var a, Var b) const {
    return value(a).rows() == value(b).rows() &&
           value(a).cols() == value(b).cols();
  }

  static void check(bool ok, const char* msg) {
    if (!ok) throw DataError(std::string("graph: ") + msg);
  }

  bool training_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<S>*, Var> param_vars_;
  std::vector<int> param_leaves_;
  std::unordered_map<const Parameter<S>*, Mat<S>> param_grads_;
  std::vector<BnUpdate> bn_updates_;
};

}  // namespace psdn::ad
