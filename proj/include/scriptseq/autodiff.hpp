#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
// Every op appends a node holding its value and a closure that pushes the
// node's gradient back into its inputs; backward() replays the tape in
// reverse. Parameters enter as leaves that read from and accumulate into
// caller-owned storage, so one tape per sample is cheap to build.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "scriptseq/rng.hpp"

namespace scriptseq::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using Backward = std::function<void(Tape&, const Mat& grad)>;

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }

  // Leaf reading `value` in place. With a null `grad` the leaf is constant.
  Var leaf(const Mat& value, Mat* grad) {
    Node n;
    n.external = &value;
    n.external_grad = grad;
    n.requires_grad = grad != nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var push(Mat value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool any_requires_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (v.valid() && requires_grad(v)) return true;
    return false;
  }

  // Gradient buffer of `v`, zero-initialized on first touch.
  Mat& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.external_grad) return *n.external_grad;
    if (n.grad.size() == 0) {
      const Mat& val = value(v);
      n.grad = Mat::Zero(val.rows(), val.cols());
      n.touched = true;
    }
    return n.grad;
  }

  // Adds `g` to the gradient of `v` before backward() runs.
  void seed(Var v, const Mat& g) { grad(v) += g; }
  void seed(Var v, T g) { grad(v).array() += g; }

  void backward() {
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || !n.touched) continue;
      n.backward(*this, n.grad);
    }
  }

  void backward(Var root) {
    seed(root, T(1));
    backward();
  }

  // Disables gradient bookkeeping for subsequent ops.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat* external_grad = nullptr;
    Mat grad;
    bool requires_grad = false;
    bool touched = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

// Dropout randomness for one forward pass; null means evaluation mode.
struct DropoutContext {
  double rate = 0.0;
  Rng* rng = nullptr;
};

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const bool rg = t.any_requires_grad({a, b});
  return t.push(t.value(a) + t.value(b), rg, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) += g;
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T c) {
  return t.push(t.value(a) * c, t.requires_grad(a), [a, c](Tape<T>& t, const Matrix<T>& g) {
    t.grad(a) += g * c;
  });
}

// a (n x k) * b (k x m)
template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const bool rg = t.any_requires_grad({a, b});
  Matrix<T> out = t.value(a) * t.value(b);
  return t.push(std::move(out), rg, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
  });
}

// a (n x k) * b^T, b (m x k)
template <typename T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  const bool rg = t.any_requires_grad({a, b});
  Matrix<T> out = t.value(a) * t.value(b).transpose();
  return t.push(std::move(out), rg, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b);
    if (t.requires_grad(b)) t.grad(b).noalias() += g.transpose() * t.value(a);
  });
}

// x (n x k) * w (k x m) + bias (1 x m), bias broadcast over rows.
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var bias) {
  const bool rg = t.any_requires_grad({x, w, bias});
  Matrix<T> out = t.value(x) * t.value(w);
  out.rowwise() += t.value(bias).row(0);
  return t.push(std::move(out), rg, [x, w, bias](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(x)) t.grad(x).noalias() += g * t.value(w).transpose();
    if (t.requires_grad(w)) t.grad(w).noalias() += t.value(x).transpose() * g;
    if (t.requires_grad(bias)) t.grad(bias) += g.colwise().sum();
  });
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const Matrix<T>& xv = t.value(x);
  const auto rows = xv.rows();
  const auto d = xv.cols();
  Matrix<T> xhat(rows, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix<T> out = (xhat.array().rowwise() * t.value(gamma).row(0).array()).matrix();
  out.rowwise() += t.value(beta).row(0);
  const bool rg = t.any_requires_grad({x, gamma, beta});
  return t.push(std::move(out), rg,
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape<T>& t, const Matrix<T>& g) {
                  if (t.requires_grad(gamma))
                    t.grad(gamma) += (g.array() * xhat.array()).colwise().sum().matrix();
                  if (t.requires_grad(beta)) t.grad(beta) += g.colwise().sum();
                  if (!t.requires_grad(x)) return;
                  const T d = static_cast<T>(xhat.cols());
                  Matrix<T> dxhat =
                      (g.array().rowwise() * t.value(gamma).row(0).array()).matrix();
                  Matrix<T>& gx = t.grad(x);
                  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    const T sum_d = dxhat.row(r).sum();
                    const T sum_dx = dxhat.row(r).dot(xhat.row(r));
                    gx.row(r).array() += inv_std(r) / d *
                                         (d * dxhat.row(r).array() - sum_d -
                                          xhat.row(r).array() * sum_dx);
                  }
                });
}

// tanh approximation of GELU
template <typename T>
Var gelu(Tape<T>& t, Var x) {
  constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k1 = T(0.044715);
  const Matrix<T>& xv = t.value(x);
  Matrix<T> inner = (k0 * (xv.array() + k1 * xv.array().cube())).tanh().matrix();
  Matrix<T> out = (T(0.5) * xv.array() * (T(1) + inner.array())).matrix();
  return t.push(std::move(out), t.requires_grad(x),
                [x, inner = std::move(inner)](Tape<T>& t, const Matrix<T>& g) {
                  const T k0 = T(0.7978845608028654);
                  const T k1 = T(0.044715);
                  const auto xa = t.value(x).array();
                  const auto th = inner.array();
                  const auto dinner = k0 * (T(1) + T(3) * k1 * xa.square());
                  const auto d = T(0.5) * (T(1) + th) +
                                 T(0.5) * xa * (T(1) - th.square()) * dinner;
                  t.grad(x).array() += g.array() * d;
                });
}

// Rows of `table` selected by `ids`.
template <typename T>
Var embedding(Tape<T>& t, Var table, std::vector<int> ids) {
  const Matrix<T>& tv = t.value(table);
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(i) = tv.row(ids[i]);
  return t.push(std::move(out), t.requires_grad(table),
                [table, ids = std::move(ids)](Tape<T>& t, const Matrix<T>& g) {
                  Matrix<T>& gt = t.grad(table);
                  for (std::size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(i);
                });
}

template <typename T>
Var dropout(Tape<T>& t, Var x, const DropoutContext* ctx) {
  if (!ctx || !ctx->rng || ctx->rate <= 0.0) return x;
  const Matrix<T>& xv = t.value(x);
  const T keep_scale = T(1) / T(1.0 - ctx->rate);
  Matrix<T> mask(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = uniform01(*ctx->rng) < ctx->rate ? T(0) : keep_scale;
  Matrix<T> out = xv.cwiseProduct(mask);
  return t.push(std::move(out), t.requires_grad(x),
                [x, mask = std::move(mask)](Tape<T>& t, const Matrix<T>& g) {
                  t.grad(x) += g.cwiseProduct(mask);
                });
}

// Multi-head scaled dot-product attention over already-projected q (Lq x d),
// k and v (Lk x d). With `causal`, query i sees keys 0..i only.
template <typename T>
Var attention(Tape<T>& t, Var q, Var k, Var v, int heads, bool causal) {
  const Matrix<T>& qv = t.value(q);
  const Matrix<T>& kv = t.value(k);
  const Matrix<T>& vv = t.value(v);
  const auto lq = qv.rows();
  const auto lk = kv.rows();
  const auto d = qv.cols();
  const auto dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));

  std::vector<Matrix<T>> probs(static_cast<std::size_t>(heads));
  Matrix<T> out(lq, d);
  for (int h = 0; h < heads; ++h) {
    Matrix<T> s = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose() * sc;
    for (Eigen::Index i = 0; i < lq; ++i) {
      const Eigen::Index visible = causal ? std::min<Eigen::Index>(i + 1, lk) : lk;
      const T mx = s.row(i).head(visible).maxCoeff();
      T z = 0;
      for (Eigen::Index j = 0; j < visible; ++j) {
        s(i, j) = std::exp(s(i, j) - mx);
        z += s(i, j);
      }
      s.row(i).head(visible) /= z;
      for (Eigen::Index j = visible; j < lk; ++j) s(i, j) = 0;
    }
    out.middleCols(h * dh, dh).noalias() = s * vv.middleCols(h * dh, dh);
    probs[h] = std::move(s);
  }

  const bool rg = t.any_requires_grad({q, k, v});
  return t.push(std::move(out), rg,
                [q, k, v, heads, dh, sc, probs = std::move(probs)](Tape<T>& t,
                                                                    const Matrix<T>& g) {
                  const bool gq = t.requires_grad(q), gk = t.requires_grad(k),
                             gv = t.requires_grad(v);
                  for (int h = 0; h < heads; ++h) {
                    const Matrix<T>& p = probs[h];
                    const auto go = g.middleCols(h * dh, dh);
                    const auto vh = t.value(v).middleCols(h * dh, dh);
                    if (gv) t.grad(v).middleCols(h * dh, dh).noalias() += p.transpose() * go;
                    if (!gq && !gk) continue;
                    Matrix<T> dp = go * vh.transpose();
                    Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot =
                        (dp.array() * p.array()).rowwise().sum();
                    Matrix<T> ds =
                        (p.array() * (dp.array().colwise() - row_dot.array())).matrix() * sc;
                    if (gq)
                      t.grad(q).middleCols(h * dh, dh).noalias() +=
                          ds * t.value(k).middleCols(h * dh, dh);
                    if (gk)
                      t.grad(k).middleCols(h * dh, dh).noalias() +=
                          ds.transpose() * t.value(q).middleCols(h * dh, dh);
                  }
                });
}

template <typename T>
Var log_softmax(Tape<T>& t, Var x) {
  const Matrix<T>& xv = t.value(x);
  Matrix<T> out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mx = xv.row(r).maxCoeff();
    const T lse = mx + std::log((xv.row(r).array() - mx).exp().sum());
    out.row(r) = xv.row(r).array() - lse;
  }
  const bool rg = t.requires_grad(x);
  const Var self{static_cast<int>(t.size())};
  return t.push(std::move(out), rg, [x, self](Tape<T>& t, const Matrix<T>& g) {
    const Matrix<T>& y = t.value(self);
    Eigen::Matrix<T, Eigen::Dynamic, 1> gsum = g.rowwise().sum();
    t.grad(x) += g - (y.array().exp().colwise() * gsum.array()).matrix();
  });
}

// Softmax of a single row vector (1 x m).
template <typename T>
Var softmax(Tape<T>& t, Var x) {
  const Matrix<T>& xv = t.value(x);
  Matrix<T> out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const auto e = (xv.row(r).array() - xv.row(r).maxCoeff()).exp();
    out.row(r) = e / e.sum();
  }
  const Var self{static_cast<int>(t.size())};
  return t.push(std::move(out), t.requires_grad(x), [x, self](Tape<T>& t, const Matrix<T>& g) {
    const Matrix<T>& s = t.value(self);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dot = (g.array() * s.array()).rowwise().sum();
    t.grad(x) += (s.array() * (g.array().colwise() - dot.array())).matrix();
  });
}

// Column vector (n x 1) of x[r][cols[r]].
template <typename T>
Var pick(Tape<T>& t, Var x, std::vector<int> cols) {
  const Matrix<T>& xv = t.value(x);
  Matrix<T> out(static_cast<Eigen::Index>(cols.size()), 1);
  for (std::size_t r = 0; r < cols.size(); ++r) out(r, 0) = xv(r, cols[r]);
  return t.push(std::move(out), t.requires_grad(x),
                [x, cols = std::move(cols)](Tape<T>& t, const Matrix<T>& g) {
                  Matrix<T>& gx = t.grad(x);
                  for (std::size_t r = 0; r < cols.size(); ++r) gx(r, cols[r]) += g(r, 0);
                });
}

// 1 x 1 sum of all entries.
template <typename T>
Var sum(Tape<T>& t, Var x) {
  Matrix<T> out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.push(std::move(out), t.requires_grad(x), [x](Tape<T>& t, const Matrix<T>& g) {
    t.grad(x).array() += g(0, 0);
  });
}

template <typename T>
Var row(Tape<T>& t, Var x, Eigen::Index r) {
  Matrix<T> out = t.value(x).row(r);
  return t.push(std::move(out), t.requires_grad(x), [x, r](Tape<T>& t, const Matrix<T>& g) {
    t.grad(x).row(r) += g.row(0);
  });
}

template <typename T>
Var element(Tape<T>& t, Var x, Eigen::Index r, Eigen::Index c) {
  Matrix<T> out(1, 1);
  out(0, 0) = t.value(x)(r, c);
  return t.push(std::move(out), t.requires_grad(x), [x, r, c](Tape<T>& t, const Matrix<T>& g) {
    t.grad(x)(r, c) += g(0, 0);
  });
}

// Concatenates 1 x 1 nodes into a 1 x n row.
template <typename T>
Var stack_scalars(Tape<T>& t, std::vector<Var> xs) {
  Matrix<T> out(1, static_cast<Eigen::Index>(xs.size()));
  bool rg = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out(0, i) = t.value(xs[i])(0, 0);
    rg = rg || t.requires_grad(xs[i]);
  }
  return t.push(std::move(out), rg, [xs = std::move(xs)](Tape<T>& t, const Matrix<T>& g) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (t.requires_grad(xs[i])) t.grad(xs[i])(0, 0) += g(0, i);
  });
}

// Scalar function of a 1 x n row with a caller-supplied gradient:
// fn(values) -> {f, df/dvalues}.
template <typename T>
Var scalar_fn(Tape<T>& t, Var x,
              const std::function<std::pair<double, std::vector<double>>(
                  const std::vector<double>&)>& fn) {
  const Matrix<T>& xv = t.value(x);
  std::vector<double> in(xv.data(), xv.data() + xv.size());
  auto [f, df] = fn(in);
  Matrix<T> out(1, 1);
  out(0, 0) = static_cast<T>(f);
  return t.push(std::move(out), t.requires_grad(x),
                [x, df = std::move(df)](Tape<T>& t, const Matrix<T>& g) {
                  Matrix<T>& gx = t.grad(x);
                  for (Eigen::Index i = 0; i < gx.size(); ++i)
                    gx.data()[i] += g(0, 0) * static_cast<T>(df[i]);
                });
}

}  // namespace scriptseq::ad
