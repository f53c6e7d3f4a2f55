#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fpstain/errors.hpp"

// Reverse-mode differentiation over CHW tensors. A Graph records every op as
// a node holding its value and a closure that pushes the node's gradient to
// its parents. Graphs are single-use and single-threaded; build one per
// sample and reduce parameter gradients afterwards.

namespace fpstain::nn {

template <typename S>
using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense channel-major tensor (channel, row, col).
template <typename S>
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  Vec<S> v;

  Tensor() = default;
  Tensor(int channels, int height, int width)
      : c(channels), h(height), w(width), v(Vec<S>::Zero(static_cast<Eigen::Index>(channels) * height * width)) {}

  static Tensor scalar(S value) {
    Tensor t(1, 1, 1);
    t.v[0] = value;
    return t;
  }

  Eigen::Index size() const { return v.size(); }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }
  S& operator()(int ch, int y, int x) { return v[(static_cast<Eigen::Index>(ch) * h + y) * w + x]; }
  S operator()(int ch, int y, int x) const { return v[(static_cast<Eigen::Index>(ch) * h + y) * w + x]; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  /// channels x (h*w) row-major view.
  Eigen::Map<RowMatrix<S>> matrix() { return {v.data(), c, plane()}; }
  Eigen::Map<const RowMatrix<S>> matrix() const { return {v.data(), c, plane()}; }
  auto channel(int ch) { return v.segment(ch * plane(), plane()); }
  auto channel(int ch) const { return v.segment(ch * plane(), plane()); }
};

template <typename S>
class Graph {
 public:
  using Var = int;

  Graph() = default;
  // Closures hold `this`, so a graph stays where it was built.
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<S> t) { return push(std::move(t), false, nullptr); }
  Var variable(Tensor<S> t) { return push(std::move(t), true, nullptr); }

  const Tensor<S>& value(Var v) const { return nodes_[v].value; }
  const Tensor<S>& grad(Var v) const { return nodes_[v].grad; }
  bool requires_grad(Var v) const { return nodes_[v].needs_grad; }
  S scalar(Var v) const { return nodes_[v].value.v[0]; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root) = seed everywhere and runs every closure in reverse order.
  void backward(Var root, S seed = S(1)) {
    for (auto& node : nodes_)
      if (node.needs_grad) node.grad = Tensor<S>(node.value.c, node.value.h, node.value.w);
    if (!nodes_[root].needs_grad) return;
    nodes_[root].grad.v.setConstant(seed);
    for (Var i = root; i >= 0; --i)
      if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back();
  }

  // ---- convolution and normalization ---------------------------------------

  /// weight holds out x (in*k*k) values in (o, c, ky, kx) order; bias holds out.
  Var conv2d(Var x, Var weight, Var bias, int kernel, int stride, int pad) {
    const Tensor<S>& in = value(x);
    const int out_c = static_cast<int>(value(bias).size());
    const Eigen::Index kdim = static_cast<Eigen::Index>(in.c) * kernel * kernel;
    if (value(weight).size() != out_c * kdim) throw ShapeError("conv2d weight does not match input channels");
    const int oh = (in.h + 2 * pad - kernel) / stride + 1;
    const int ow = (in.w + 2 * pad - kernel) / stride + 1;
    if (oh < 1 || ow < 1) throw ShapeError("conv2d input is too small for its kernel");
    auto cols = std::make_shared<RowMatrix<S>>(kdim, static_cast<Eigen::Index>(oh) * ow);
    im2col(in, kernel, stride, pad, oh, ow, *cols);
    Tensor<S> out(out_c, oh, ow);
    Eigen::Map<const RowMatrix<S>> wmat(value(weight).v.data(), out_c, kdim);
    out.matrix().noalias() = wmat * (*cols);
    out.matrix().colwise() += value(bias).v.matrix();
    const bool needs = any_grad({x, weight, bias});
    return push(std::move(out), needs, [this, x, weight, bias, kernel, stride, pad, oh, ow, cols, out_c, kdim] {
      const Var self = current_;
      Eigen::Map<const RowMatrix<S>> gout(nodes_[self].grad.v.data(), out_c, static_cast<Eigen::Index>(oh) * ow);
      if (nodes_[weight].needs_grad) {
        Eigen::Map<RowMatrix<S>> gw(nodes_[weight].grad.v.data(), out_c, kdim);
        gw.noalias() += gout * cols->transpose();
      }
      if (nodes_[bias].needs_grad) nodes_[bias].grad.v.matrix() += gout.rowwise().sum();
      if (nodes_[x].needs_grad) {
        Eigen::Map<const RowMatrix<S>> wmat(nodes_[weight].value.v.data(), out_c, kdim);
        RowMatrix<S> gcols = wmat.transpose() * gout;
        col2im(gcols, kernel, stride, pad, oh, ow, nodes_[x].grad);
      }
    });
  }

  /// Per-channel (x - mean) / sqrt(var + eps), biased variance, no affine.
  Var instance_norm(Var x, S eps = S(1e-5)) {
    const Tensor<S>& in = value(x);
    Tensor<S> out(in.c, in.h, in.w);
    auto inv_std = std::make_shared<Vec<S>>(in.c);
    const S n = static_cast<S>(in.plane());
    for (int ch = 0; ch < in.c; ++ch) {
      const auto seg = in.channel(ch);
      const S mean = seg.sum() / n;
      const S var = (seg - mean).square().sum() / n;
      (*inv_std)[ch] = S(1) / std::sqrt(var + eps);
      out.channel(ch) = (seg - mean) * (*inv_std)[ch];
    }
    return push(std::move(out), requires_grad(x), [this, x, inv_std] {
      const Var self = current_;
      const Tensor<S>& y = nodes_[self].value;
      const Tensor<S>& gy = nodes_[self].grad;
      const S n = static_cast<S>(y.plane());
      for (int ch = 0; ch < y.c; ++ch) {
        const auto yc = y.channel(ch);
        const auto gc = gy.channel(ch);
        const S mean_g = gc.sum() / n;
        const S mean_gy = (gc * yc).sum() / n;
        nodes_[x].grad.channel(ch) += (*inv_std)[ch] * (gc - mean_g - yc * mean_gy);
      }
    });
  }

  // ---- elementwise ---------------------------------------------------------

  Var relu(Var x) {
    Tensor<S> out = value(x);
    out.v = out.v.max(S(0));
    return push(std::move(out), requires_grad(x), [this, x] {
      const Var self = current_;
      nodes_[x].grad.v += (nodes_[x].value.v > S(0)).select(nodes_[self].grad.v, S(0));
    });
  }

  Var leaky_relu(Var x, S slope) {
    Tensor<S> out = value(x);
    out.v = (out.v > S(0)).select(out.v, out.v * slope);
    return push(std::move(out), requires_grad(x), [this, x, slope] {
      const Var self = current_;
      const auto& g = nodes_[self].grad.v;
      nodes_[x].grad.v += (nodes_[x].value.v > S(0)).select(g, g * slope);
    });
  }

  Var tanh(Var x) {
    Tensor<S> out = value(x);
    out.v = out.v.tanh();
    return push(std::move(out), requires_grad(x), [this, x] {
      const Var self = current_;
      const auto& y = nodes_[self].value.v;
      nodes_[x].grad.v += nodes_[self].grad.v * (S(1) - y * y);
    });
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor<S> out = value(a);
    out.v += value(b).v;
    return push(std::move(out), any_grad({a, b}), [this, a, b] {
      const Var self = current_;
      if (nodes_[a].needs_grad) nodes_[a].grad.v += nodes_[self].grad.v;
      if (nodes_[b].needs_grad) nodes_[b].grad.v += nodes_[self].grad.v;
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor<S> out = value(a);
    out.v -= value(b).v;
    return push(std::move(out), any_grad({a, b}), [this, a, b] {
      const Var self = current_;
      if (nodes_[a].needs_grad) nodes_[a].grad.v += nodes_[self].grad.v;
      if (nodes_[b].needs_grad) nodes_[b].grad.v -= nodes_[self].grad.v;
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor<S> out = value(a);
    out.v *= value(b).v;
    return push(std::move(out), any_grad({a, b}), [this, a, b] {
      const Var self = current_;
      const auto& g = nodes_[self].grad.v;
      if (nodes_[a].needs_grad) nodes_[a].grad.v += g * nodes_[b].value.v;
      if (nodes_[b].needs_grad) nodes_[b].grad.v += g * nodes_[a].value.v;
    });
  }

  Var div(Var a, Var b) {
    check_same(a, b, "div");
    Tensor<S> out = value(a);
    out.v /= value(b).v;
    return push(std::move(out), any_grad({a, b}), [this, a, b] {
      const Var self = current_;
      const auto& g = nodes_[self].grad.v;
      const auto& bv = nodes_[b].value.v;
      if (nodes_[a].needs_grad) nodes_[a].grad.v += g / bv;
      if (nodes_[b].needs_grad) nodes_[b].grad.v -= g * nodes_[self].value.v / bv;
    });
  }

  /// scale * x + shift
  Var affine(Var x, S scale, S shift) {
    Tensor<S> out = value(x);
    out.v = out.v * scale + shift;
    return push(std::move(out), requires_grad(x), [this, x, scale] {
      const Var self = current_;
      nodes_[x].grad.v += nodes_[self].grad.v * scale;
    });
  }

  /// x^p elementwise for x >= 0; the derivative at exactly 0 is taken as 0.
  Var pow(Var x, S p) {
    Tensor<S> out = value(x);
    out.v = out.v.pow(p);
    return push(std::move(out), requires_grad(x), [this, x, p] {
      const Var self = current_;
      const auto& xv = nodes_[x].value.v;
      const auto& yv = nodes_[self].value.v;
      nodes_[x].grad.v += (xv > S(0)).select(nodes_[self].grad.v * p * yv / xv, S(0));
    });
  }

  // ---- reshaping -----------------------------------------------------------

  /// Nearest-neighbour 2x upsampling cropped to out_h x out_w.
  Var upsample2x(Var x, int out_h, int out_w) {
    const Tensor<S>& in = value(x);
    if ((out_h + 1) / 2 > in.h || (out_w + 1) / 2 > in.w) throw ShapeError("upsample target too large");
    Tensor<S> out(in.c, out_h, out_w);
    for (int ch = 0; ch < in.c; ++ch)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) out(ch, y, xx) = in(ch, y / 2, xx / 2);
    return push(std::move(out), requires_grad(x), [this, x] {
      const Var self = current_;
      const Tensor<S>& g = nodes_[self].grad;
      Tensor<S>& gx = nodes_[x].grad;
      for (int ch = 0; ch < g.c; ++ch)
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx) gx(ch, y / 2, xx / 2) += g(ch, y, xx);
    });
  }

  Var channel(Var x, int ch) {
    const Tensor<S>& in = value(x);
    if (ch < 0 || ch >= in.c) throw ShapeError("channel index out of range");
    Tensor<S> out(1, in.h, in.w);
    out.v = in.channel(ch);
    return push(std::move(out), requires_grad(x), [this, x, ch] {
      const Var self = current_;
      nodes_[x].grad.channel(ch) += nodes_[self].grad.v;
    });
  }

  /// Per-channel separable 'valid' filtering with the same taps on both axes.
  Var filter_valid(Var x, std::vector<S> taps) {
    const Tensor<S>& in = value(x);
    const int k = static_cast<int>(taps.size());
    const int oh = in.h - k + 1;
    const int ow = in.w - k + 1;
    if (oh < 1 || ow < 1) throw SizeError("image is smaller than the filter window");
    Tensor<S> out(in.c, oh, ow);
    for (int ch = 0; ch < in.c; ++ch) {
      RowMatrix<S> horiz = RowMatrix<S>::Zero(in.h, ow);
      Eigen::Map<const RowMatrix<S>> src(in.v.data() + ch * in.plane(), in.h, in.w);
      for (int i = 0; i < k; ++i) horiz += taps[i] * src.middleCols(i, ow);
      Eigen::Map<RowMatrix<S>> dst(out.v.data() + ch * out.plane(), oh, ow);
      dst.setZero();
      for (int i = 0; i < k; ++i) dst += taps[i] * horiz.middleRows(i, oh);
    }
    return push(std::move(out), requires_grad(x), [this, x, taps = std::move(taps)] {
      const Var self = current_;
      const Tensor<S>& g = nodes_[self].grad;
      Tensor<S>& gx = nodes_[x].grad;
      const int k = static_cast<int>(taps.size());
      for (int ch = 0; ch < g.c; ++ch) {
        Eigen::Map<const RowMatrix<S>> gsrc(g.v.data() + ch * g.plane(), g.h, g.w);
        RowMatrix<S> vert = RowMatrix<S>::Zero(gx.h, g.w);
        for (int i = 0; i < k; ++i) vert.middleRows(i, g.h) += taps[i] * gsrc;
        Eigen::Map<RowMatrix<S>> dst(gx.v.data() + ch * gx.plane(), gx.h, gx.w);
        for (int i = 0; i < k; ++i) dst.middleCols(i, g.w) += taps[i] * vert;
      }
    });
  }

  /// 2x2 box decimation, ceil(n/2) per axis with partial blocks averaged.
  Var avg_pool2(Var x) {
    const Tensor<S>& in = value(x);
    const int oh = (in.h + 1) / 2;
    const int ow = (in.w + 1) / 2;
    Tensor<S> out(in.c, oh, ow);
    for (int ch = 0; ch < in.c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          S sum = 0;
          int count = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              if (2 * y + dy < in.h && 2 * xx + dx < in.w) {
                sum += in(ch, 2 * y + dy, 2 * xx + dx);
                ++count;
              }
          out(ch, y, xx) = sum / static_cast<S>(count);
        }
    return push(std::move(out), requires_grad(x), [this, x] {
      const Var self = current_;
      const Tensor<S>& g = nodes_[self].grad;
      Tensor<S>& gx = nodes_[x].grad;
      for (int ch = 0; ch < g.c; ++ch)
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx) {
            int count = 0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                if (2 * y + dy < gx.h && 2 * xx + dx < gx.w) ++count;
            const S share = g(ch, y, xx) / static_cast<S>(count);
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                if (2 * y + dy < gx.h && 2 * xx + dx < gx.w) gx(ch, 2 * y + dy, 2 * xx + dx) += share;
          }
    });
  }

  // ---- reductions ----------------------------------------------------------

  Var mean(Var x) {
    const S n = static_cast<S>(value(x).size());
    Tensor<S> out = Tensor<S>::scalar(value(x).v.sum() / n);
    return push(std::move(out), requires_grad(x), [this, x, n] {
      const Var self = current_;
      nodes_[x].grad.v += nodes_[self].grad.v[0] / n;
    });
  }

  /// mean((x - target)^2)
  Var mse_to(Var x, S target) {
    const S n = static_cast<S>(value(x).size());
    Tensor<S> out = Tensor<S>::scalar((value(x).v - target).square().sum() / n);
    return push(std::move(out), requires_grad(x), [this, x, target, n] {
      const Var self = current_;
      nodes_[x].grad.v += (S(2) * nodes_[self].grad.v[0] / n) * (nodes_[x].value.v - target);
    });
  }

  /// mean(|a - b|), subgradient 0 where a == b.
  Var l1(Var a, Var b) {
    check_same(a, b, "l1");
    const S n = static_cast<S>(value(a).size());
    Tensor<S> out = Tensor<S>::scalar((value(a).v - value(b).v).abs().sum() / n);
    return push(std::move(out), any_grad({a, b}), [this, a, b, n] {
      const Var self = current_;
      const Vec<S> sign = (nodes_[a].value.v - nodes_[b].value.v).sign() * (nodes_[self].grad.v[0] / n);
      if (nodes_[a].needs_grad) nodes_[a].grad.v += sign;
      if (nodes_[b].needs_grad) nodes_[b].grad.v -= sign;
    });
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  Var push(Tensor<S> value, bool needs_grad, std::function<void()> back) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad && back) {
      const Var self = static_cast<Var>(nodes_.size());
      node.back = [this, self, fn = std::move(back)] {
        current_ = self;
        fn();
      };
    }
    nodes_.push_back(std::move(node));
    return static_cast<Var>(nodes_.size() - 1);
  }

  bool any_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars)
      if (nodes_[v].needs_grad) return true;
    return false;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b))) throw ShapeError(std::string(op) + ": operand shapes differ");
  }

  static void im2col(const Tensor<S>& in, int k, int stride, int pad, int oh, int ow, RowMatrix<S>& cols) {
    for (int ch = 0; ch < in.c; ++ch)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          S* row = cols.row((ch * k + ky) * k + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            S* dst = row + static_cast<Eigen::Index>(oy) * ow;
            if (iy < 0 || iy >= in.h) {
              std::fill(dst, dst + ow, S(0));
              continue;
            }
            const S* src = in.v.data() + (static_cast<Eigen::Index>(ch) * in.h + iy) * in.w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < in.w) ? src[ix] : S(0);
            }
          }
        }
  }

  static void col2im(const RowMatrix<S>& cols, int k, int stride, int pad, int oh, int ow, Tensor<S>& gx) {
    for (int ch = 0; ch < gx.c; ++ch)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const S* row = cols.row((ch * k + ky) * k + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= gx.h) continue;
            S* dst = gx.v.data() + (static_cast<Eigen::Index>(ch) * gx.h + iy) * gx.w;
            const S* src = row + static_cast<Eigen::Index>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < gx.w) dst[ix] += src[ox];
            }
          }
        }
  }

  std::vector<Node> nodes_;
  Var current_ = -1;
};

}  // namespace fpstain::nn
