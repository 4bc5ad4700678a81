#pragma once

#include <string>

#include "s2tx/core/layers.hpp"
#include "s2tx/ssm/selective_scan.hpp"

namespace s2tx {

struct MambaSpec {
  Index d_model = 64;
  Index state_dim = 16;
  Index expand = 2;
  Index conv_kernel = 4;

  Index inner() const { return expand * d_model; }
  Index dt_rank() const { return (d_model + 15) / 16; }
};

/// Causal depthwise 1-D convolution along the sequence axis.
/// weight is (channels, kernel); output t reads inputs t-kernel+1 .. t.
template <class T>
struct CausalConv {
  using Scalar = T;

  Param<T> weight;
  Param<T> bias;

  CausalConv() = default;
  CausalConv(Index channels, Index kernel, Rng& rng) : weight(channels, kernel), bias(1, channels) {
    const T bound = T(1) / std::sqrt(static_cast<T>(kernel));
    fill_uniform(weight.value, bound, rng);
    fill_uniform(bias.value, bound, rng);
  }

  Index kernel() const { return weight.value.cols(); }

  Matrix<T> forward(const Matrix<T>& x) const {
    const Index len = x.rows();
    const Index kw = kernel();
    Matrix<T> y(len, x.cols());
    for (Index t = 0; t < len; ++t) {
      y.row(t) = bias.value.row(0);
      for (Index k = 0; k < kw; ++k) {
        const Index src = t - kw + 1 + k;
        if (src < 0) continue;
        y.row(t).array() += weight.value.col(k).transpose().array() * x.row(src).array();
      }
    }
    return y;
  }

  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy) {
    const Index len = x.rows();
    const Index kw = kernel();
    Matrix<T> dx = Matrix<T>::Zero(len, x.cols());
    bias.grad.row(0) += dy.colwise().sum();
    for (Index t = 0; t < len; ++t) {
      for (Index k = 0; k < kw; ++k) {
        const Index src = t - kw + 1 + k;
        if (src < 0) continue;
        weight.grad.col(k).array() += (dy.row(t).array() * x.row(src).array()).transpose();
        dx.row(src).array() += dy.row(t).array() * weight.value.col(k).transpose().array();
      }
    }
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(join_name(prefix, "weight"), weight);
    f(join_name(prefix, "bias"), bias);
  }
};

/// Residual Mamba block:
///   out = x + W_out( SSM(silu(conv(W_x n))) * silu(W_z n) ),  n = LayerNorm(x)
template <class T>
struct MambaBlock {
  using Scalar = T;

  struct Cache {
    typename LayerNorm<T>::Cache norm;
    Matrix<T> normed;
    Matrix<T> xs;     // conv input
    Matrix<T> xc;     // conv output
    Matrix<T> u;      // silu(xc), SSM input
    Matrix<T> z;      // gate pre-activation
    Matrix<T> y;      // SSM output
    Matrix<T> gated;  // y * silu(z)
    typename SelectiveSSM<T>::Cache ssm;
  };

  MambaSpec spec;
  LayerNorm<T> norm;
  Linear<T> in_proj;  // d_model -> 2*inner, no bias
  CausalConv<T> conv;
  SelectiveSSM<T> ssm;
  Linear<T> out_proj;  // inner -> d_model, no bias

  MambaBlock() = default;
  MambaBlock(const MambaSpec& s, Rng& rng)
      : spec(s),
        norm(s.d_model),
        in_proj(s.d_model, 2 * s.inner(), rng, false),
        conv(s.inner(), s.conv_kernel, rng),
        ssm(s.inner(), s.state_dim, s.dt_rank(), rng),
        out_proj(s.inner(), s.d_model, rng, false) {}

  Matrix<T> forward(const Matrix<T>& x, Cache* cache = nullptr) const {
    require_shape(x.cols() == spec.d_model, "mamba block input width");
    const Index inner = spec.inner();
    typename LayerNorm<T>::Cache nc;
    Matrix<T> n = norm.forward(x, cache ? &nc : nullptr);
    Matrix<T> xz = in_proj.forward(n);
    Matrix<T> xs = xz.leftCols(inner);
    Matrix<T> z = xz.rightCols(inner);
    Matrix<T> xc = conv.forward(xs);
    Matrix<T> u = xc.unaryExpr([](T v) { return act::silu(v); });
    Matrix<T> y = ssm.forward(u, cache ? &cache->ssm : nullptr);
    Matrix<T> gated = (y.array() * z.unaryExpr([](T v) { return act::silu(v); }).array()).matrix();
    Matrix<T> out = x + out_proj.forward(gated);
    if (cache) {
      cache->norm = std::move(nc);
      cache->normed = std::move(n);
      cache->xs = std::move(xs);
      cache->xc = std::move(xc);
      cache->u = std::move(u);
      cache->z = std::move(z);
      cache->y = std::move(y);
      cache->gated = std::move(gated);
    }
    return out;
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dout) {
    const Index inner = spec.inner();
    Matrix<T> dgated = out_proj.backward(c.gated, dout);
    Matrix<T> dy = (dgated.array() * c.z.unaryExpr([](T v) { return act::silu(v); }).array()).matrix();
    Matrix<T> dz = (dgated.array() * c.y.array() *
                    c.z.unaryExpr([](T v) { return act::silu_grad(v); }).array())
                       .matrix();
    Matrix<T> du = ssm.backward(c.ssm, dy);
    Matrix<T> dxc = (du.array() * c.xc.unaryExpr([](T v) { return act::silu_grad(v); }).array()).matrix();
    Matrix<T> dxs = conv.backward(c.xs, dxc);
    Matrix<T> dxz(dout.rows(), 2 * inner);
    dxz.leftCols(inner) = dxs;
    dxz.rightCols(inner) = dz;
    Matrix<T> dn = in_proj.backward(c.normed, dxz);
    return dout + norm.backward(c.norm, dn);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    norm.visit(join_name(prefix, "norm"), f);
    in_proj.visit(join_name(prefix, "in_proj"), f);
    conv.visit(join_name(prefix, "conv"), f);
    ssm.visit(join_name(prefix, "ssm"), f);
    out_proj.visit(join_name(prefix, "out_proj"), f);
  }
};

/// A stack of Mamba blocks applied in sequence.
template <class T>
struct MambaStack {
  using Scalar = T;
  using Cache = std::vector<typename MambaBlock<T>::Cache>;

  std::vector<MambaBlock<T>> blocks;

  MambaStack() = default;
  MambaStack(const MambaSpec& s, Index layers, Rng& rng) {
    blocks.reserve(static_cast<std::size_t>(layers));
    for (Index i = 0; i < layers; ++i) blocks.emplace_back(s, rng);
  }

  Matrix<T> forward(const Matrix<T>& x, Cache* cache = nullptr) const {
    if (cache) cache->resize(blocks.size());
    Matrix<T> h = x;
    for (std::size_t i = 0; i < blocks.size(); ++i) h = blocks[i].forward(h, cache ? &(*cache)[i] : nullptr);
    return h;
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dout) {
    Matrix<T> g = dout;
    for (std::size_t i = blocks.size(); i-- > 0;) g = blocks[i].backward(c[i], g);
    return g;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit(join_name(prefix, std::to_string(i)), f);
  }
};

}  // namespace s2tx
