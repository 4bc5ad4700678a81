#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "s2tx/core/params.hpp"
#include "s2tx/core/tensor.hpp"

namespace s2tx {

// Elementwise activations and their derivatives.
namespace act {

template <class T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
T silu(T x) {
  return x * sigmoid(x);
}

template <class T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

template <class T>
T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
T softplus_inverse(T y) {
  return y > T(20) ? y : std::log(std::expm1(y));
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

}  // namespace act

/// Affine map y = x W + b applied row-wise; W is (in, out), b is (1, out).
template <class T>
struct Linear {
  using Scalar = T;

  Param<T> weight;
  Param<T> bias;
  bool has_bias = true;

  Linear() = default;
  Linear(Index in, Index out, Rng& rng, bool with_bias = true)
      : weight(in, out), bias(1, with_bias ? out : 0), has_bias(with_bias) {
    const T bound = T(1) / std::sqrt(static_cast<T>(in));
    fill_uniform(weight.value, bound, rng);
    if (has_bias) fill_uniform(bias.value, bound, rng);
  }

  Index in_features() const { return weight.value.rows(); }
  Index out_features() const { return weight.value.cols(); }

  Matrix<T> forward(const Matrix<T>& x) const {
    require_shape(x.cols() == in_features(), "linear input width");
    Matrix<T> y = x * weight.value;
    if (has_bias) y.rowwise() += bias.value.row(0);
    return y;
  }

  /// Accumulates parameter gradients for input x and returns dL/dx.
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    if (has_bias) bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(join_name(prefix, "weight"), weight);
    if (has_bias) f(join_name(prefix, "bias"), bias);
  }
};

/// Per-row layer normalization with learnable gain and shift.
template <class T>
struct LayerNorm {
  using Scalar = T;

  struct Cache {
    Matrix<T> normalized;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
  };

  Param<T> gain;
  Param<T> shift;
  T eps = T(1e-5);

  LayerNorm() = default;
  explicit LayerNorm(Index width) : gain(1, width), shift(1, width) { gain.value.setOnes(); }

  Matrix<T> forward(const Matrix<T>& x, Cache* cache = nullptr) const {
    const Index n = x.cols();
    Matrix<T> xhat(x.rows(), n);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
      const T mean = x.row(r).mean();
      const T var = (x.row(r).array() - mean).square().sum() / static_cast<T>(n);
      inv_std(r) = T(1) / std::sqrt(var + eps);
      xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
    }
    Matrix<T> y = (xhat.array().rowwise() * gain.value.row(0).array()).matrix();
    y.rowwise() += shift.value.row(0);
    if (cache) {
      cache->normalized = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dy) {
    const Index n = dy.cols();
    gain.grad.row(0) += (dy.array() * c.normalized.array()).colwise().sum().matrix();
    shift.grad.row(0) += dy.colwise().sum();
    Matrix<T> dxhat = (dy.array().rowwise() * gain.value.row(0).array()).matrix();
    Matrix<T> dx(dy.rows(), n);
    for (Index r = 0; r < dy.rows(); ++r) {
      const T mean_d = dxhat.row(r).mean();
      const T mean_dx = dxhat.row(r).dot(c.normalized.row(r)) / static_cast<T>(n);
      dx.row(r) = c.inv_std(r) *
                  (dxhat.row(r).array() - mean_d - c.normalized.row(r).array() * mean_dx);
    }
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(join_name(prefix, "gain"), gain);
    f(join_name(prefix, "shift"), shift);
  }
};

/// Two-layer position-wise MLP with GELU.
template <class T>
struct FeedForward {
  using Scalar = T;

  struct Cache {
    Matrix<T> input;
    Matrix<T> pre_act;
    Matrix<T> hidden;
  };

  Linear<T> up;
  Linear<T> down;

  FeedForward() = default;
  FeedForward(Index width, Index hidden, Rng& rng) : up(width, hidden, rng), down(hidden, width, rng) {}

  Matrix<T> forward(const Matrix<T>& x, Cache* cache = nullptr) const {
    Matrix<T> pre = up.forward(x);
    Matrix<T> h = pre.unaryExpr([](T v) { return act::gelu(v); });
    Matrix<T> y = down.forward(h);
    if (cache) {
      cache->input = x;
      cache->pre_act = std::move(pre);
      cache->hidden = std::move(h);
    }
    return y;
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dy) {
    Matrix<T> dh = down.backward(c.hidden, dy);
    Matrix<T> dpre = (dh.array() * c.pre_act.unaryExpr([](T v) { return act::gelu_grad(v); }).array()).matrix();
    return up.backward(c.input, dpre);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    up.visit(join_name(prefix, "up"), f);
    down.visit(join_name(prefix, "down"), f);
  }
};

}  // namespace s2tx
