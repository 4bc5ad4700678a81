#pragma once

#include <cmath>
#include <string>

#include "s2tx/core/layers.hpp"
#include "s2tx/core/params.hpp"
#include "s2tx/core/tensor.hpp"

namespace s2tx {

// Zero-order-hold discretization of a diagonal system dh = a h + b x.
//   decay = exp(delta * a)
//   gain  = (exp(delta * a) - 1) / a     (-> delta as a -> 0)
// so that h_t = decay * h_{t-1} + gain * b * x_t.
namespace zoh {

template <class T>
T decay(T delta, T a) {
  return std::exp(delta * a);
}

template <class T>
T gain(T delta, T a) {
  if (a == T(0)) return delta;
  return std::expm1(delta * a) / a;
}

/// d gain / d a. With u = delta*a, gain = delta * expm1(u)/u, so the
/// derivative is delta^2 * d/du[expm1(u)/u].
template <class T>
T gain_grad_a(T delta, T a) {
  const T u = delta * a;
  T g;
  if (std::abs(u) < T(1e-4)) {
    g = T(0.5) + u / T(3) + u * u / T(8);
  } else {
    g = (u * std::exp(u) - std::expm1(u)) / (u * u);
  }
  return delta * delta * g;
}

}  // namespace zoh

template <class T>
struct Discretized {
  RowVector<T> a_bar;
  RowVector<T> b_bar;
};

/// Elementwise ZOH for a diagonal state matrix: a_bar = exp(delta*A),
/// b_bar = ((exp(delta*A) - 1) / A) * B.
template <class T>
Discretized<T> discretize(const RowVector<T>& a_diag, const RowVector<T>& b, T delta) {
  require_shape(a_diag.size() == b.size(), "discretize: A and B lengths differ");
  if (delta < T(0)) throw InvalidSpecError("discretize: negative step size");
  Discretized<T> out{RowVector<T>(a_diag.size()), RowVector<T>(a_diag.size())};
  for (Index i = 0; i < a_diag.size(); ++i) {
    out.a_bar(i) = zoh::decay(delta, a_diag(i));
    out.b_bar(i) = zoh::gain(delta, a_diag(i)) * b(i);
  }
  return out;
}

/// Hidden states of every step, stored (seq_len, channels*state_dim).
template <class T>
struct ScanCache {
  Matrix<T> states;
};

template <class T>
struct ScanGrads {
  Matrix<T> inputs;  // (seq, channels)
  Matrix<T> delta;   // (seq, channels)
  Matrix<T> a;       // (channels, state)
  Matrix<T> b;       // (seq, state)
  Matrix<T> c;       // (seq, state)
  Matrix<T> skip;    // (1, channels)
};

/// Selective scan over a diagonal SSM with per-step parameters.
///   inputs (seq, ch), delta (seq, ch) > 0, a (ch, state) < 0,
///   b, c (seq, state) shared across channels, skip (1, ch).
/// For each channel: h_0 = 0, h_t = exp(delta_t a) h_{t-1} + gain(delta_t, a) b_t x_t,
/// y_t = c_t . h_t + skip x_t.
template <class T>
Matrix<T> selective_scan(const Matrix<T>& inputs, const Matrix<T>& delta, const Matrix<T>& a,
                         const Matrix<T>& b, const Matrix<T>& c, const Matrix<T>& skip,
                         ScanCache<T>* cache = nullptr) {
  const Index len = inputs.rows();
  const Index ch = inputs.cols();
  const Index ns = a.cols();
  require_shape(len >= 1, "selective_scan: empty sequence");
  require_shape(delta.rows() == len && delta.cols() == ch, "selective_scan: delta");
  require_shape(a.rows() == ch, "selective_scan: A rows");
  require_shape(b.rows() == len && b.cols() == ns, "selective_scan: B");
  require_shape(c.rows() == len && c.cols() == ns, "selective_scan: C");
  require_shape(skip.size() == ch, "selective_scan: D");

  Matrix<T> y(len, ch);
  Matrix<T> state = Matrix<T>::Zero(ch, ns);
  if (cache) cache->states.resize(len, ch * ns);

  for (Index t = 0; t < len; ++t) {
    for (Index k = 0; k < ch; ++k) {
      const T x = inputs(t, k);
      const T dt = delta(t, k);
      T acc = T(0);
      for (Index s = 0; s < ns; ++s) {
        const T av = a(k, s);
        T& h = state(k, s);
        h = zoh::decay(dt, av) * h + zoh::gain(dt, av) * b(t, s) * x;
        acc += c(t, s) * h;
      }
      y(t, k) = acc + skip(k) * x;
    }
    if (!y.row(t).allFinite()) throw NumericError("selective_scan", t);
    if (cache) cache->states.row(t) = Eigen::Map<const RowVector<T>>(state.data(), ch * ns);
  }
  return y;
}

/// Reverse-mode pass of selective_scan; needs the forward cache.
template <class T>
ScanGrads<T> selective_scan_backward(const Matrix<T>& inputs, const Matrix<T>& delta,
                                     const Matrix<T>& a, const Matrix<T>& b, const Matrix<T>& c,
                                     const Matrix<T>& skip, const ScanCache<T>& cache,
                                     const Matrix<T>& dy) {
  const Index len = inputs.rows();
  const Index ch = inputs.cols();
  const Index ns = a.cols();
  ScanGrads<T> g{Matrix<T>::Zero(len, ch), Matrix<T>::Zero(len, ch), Matrix<T>::Zero(ch, ns),
                 Matrix<T>::Zero(len, ns), Matrix<T>::Zero(len, ns), Matrix<T>::Zero(1, ch)};
  Matrix<T> carry = Matrix<T>::Zero(ch, ns);

  for (Index t = len - 1; t >= 0; --t) {
    for (Index k = 0; k < ch; ++k) {
      const T x = inputs(t, k);
      const T dt = delta(t, k);
      const T dyk = dy(t, k);
      g.skip(0, k) += dyk * x;
      T dx = dyk * skip(k);
      T ddt = T(0);
      for (Index s = 0; s < ns; ++s) {
        const T av = a(k, s);
        const T e = zoh::decay(dt, av);
        const T gn = zoh::gain(dt, av);
        const T h = cache.states(t, k * ns + s);
        const T hp = t > 0 ? cache.states(t - 1, k * ns + s) : T(0);
        g.c(t, s) += dyk * h;
        const T dh = carry(k, s) + dyk * c(t, s);
        const T d_decay = dh * hp;
        const T d_gain = dh * b(t, s) * x;
        g.b(t, s) += dh * gn * x;
        dx += dh * gn * b(t, s);
        ddt += d_decay * e * av + d_gain * e;
        g.a(k, s) += d_decay * e * dt + d_gain * zoh::gain_grad_a(dt, av);
        carry(k, s) = dh * e;
      }
      g.inputs(t, k) = dx;
      g.delta(t, k) = ddt;
    }
  }
  return g;
}

/// Input-dependent SSM: B_t, C_t and delta_t are projected from the input,
/// A = -exp(a_log) is diagonal and fixed per channel.
template <class T>
struct SelectiveSSM {
  using Scalar = T;

  struct Cache {
    Matrix<T> inputs;
    Matrix<T> projected;  // [dt_low | B | C]
    Matrix<T> dt_pre;     // before softplus
    Matrix<T> delta;
    Matrix<T> a;
    ScanCache<T> scan;
  };

  Index channels = 0;
  Index state_dim = 0;
  Index dt_rank = 0;
  Linear<T> x_proj;   // channels -> dt_rank + 2*state_dim, no bias
  Linear<T> dt_proj;  // dt_rank -> channels
  Param<T> a_log;     // (channels, state_dim)
  Param<T> skip;      // (1, channels)

  SelectiveSSM() = default;
  SelectiveSSM(Index channels_, Index state_dim_, Index dt_rank_, Rng& rng)
      : channels(channels_),
        state_dim(state_dim_),
        dt_rank(dt_rank_),
        x_proj(channels_, dt_rank_ + 2 * state_dim_, rng, false),
        dt_proj(dt_rank_, channels_, rng),
        a_log(channels_, state_dim_),
        skip(1, channels_) {
    // Decay rates 1..state_dim, one timescale per state.
    for (Index k = 0; k < channels; ++k)
      for (Index s = 0; s < state_dim; ++s) a_log.value(k, s) = std::log(static_cast<T>(s + 1));
    skip.value.setOnes();
    // Step sizes start log-uniform in [1e-3, 1e-1].
    const T bound = T(1) / std::sqrt(static_cast<T>(dt_rank));
    fill_uniform(dt_proj.weight.value, bound, rng);
    std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
    for (Index k = 0; k < channels; ++k)
      dt_proj.bias.value(0, k) = act::softplus_inverse(static_cast<T>(std::exp(u(rng))));
  }

  Matrix<T> a_matrix() const { return -a_log.value.array().exp().matrix(); }

  Matrix<T> forward(const Matrix<T>& u, Cache* cache = nullptr) const {
    Matrix<T> proj = x_proj.forward(u);
    Matrix<T> dt_low = proj.leftCols(dt_rank);
    Matrix<T> dt_pre = dt_proj.forward(dt_low);
    Matrix<T> delta = dt_pre.unaryExpr([](T v) { return act::softplus(v); });
    Matrix<T> bm = proj.middleCols(dt_rank, state_dim);
    Matrix<T> cm = proj.rightCols(state_dim);
    Matrix<T> a = a_matrix();
    Matrix<T> y = selective_scan(u, delta, a, bm, cm, skip.value, cache ? &cache->scan : nullptr);
    if (cache) {
      cache->inputs = u;
      cache->projected = std::move(proj);
      cache->dt_pre = std::move(dt_pre);
      cache->delta = std::move(delta);
      cache->a = std::move(a);
    }
    return y;
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dy) {
    const Matrix<T> bm = c.projected.middleCols(dt_rank, state_dim);
    const Matrix<T> cm = c.projected.rightCols(state_dim);
    ScanGrads<T> g = selective_scan_backward(c.inputs, c.delta, c.a, bm, cm, skip.value, c.scan, dy);
    skip.grad += g.skip;
    a_log.grad.array() += g.a.array() * c.a.array();  // dA/da_log = A
    Matrix<T> ddt_pre =
        (g.delta.array() * c.dt_pre.unaryExpr([](T v) { return act::sigmoid(v); }).array()).matrix();
    Matrix<T> dproj(c.projected.rows(), c.projected.cols());
    dproj.leftCols(dt_rank) = dt_proj.backward(c.projected.leftCols(dt_rank), ddt_pre);
    dproj.middleCols(dt_rank, state_dim) = g.b;
    dproj.rightCols(state_dim) = g.c;
    Matrix<T> du = x_proj.backward(c.inputs, dproj);
    du += g.inputs;
    return du;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    x_proj.visit(join_name(prefix, "x_proj"), f);
    dt_proj.visit(join_name(prefix, "dt_proj"), f);
    f(join_name(prefix, "a_log"), a_log);
    f(join_name(prefix, "skip"), skip);
  }
};

}  // namespace s2tx
