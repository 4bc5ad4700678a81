#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "s2tx/core/layers.hpp"

namespace s2tx {

/// Numerically stable softmax over each row.
template <class T>
Matrix<T> softmax_rows(const Matrix<T>& scores) {
  Matrix<T> p(scores.rows(), scores.cols());
  for (Index r = 0; r < scores.rows(); ++r) {
    const T mx = scores.row(r).maxCoeff();
    p.row(r) = (scores.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// Multi-head attention where queries come from `target` and keys/values
/// from `source`. No masking.
template <class T>
struct MultiHeadAttention {
  using Scalar = T;

  struct Cache {
    Matrix<T> source;
    Matrix<T> target;
    Matrix<T> q;
    Matrix<T> k;
    Matrix<T> v;
    std::vector<Matrix<T>> weights;  // per head, (target_len, source_len)
    Matrix<T> heads;                 // concatenated head outputs
  };

  Index num_heads = 1;
  Linear<T> wq;
  Linear<T> wk;
  Linear<T> wv;
  Linear<T> wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(Index d_model, Index heads, Rng& rng)
      : num_heads(heads), wq(d_model, d_model, rng), wk(d_model, d_model, rng), wv(d_model, d_model, rng),
        wo(d_model, d_model, rng) {
    if (heads <= 0 || d_model % heads != 0) throw InvalidSpecError("d_model must be divisible by num_heads");
  }

  Index d_model() const { return wq.in_features(); }
  Index head_dim() const { return d_model() / num_heads; }

  Matrix<T> forward(const Matrix<T>& source, const Matrix<T>& target, Cache* cache = nullptr) const {
    require_shape(source.cols() == d_model() && target.cols() == d_model(), "attention width");
    require_shape(source.rows() >= 1 && target.rows() >= 1, "attention needs non-empty inputs");
    const Index dh = head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Matrix<T> q = wq.forward(target);
    Matrix<T> k = wk.forward(source);
    Matrix<T> v = wv.forward(source);
    Matrix<T> heads(target.rows(), d_model());
    if (cache) cache->weights.resize(static_cast<std::size_t>(num_heads));
    for (Index h = 0; h < num_heads; ++h) {
      Matrix<T> scores = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
      Matrix<T> p = softmax_rows(scores);
      heads.middleCols(h * dh, dh).noalias() = p * v.middleCols(h * dh, dh);
      if (cache) cache->weights[static_cast<std::size_t>(h)] = std::move(p);
    }
    Matrix<T> out = wo.forward(heads);
    if (cache) {
      cache->source = source;
      cache->target = target;
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->heads = std::move(heads);
    }
    return out;
  }

  /// Returns (dL/dsource, dL/dtarget).
  std::pair<Matrix<T>, Matrix<T>> backward(const Cache& c, const Matrix<T>& dout) {
    const Index dh = head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Matrix<T> dheads = wo.backward(c.heads, dout);
    Matrix<T> dq(c.q.rows(), c.q.cols());
    Matrix<T> dk(c.k.rows(), c.k.cols());
    Matrix<T> dv(c.v.rows(), c.v.cols());
    for (Index h = 0; h < num_heads; ++h) {
      const Matrix<T>& p = c.weights[static_cast<std::size_t>(h)];
      Matrix<T> dho = dheads.middleCols(h * dh, dh);
      Matrix<T> dp = dho * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * dho;
      Matrix<T> ds(p.rows(), p.cols());
      for (Index r = 0; r < p.rows(); ++r) {
        const T inner = p.row(r).dot(dp.row(r));
        ds.row(r) = p.row(r).array() * (dp.row(r).array() - inner);
      }
      ds *= scale;
      dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    Matrix<T> dtarget = wq.backward(c.target, dq);
    Matrix<T> dsource = wk.backward(c.source, dk);
    dsource += wv.backward(c.source, dv);
    return {std::move(dsource), std::move(dtarget)};
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    wq.visit(join_name(prefix, "wq"), f);
    wk.visit(join_name(prefix, "wk"), f);
    wv.visit(join_name(prefix, "wv"), f);
    wo.visit(join_name(prefix, "wo"), f);
  }
};

template <class T>
Matrix<T> cross_attention(const Matrix<T>& source, const Matrix<T>& target, const MultiHeadAttention<T>& attn) {
  return attn.forward(source, target);
}

/// Self-attention is cross-attention with the target as its own source.
template <class T>
Matrix<T> self_attention(const Matrix<T>& target, const MultiHeadAttention<T>& attn) {
  return cross_attention(target, target, attn);
}

}  // namespace s2tx
