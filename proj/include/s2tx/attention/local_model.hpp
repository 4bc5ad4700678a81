#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s2tx/attention/multi_head.hpp"
#include "s2tx/core/layers.hpp"

namespace s2tx {

struct AttentionSpec {
  Index d_model = 64;
  Index num_heads = 4;
  Index ffn_width = 128;
};

template <class T>
struct LocalLayerOutput {
  Matrix<T> values;  // (local patches, d_model)
};

/// Pre-norm decoder layer:
///   x += SelfAttn(LN1 x); x += CrossAttn(source = context, target = LN2 x); x += FFN(LN3 x)
/// The cross-attention sublayer is skipped when `use_cross` is false.
template <class T>
struct LocalLayer {
  using Scalar = T;

  struct Cache {
    typename LayerNorm<T>::Cache n1, n2, n3;
    typename MultiHeadAttention<T>::Cache self, cross;
    typename FeedForward<T>::Cache ffn;
  };

  LayerNorm<T> norm1, norm2, norm3;
  MultiHeadAttention<T> self_attn;
  MultiHeadAttention<T> cross_attn;
  FeedForward<T> ffn;
  bool use_cross = true;

  LocalLayer() = default;
  LocalLayer(const AttentionSpec& s, bool use_cross_, Rng& rng)
      : norm1(s.d_model),
        norm2(s.d_model),
        norm3(s.d_model),
        self_attn(s.d_model, s.num_heads, rng),
        ffn(s.d_model, s.ffn_width, rng),
        use_cross(use_cross_) {
    if (use_cross) cross_attn = MultiHeadAttention<T>(s.d_model, s.num_heads, rng);
  }

  LocalLayerOutput<T> forward(const Matrix<T>& tokens, const Matrix<T>& context, Cache* cache = nullptr) const {
    Matrix<T> x = tokens;
    Matrix<T> n = norm1.forward(x, cache ? &cache->n1 : nullptr);
    x += self_attn.forward(n, n, cache ? &cache->self : nullptr);
    if (use_cross) {
      n = norm2.forward(x, cache ? &cache->n2 : nullptr);
      x += cross_attn.forward(context, n, cache ? &cache->cross : nullptr);
    }
    n = norm3.forward(x, cache ? &cache->n3 : nullptr);
    x += ffn.forward(n, cache ? &cache->ffn : nullptr);
    return {std::move(x)};
  }

  /// Returns (dL/dtokens, dL/dcontext); the context gradient is empty when
  /// the cross sublayer is disabled.
  std::pair<Matrix<T>, Matrix<T>> backward(const Cache& c, const Matrix<T>& dout) {
    Matrix<T> dx = dout;
    dx += norm3.backward(c.n3, ffn.backward(c.ffn, dx));
    Matrix<T> dcontext;
    if (use_cross) {
      auto [dsrc, dtgt] = cross_attn.backward(c.cross, dx);
      dcontext = std::move(dsrc);
      dx += norm2.backward(c.n2, dtgt);
    }
    auto [dsrc, dtgt] = self_attn.backward(c.self, dx);
    dx += norm1.backward(c.n1, dsrc + dtgt);
    return {std::move(dx), std::move(dcontext)};
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    norm1.visit(join_name(prefix, "norm1"), f);
    self_attn.visit(join_name(prefix, "self_attn"), f);
    if (use_cross) {
      norm2.visit(join_name(prefix, "norm2"), f);
      cross_attn.visit(join_name(prefix, "cross_attn"), f);
    }
    norm3.visit(join_name(prefix, "norm3"), f);
    ffn.visit(join_name(prefix, "ffn"), f);
  }
};

/// Per-variate local transformer: patch embedding, learned positions, then
/// a stack of LocalLayers each attending to that variate's global context.
template <class T>
struct LocalModel {
  using Scalar = T;

  struct Cache {
    Matrix<T> patches;
    std::vector<typename LocalLayer<T>::Cache> layers;
  };

  Linear<T> embed;
  Param<T> position;  // (local patches, d_model)
  std::vector<LocalLayer<T>> layers;

  LocalModel() = default;
  LocalModel(Index patch_len, Index patches, const AttentionSpec& s, Index num_layers, bool use_cross, Rng& rng)
      : embed(patch_len, s.d_model, rng), position(patches, s.d_model) {
    fill_uniform(position.value, T(0.02), rng);
    for (Index i = 0; i < num_layers; ++i) layers.emplace_back(s, use_cross, rng);
  }

  Matrix<T> forward(const Matrix<T>& patches, const Matrix<T>& context, Cache* cache = nullptr) const {
    require_shape(patches.rows() == position.value.rows(), "local patch count");
    Matrix<T> x = embed.forward(patches) + position.value;
    if (cache) {
      cache->patches = patches;
      cache->layers.resize(layers.size());
    }
    for (std::size_t i = 0; i < layers.size(); ++i)
      x = layers[i].forward(x, context, cache ? &cache->layers[i] : nullptr).values;
    return x;
  }

  /// Accumulates parameter gradients and returns dL/dcontext (zero-sized
  /// when no layer reads the context).
  Matrix<T> backward(const Cache& c, const Matrix<T>& dout, Index context_rows) {
    Matrix<T> dx = dout;
    Matrix<T> dcontext = Matrix<T>::Zero(context_rows, dout.cols());
    for (std::size_t i = layers.size(); i-- > 0;) {
      auto [dtok, dctx] = layers[i].backward(c.layers[i], dx);
      dx = std::move(dtok);
      if (dctx.size() > 0) dcontext += dctx;
    }
    position.grad += dx;
    embed.backward(c.patches, dx);
    return dcontext;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    embed.visit(join_name(prefix, "embed"), f);
    f(join_name(prefix, "position"), position);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(join_name(prefix, "layer" + std::to_string(i)), f);
  }
};

/// One linear map shared by all variates, from flattened per-variate
/// features to the horizon.
template <class T>
struct ForecastHead {
  using Scalar = T;

  Linear<T> proj;

  ForecastHead() = default;
  ForecastHead(Index in_width, Index horizon, Rng& rng) : proj(in_width, horizon, rng) {}

  Index in_width() const { return proj.in_features(); }
  Index horizon() const { return proj.out_features(); }

  /// features: one row per variate.
  Matrix<T> forward(const Matrix<T>& features) const { return proj.forward(features); }
  Matrix<T> backward(const Matrix<T>& features, const Matrix<T>& dout) { return proj.backward(features, dout); }

  /// local_outputs (variates, patches, d_model) -> (variates, horizon)
  Matrix<T> forward(const Tensor3<T>& local_outputs) const {
    require_shape(local_outputs.dim1() * local_outputs.dim2() == in_width(), "forecast head input width");
    Matrix<T> flat = ConstMatrixMap<T>(local_outputs.data().data(), local_outputs.dim0(), in_width());
    return forward(flat);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) { proj.visit(prefix, f); }
};

}  // namespace s2tx
