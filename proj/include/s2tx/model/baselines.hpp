#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "s2tx/attention/local_model.hpp"
#include "s2tx/model/s2tx_model.hpp"
#include "s2tx/ssm/mamba_block.hpp"

namespace s2tx {

enum class BaselineKind { vanilla_transformer, plain_mamba };

inline const char* to_string(BaselineKind k) {
  return k == BaselineKind::vanilla_transformer ? "vanilla_transformer" : "plain_mamba";
}

struct BaselineSpec {
  Index variates = 7;
  Index lookback = 336;
  Index horizon = 96;
  Index d_model = 64;
  Index layers = 2;
  Index num_heads = 4;
  Index ffn_width = 128;
  MambaSpec mamba;
};

/// Sinusoidal position table (len, width).
template <class T>
Matrix<T> sinusoidal_positions(Index len, Index width) {
  Matrix<T> p(len, width);
  for (Index t = 0; t < len; ++t) {
    for (Index i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(t) * freq;
      p(t, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return p;
}

/// Point-wise token forecasters used only for scaling comparisons: every
/// time step is one token carrying all variates, the sequence of length
/// `lookback` runs through a small encoder, and a linear map over time
/// produces the horizon. Inference only.
template <class T>
class BaselineModel {
 public:
  using Scalar = T;

  BaselineModel(BaselineKind kind, const BaselineSpec& spec, std::uint64_t seed) : kind_(kind), spec_(spec) {
    Rng rng(seed);
    embed_ = Linear<T>(spec.variates, spec.d_model, rng);
    if (kind == BaselineKind::vanilla_transformer) {
      positions_ = sinusoidal_positions<T>(spec.lookback, spec.d_model);
      AttentionSpec as{spec.d_model, spec.num_heads, spec.ffn_width};
      for (Index i = 0; i < spec.layers; ++i) encoder_.emplace_back(as, false, rng);
    } else {
      MambaSpec ms = spec.mamba;
      ms.d_model = spec.d_model;
      mamba_ = MambaStack<T>(ms, spec.layers, rng);
    }
    unembed_ = Linear<T>(spec.d_model, spec.variates, rng);
    time_head_ = Linear<T>(spec.lookback, spec.horizon, rng);
  }

  BaselineKind kind() const { return kind_; }

  Forecast<T> forward(const Matrix<T>& window) const {
    require_shape(window.rows() == spec_.variates && window.cols() == spec_.lookback, "baseline window");
    const auto stats = instance_stats(window);
    Matrix<T> tokens = embed_.forward(normalize(window, stats).transpose());
    if (kind_ == BaselineKind::vanilla_transformer) {
      tokens += positions_;
      for (const auto& layer : encoder_) tokens = layer.forward(tokens, tokens).values;
    } else {
      tokens = mamba_.forward(tokens);
    }
    Matrix<T> per_step = unembed_.forward(tokens);  // (lookback, variates)
    Matrix<T> out = time_head_.forward(per_step.transpose());
    return {denormalize(out, stats), true};
  }

  /// Attention weights of the first encoder layer, one (L, L) matrix per
  /// head. Empty for the Mamba baseline.
  std::vector<Matrix<T>> first_layer_attention(const Matrix<T>& window) const {
    if (kind_ != BaselineKind::vanilla_transformer) return {};
    const auto stats = instance_stats(window);
    Matrix<T> tokens = embed_.forward(normalize(window, stats).transpose()) + positions_;
    typename LayerNorm<T>::Cache nc;
    Matrix<T> n = encoder_.front().norm1.forward(tokens, &nc);
    typename MultiHeadAttention<T>::Cache ac;
    encoder_.front().self_attn.forward(n, n, &ac);
    return ac.weights;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    embed_.visit(join_name(prefix, "embed"), f);
    for (std::size_t i = 0; i < encoder_.size(); ++i)
      encoder_[i].visit(join_name(prefix, "encoder" + std::to_string(i)), f);
    mamba_.visit(join_name(prefix, "mamba"), f);
    unembed_.visit(join_name(prefix, "unembed"), f);
    time_head_.visit(join_name(prefix, "time_head"), f);
  }

 private:
  BaselineKind kind_;
  BaselineSpec spec_;
  Linear<T> embed_;
  Matrix<T> positions_;
  std::vector<LocalLayer<T>> encoder_;
  MambaStack<T> mamba_;
  Linear<T> unembed_;
  Linear<T> time_head_;
};

}  // namespace s2tx
