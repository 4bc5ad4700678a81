#pragma once

#include <optional>
#include <string>
#include <vector>

#include "s2tx/attention/local_model.hpp"
#include "s2tx/patching.hpp"
#include "s2tx/ssm/global_context.hpp"

namespace s2tx {

enum class Variant { full, no_cross_variate, no_cross_attention, neither };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_cross_variate: return "no_cross_variate";
    case Variant::no_cross_attention: return "no_cross_attention";
    case Variant::neither: return "neither";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_cross_variate") return Variant::no_cross_variate;
  if (s == "no_cross_attention") return Variant::no_cross_attention;
  if (s == "neither") return Variant::neither;
  throw ConfigError("unknown variant '" + s + "'");
}

inline bool uses_cross_variate(Variant v) { return v == Variant::full || v == Variant::no_cross_attention; }
inline bool uses_cross_attention(Variant v) { return v == Variant::full || v == Variant::no_cross_variate; }

/// Architecture hyperparameters of one model instance.
struct ModelSpec {
  MultiScaleSpec geometry;
  MambaSpec mamba;
  Index global_layers = 2;
  AttentionSpec attention;
  Index local_layers = 2;
  bool instance_norm = true;
  Variant variant = Variant::full;

  Index head_width() const {
    const Index local = geometry.local_patches() * attention.d_model;
    return uses_cross_attention(variant) ? local : local + attention.d_model;
  }

  void validate() const {
    geometry.validate();
    if (mamba.d_model != attention.d_model) throw InvalidSpecError("global and local model widths differ");
    if (attention.num_heads <= 0 || attention.d_model % attention.num_heads != 0)
      throw InvalidSpecError("d_model must be divisible by num_heads");
    if (mamba.state_dim <= 0 || mamba.expand <= 0 || mamba.conv_kernel <= 0)
      throw InvalidSpecError("invalid Mamba dimensions");
    if (global_layers <= 0 || local_layers <= 0) throw InvalidSpecError("layer counts must be positive");
  }
};

template <class T>
struct Forecast {
  Matrix<T> values;  // (variates, horizon)
  bool denormalized = false;
};

/// Per-variate z-score statistics of one window.
template <class T>
struct InstanceStats {
  Eigen::Matrix<T, Eigen::Dynamic, 1> mean;
  Eigen::Matrix<T, Eigen::Dynamic, 1> stdev;
};

template <class T>
constexpr T instance_norm_eps = T(1e-5);

template <class T>
InstanceStats<T> instance_stats(const Matrix<T>& window) {
  const Index len = window.cols();
  InstanceStats<T> s{window.rowwise().mean(), {}};
  s.stdev.resize(window.rows());
  for (Index d = 0; d < window.rows(); ++d) {
    const T var = (window.row(d).array() - s.mean(d)).square().sum() / static_cast<T>(len);
    s.stdev(d) = std::sqrt(var + instance_norm_eps<T>);
  }
  return s;
}

template <class T>
Matrix<T> normalize(const Matrix<T>& x, const InstanceStats<T>& s) {
  Matrix<T> out = x;
  for (Index d = 0; d < x.rows(); ++d) out.row(d) = (x.row(d).array() - s.mean(d)) / s.stdev(d);
  return out;
}

template <class T>
Matrix<T> denormalize(const Matrix<T>& x, const InstanceStats<T>& s) {
  Matrix<T> out = x;
  for (Index d = 0; d < x.rows(); ++d) out.row(d) = x.row(d).array() * s.stdev(d) + s.mean(d);
  return out;
}

/// Multi-scale forecaster: a bidirectional Mamba global model over coarse
/// patches whose output is the key/value source for a per-variate local
/// transformer over fine patches of the most recent steps.
template <class T>
class S2TXModel {
 public:
  using Scalar = T;

  struct Cache {
    InstanceStats<T> stats;
    typename GlobalModel<T>::Cache global;
    GlobalContext<T> context;
    std::vector<typename LocalModel<T>::Cache> local;
    Matrix<T> features;  // head input, one row per variate
    bool context_frozen = false;
  };

  S2TXModel(const ModelSpec& spec, Index horizon, std::uint64_t seed) : spec_(spec), horizon_(horizon) {
    spec_.validate();
    if (horizon <= 0) throw InvalidSpecError("horizon must be positive");
    spec_.geometry.window.horizon = horizon;
    Rng rng(seed);
    global_ = GlobalModel<T>(spec_.geometry.global.patch_len, spec_.mamba, spec_.global_layers,
                             uses_cross_variate(spec_.variant), rng);
    local_ = LocalModel<T>(spec_.geometry.local.patch_len, spec_.geometry.local_patches(), spec_.attention,
                           spec_.local_layers, uses_cross_attention(spec_.variant), rng);
    head_ = ForecastHead<T>(spec_.head_width(), horizon, rng);
  }

  const ModelSpec& spec() const { return spec_; }
  Variant variant() const { return spec_.variant; }
  Index horizon() const { return horizon_; }
  Index lookback() const { return spec_.geometry.window.lookback; }

  GlobalModel<T>& global_model() { return global_; }
  LocalModel<T>& local_model() { return local_; }
  ForecastHead<T>& head() { return head_; }

  /// Window (variates, lookback) -> forecast (variates, horizon). When
  /// `frozen_context` is given it replaces the global model's output.
  Forecast<T> forward(const Matrix<T>& window, Cache* cache = nullptr,
                      const GlobalContext<T>* frozen_context = nullptr) const {
    require_shape(window.cols() == lookback(), "window length " + std::to_string(window.cols()) +
                                                   " != look-back " + std::to_string(lookback()));
    if (!window.allFinite()) throw DataError("forward: window contains non-finite values");
    const Index nv = window.rows();
    const Index d = spec_.attention.d_model;

    InstanceStats<T> stats;
    Matrix<T> x = window;
    if (spec_.instance_norm) {
      stats = instance_stats(window);
      x = normalize(window, stats);
    }
    auto [gp, lp] = make_multiscale<T>(x, spec_.geometry);

    GlobalContext<T> context;
    if (frozen_context) {
      require_shape(frozen_context->values.dim0() == nv && frozen_context->values.dim1() == gp.patches(),
                    "frozen context");
      context = *frozen_context;
    } else {
      context = global_.forward(gp, cache ? &cache->global : nullptr);
    }

    const Index local_width = lp.patches() * d;
    Matrix<T> features(nv, head_.in_width());
    if (cache) cache->local.resize(static_cast<std::size_t>(nv));
    for (Index v = 0; v < nv; ++v) {
      Matrix<T> patches = lp.values.slice(v);
      Matrix<T> ctx = context.values.slice(v);
      Matrix<T> y = local_.forward(patches, ctx, cache ? &cache->local[static_cast<std::size_t>(v)] : nullptr);
      features.row(v).head(local_width) = Eigen::Map<const RowVector<T>>(y.data(), local_width);
      if (!uses_cross_attention(spec_.variant)) features.row(v).tail(d) = ctx.colwise().mean();
    }
    if (const Index r = first_nonfinite_row(features); r >= 0) throw NumericError("local model (variate)", r);

    Forecast<T> out{head_.forward(features), false};
    if (spec_.instance_norm) {
      out.values = denormalize(out.values, stats);
      out.denormalized = true;
    }
    if (!out.values.allFinite()) throw NumericError("forecast head", first_nonfinite_row(out.values));
    if (cache) {
      cache->stats = std::move(stats);
      cache->context = std::move(context);
      cache->features = std::move(features);
      cache->context_frozen = frozen_context != nullptr;
    }
    return out;
  }

  /// Accumulates gradients of all parameters given dL/dforecast.
  void backward(const Cache& c, const Matrix<T>& dforecast) {
    const Index nv = dforecast.rows();
    const Index d = spec_.attention.d_model;
    Matrix<T> dout = dforecast;
    if (spec_.instance_norm)
      for (Index v = 0; v < nv; ++v) dout.row(v) *= c.stats.stdev(v);
    Matrix<T> dfeat = head_.backward(c.features, dout);

    const Index np_local = spec_.geometry.local_patches();
    const Index np_global = c.context.values.dim1();
    Tensor3<T> dcontext(nv, np_global, d);
    for (Index v = 0; v < nv; ++v) {
      Matrix<T> dy = Eigen::Map<const Matrix<T>>(dfeat.row(v).data(), np_local, d);
      Matrix<T> dctx = local_.backward(c.local[static_cast<std::size_t>(v)], dy, np_global);
      if (!uses_cross_attention(spec_.variant))
        dctx.rowwise() += dfeat.row(v).tail(d) / static_cast<T>(np_global);
      dcontext.slice(v) = dctx;
    }
    if (!c.context_frozen) global_.backward(c.global, dcontext);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    global_.visit(join_name(prefix, "global"), f);
    local_.visit(join_name(prefix, "local"), f);
    head_.visit(join_name(prefix, "head"), f);
  }

 private:
  ModelSpec spec_;
  Index horizon_;
  GlobalModel<T> global_;
  LocalModel<T> local_;
  ForecastHead<T> head_;
};

/// Builds a model of the requested ablation variant. All variants draw
/// their weights from the same seed.
template <class T>
S2TXModel<T> make_variant(ModelSpec spec, Variant variant, Index horizon, std::uint64_t seed) {
  spec.variant = variant;
  return S2TXModel<T>(spec, horizon, seed);
}

}  // namespace s2tx
