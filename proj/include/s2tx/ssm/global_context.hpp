#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s2tx/patching.hpp"
#include "s2tx/ssm/mamba_block.hpp"

namespace s2tx {

template <class T>
struct GlobalContext {
  Tensor3<T> values;  // (variates, global patches, d_model)
};

/// Bidirectional Mamba encoder over global patches. With `cross_variate`
/// set, all variates' patches are scanned as one sequence of length
/// variates*patches (variate-major); otherwise each variate is scanned on its
/// own with the same weights.
template <class T>
struct GlobalModel {
  using Scalar = T;

  struct SequenceCache {
    typename MambaStack<T>::Cache fwd;
    typename MambaStack<T>::Cache bwd;
  };

  struct Cache {
    Matrix<T> patches;  // (variates*patches, patch_len)
    std::vector<SequenceCache> sequences;
  };

  Linear<T> embed;
  MambaStack<T> forward_stack;
  MambaStack<T> backward_stack;
  bool cross_variate = true;

  GlobalModel() = default;
  GlobalModel(Index patch_len, const MambaSpec& spec, Index layers, bool cross_variate_, Rng& rng)
      : embed(patch_len, spec.d_model, rng),
        forward_stack(spec, layers, rng),
        backward_stack(spec, layers, rng),
        cross_variate(cross_variate_) {}

  Index d_model() const { return embed.out_features(); }

  /// Forward stack on seq plus the backward stack on the reversed sequence,
  /// re-reversed so rows line up before summing.
  Matrix<T> encode(const Matrix<T>& seq, SequenceCache* cache) const {
    Matrix<T> fwd = forward_stack.forward(seq, cache ? &cache->fwd : nullptr);
    Matrix<T> rev = seq.colwise().reverse();
    Matrix<T> bwd = backward_stack.forward(rev, cache ? &cache->bwd : nullptr);
    return fwd + bwd.colwise().reverse();
  }

  Matrix<T> encode_backward(const SequenceCache& c, const Matrix<T>& dz) {
    Matrix<T> dseq = forward_stack.backward(c.fwd, dz);
    Matrix<T> drev = dz.colwise().reverse();
    dseq += backward_stack.backward(c.bwd, drev).colwise().reverse();
    return dseq;
  }

  GlobalContext<T> forward(const PatchTensor<T>& patches, Cache* cache = nullptr) const {
    if (patches.scale != Scale::global) throw InvalidSpecError("global model expects global-scale patches");
    require_shape(patches.patch_len() == embed.in_features(), "global patch length");
    const Index nv = patches.variates();
    const Index np = patches.patches();
    Matrix<T> flat = patches.values.flat();
    Matrix<T> tokens = embed.forward(flat);

    GlobalContext<T> out{Tensor3<T>(nv, np, d_model())};
    if (nv == 0) return out;
    if (cache) {
      cache->patches = flat;
      cache->sequences.assign(cross_variate ? 1 : static_cast<std::size_t>(nv), {});
    }
    if (cross_variate) {
      out.values.flat() = encode(tokens, cache ? &cache->sequences[0] : nullptr);
    } else {
      for (Index v = 0; v < nv; ++v) {
        Matrix<T> seq = tokens.middleRows(v * np, np);
        out.values.slice(v) = encode(seq, cache ? &cache->sequences[static_cast<std::size_t>(v)] : nullptr);
      }
    }
    require_finite(out.values.flat(), "global context");
    return out;
  }

  /// Accumulates parameter gradients given dL/dZ with Z's shape.
  void backward(const Cache& c, const Tensor3<T>& dcontext) {
    const Index nv = dcontext.dim0();
    const Index np = dcontext.dim1();
    if (nv == 0) return;
    Matrix<T> dtokens(nv * np, d_model());
    if (cross_variate) {
      dtokens = encode_backward(c.sequences[0], dcontext.flat());
    } else {
      for (Index v = 0; v < nv; ++v) {
        Matrix<T> dz = dcontext.slice(v);
        dtokens.middleRows(v * np, np) = encode_backward(c.sequences[static_cast<std::size_t>(v)], dz);
      }
    }
    embed.backward(c.patches, dtokens);
  }

  /// Exchanges the roles of the two scan directions.
  void swap_directions() { std::swap(forward_stack, backward_stack); }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    embed.visit(join_name(prefix, "embed"), f);
    forward_stack.visit(join_name(prefix, "forward"), f);
    backward_stack.visit(join_name(prefix, "backward"), f);
  }
};

}  // namespace s2tx
