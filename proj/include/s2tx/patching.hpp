#pragma once

#include <string>
#include <utility>

#include "s2tx/core/tensor.hpp"

namespace s2tx {

enum class Scale { global, local };

inline const char* to_string(Scale s) { return s == Scale::global ? "global" : "local"; }

/// Where the patch grid is pinned when it does not tile the window exactly.
/// `start`: patch i begins at i*stride. `end`: the last patch ends on the
/// final time step, so the oldest leftover steps are the ones not covered.
enum class PatchAnchor { start, end };

struct WindowSpec {
  Index lookback = 336;
  Index local_window = 168;
  Index horizon = 96;

  void validate() const {
    if (lookback <= 0 || local_window <= 0 || horizon <= 0)
      throw InvalidSpecError("window lengths must be positive");
    if (local_window > lookback) throw InvalidSpecError("local window longer than look-back window");
  }
};

struct PatchSpec {
  Index patch_len = 16;
  Index stride = 8;
  Scale scale = Scale::local;
  PatchAnchor anchor = PatchAnchor::start;

  void validate() const {
    if (patch_len <= 0) throw InvalidSpecError("patch length must be positive");
    if (stride <= 0) throw InvalidSpecError("stride must be >= 1");
  }
};

template <class T>
struct PatchTensor {
  Tensor3<T> values;  // (variates, patch count, patch length)
  Scale scale = Scale::local;
  Index span_begin = 0;  // covered window range [span_begin, span_end)
  Index span_end = 0;

  Index variates() const { return values.dim0(); }
  Index patches() const { return values.dim1(); }
  Index patch_len() const { return values.dim2(); }
};

/// Number of patches: ceil((window_len - patch_len) / stride), with 0
/// promoted to 1 so a window exactly one patch long yields one patch.
inline Index patch_count(Index window_len, const PatchSpec& spec) {
  spec.validate();
  if (window_len < spec.patch_len)
    throw InvalidSpecError("window of length " + std::to_string(window_len) +
                           " is shorter than patch length " + std::to_string(spec.patch_len));
  const Index span = window_len - spec.patch_len;
  const Index n = (span + spec.stride - 1) / spec.stride;
  return n == 0 ? 1 : n;
}

/// First window index read by patch 0 for the given anchoring.
inline Index patch_offset(Index window_len, const PatchSpec& spec) {
  const Index n = patch_count(window_len, spec);
  if (spec.anchor == PatchAnchor::start) return 0;
  const Index off = window_len - spec.patch_len - (n - 1) * spec.stride;
  return off > 0 ? off : 0;
}

/// Splits each row of `window` (variates x time) into patches of
/// spec.patch_len every spec.stride steps. A patch that would run past the
/// window is completed by repeating the window's last value.
template <class T, class Derived>
PatchTensor<T> patchify(const Eigen::MatrixBase<Derived>& window, const PatchSpec& spec) {
  const Index len = window.cols();
  const Index n = patch_count(len, spec);
  const Index off = patch_offset(len, spec);
  if (!window.allFinite()) throw DataError("patchify: window contains non-finite values");

  PatchTensor<T> out;
  out.scale = spec.scale;
  out.values = Tensor3<T>(window.rows(), n, spec.patch_len);
  for (Index d = 0; d < window.rows(); ++d) {
    for (Index p = 0; p < n; ++p) {
      const Index begin = off + p * spec.stride;
      for (Index k = 0; k < spec.patch_len; ++k) {
        const Index t = std::min(begin + k, len - 1);
        out.values(d, p, k) = static_cast<T>(window(d, t));
      }
    }
  }
  out.span_begin = off;
  out.span_end = std::min(off + (n - 1) * spec.stride + spec.patch_len, len);
  return out;
}

/// Window and patch geometry for both scales.
struct MultiScaleSpec {
  WindowSpec window;
  PatchSpec global{48, 16, Scale::global, PatchAnchor::end};
  PatchSpec local{16, 8, Scale::local, PatchAnchor::end};

  Index global_patches() const { return patch_count(window.lookback, global); }
  Index local_patches() const { return patch_count(window.local_window, local); }

  void validate() const {
    window.validate();
    global.validate();
    local.validate();
    if (global.scale != Scale::global || local.scale != Scale::local)
      throw InvalidSpecError("patch spec scale tags are swapped");
    patch_count(window.lookback, global);
    patch_count(window.local_window, local);
  }
};

/// Global patches over the full look-back window and local patches over its
/// most recent `local_window` steps.
template <class T, class Derived>
std::pair<PatchTensor<T>, PatchTensor<T>> make_multiscale(const Eigen::MatrixBase<Derived>& window,
                                                          const MultiScaleSpec& spec) {
  if (window.cols() != spec.window.lookback)
    throw ShapeError("window length " + std::to_string(window.cols()) + " != look-back " +
                     std::to_string(spec.window.lookback));
  const Index s = spec.window.local_window;
  auto global = patchify<T>(window, spec.global);
  auto local = patchify<T>(window.rightCols(s), spec.local);
  local.span_begin += window.cols() - s;
  local.span_end += window.cols() - s;
  return {std::move(global), std::move(local)};
}

}  // namespace s2tx
