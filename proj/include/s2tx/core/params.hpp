#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "s2tx/core/tensor.hpp"

namespace s2tx {

/// A learnable tensor and its accumulated gradient (same shape).
template <class T>
struct Param {
  Matrix<T> value;
  Matrix<T> grad;

  Param() = default;
  Param(Index rows, Index cols) : value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

template <class T>
using ParamVisitor = std::function<void(const std::string& name, Param<T>& p)>;

/// Visits every parameter of a module, calling f(name, param) with
/// hierarchical dotted names. Modules implement `visit(prefix, f)`.
template <class Module, class T>
void for_each_param(Module& m, const ParamVisitor<T>& f) {
  m.visit("", f);
}

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <class Module>
Index parameter_count(Module& m) {
  using T = typename Module::Scalar;
  Index n = 0;
  m.visit("", ParamVisitor<T>([&](const std::string&, Param<T>& p) { n += p.size(); }));
  return n;
}

template <class Module>
void zero_grads(Module& m) {
  using T = typename Module::Scalar;
  m.visit("", ParamVisitor<T>([](const std::string&, Param<T>& p) { p.zero_grad(); }));
}

/// Snapshot of all parameter values keyed by name.
template <class Module>
std::map<std::string, Matrix<typename Module::Scalar>> state_dict(Module& m) {
  using T = typename Module::Scalar;
  std::map<std::string, Matrix<T>> out;
  m.visit("", ParamVisitor<T>([&](const std::string& name, Param<T>& p) { out.emplace(name, p.value); }));
  return out;
}

template <class Module>
void load_state_dict(Module& m, const std::map<std::string, Matrix<typename Module::Scalar>>& state) {
  using T = typename Module::Scalar;
  m.visit("", ParamVisitor<T>([&](const std::string& name, Param<T>& p) {
    auto it = state.find(name);
    if (it == state.end()) throw ShapeError("missing parameter '" + name + "' in state");
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw ShapeError("parameter '" + name + "' has incompatible shape");
    p.value = it->second;
  }));
}

/// FNV-1a over the raw bytes of every parameter value, in visit order.
template <class Module>
std::uint64_t parameter_hash(Module& m) {
  using T = typename Module::Scalar;
  std::uint64_t h = 1469598103934665603ull;
  m.visit("", ParamVisitor<T>([&](const std::string&, Param<T>& p) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(p.value.size()) * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }));
  return h;
}

using Rng = std::mt19937_64;

template <class T>
void fill_uniform(Matrix<T>& m, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

template <class T>
void fill_normal(Matrix<T>& m, T stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

}  // namespace s2tx
