#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace s2tx {

using Index = Eigen::Index;

/// Row-major dense matrix. Sequences are stored one token per row.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
using MatrixMap = Eigen::Map<Matrix<T>>;

template <class T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

// Error categories surfaced by the library. All derive from std::runtime_error
// so callers that do not care about the category can catch one type.
struct InvalidSpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a value turns NaN/Inf; `where` names the stage and `step` the
/// offending sequence position (or -1 when not applicable).
struct NumericError : std::runtime_error {
  NumericError(std::string where, Index step)
      : std::runtime_error("non-finite value in " + where +
                           (step >= 0 ? " at step " + std::to_string(step) : std::string{})),
        stage(std::move(where)),
        step_index(step) {}
  std::string stage;
  Index step_index;
};

/// Dense rank-3 tensor (d0, d1, d2), contiguous in row-major order.
/// slice(i) views the (d1, d2) matrix at leading index i.
template <class T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(Index d0, Index d1, Index d2, T fill = T(0))
      : d0_(d0), d1_(d1), d2_(d2), data_(static_cast<std::size_t>(d0 * d1 * d2), fill) {}

  Index dim0() const { return d0_; }
  Index dim1() const { return d1_; }
  Index dim2() const { return d2_; }
  Index size() const { return d0_ * d1_ * d2_; }
  bool empty() const { return size() == 0; }

  T& operator()(Index i, Index j, Index k) { return data_[offset(i, j, k)]; }
  const T& operator()(Index i, Index j, Index k) const { return data_[offset(i, j, k)]; }

  MatrixMap<T> slice(Index i) { return MatrixMap<T>(data_.data() + i * d1_ * d2_, d1_, d2_); }
  ConstMatrixMap<T> slice(Index i) const {
    return ConstMatrixMap<T>(data_.data() + i * d1_ * d2_, d1_, d2_);
  }

  /// The whole tensor viewed as a (d0*d1, d2) matrix, leading index slowest.
  MatrixMap<T> flat() { return MatrixMap<T>(data_.data(), d0_ * d1_, d2_); }
  ConstMatrixMap<T> flat() const { return ConstMatrixMap<T>(data_.data(), d0_ * d1_, d2_); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t offset(Index i, Index j, Index k) const {
    return static_cast<std::size_t>((i * d1_ + j) * d2_ + k);
  }

  Index d0_ = 0;
  Index d1_ = 0;
  Index d2_ = 0;
  std::vector<T> data_;
};

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Index of the first row containing a non-finite entry, or -1.
template <class Derived>
Index first_nonfinite_row(const Eigen::MatrixBase<Derived>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    if (!m.row(r).allFinite()) return r;
  }
  return -1;
}

template <class Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const std::string& where) {
  if (const Index r = first_nonfinite_row(m); r >= 0) throw NumericError(where, r);
}

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError("shape mismatch: " + what);
}

}  // namespace s2tx
