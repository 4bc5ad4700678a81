#pragma once

#include <memory>
#include <span>
#include <string>

#include "s2tx/data/frame.hpp"
#include "s2tx/patching.hpp"

namespace s2tx {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

/// Contiguous [0, train_end) < [train_end, val_end) < [val_end, test_end)
/// with per-variate statistics taken from the train segment.
struct SplitSpec {
  Index train_end = 0;
  Index val_end = 0;
  Index test_end = 0;
  RowVector<double> mean;
  RowVector<double> stdev;

  Index begin(Split s) const { return s == Split::train ? 0 : s == Split::val ? train_end : val_end; }
  Index end(Split s) const { return s == Split::train ? train_end : s == Split::val ? val_end : test_end; }
  Index length(Split s) const { return end(s) - begin(s); }

  void validate(Index total) const {
    if (!(0 < train_end && train_end < val_end && val_end < test_end && test_end <= total))
      throw ConfigError("split boundaries must satisfy 0 < train < val < test <= " + std::to_string(total));
  }
};

/// ETT files use 12/4/4 months; everything else 0.7/0.1/0.2.
inline SplitSpec protocol_boundaries(const std::string& dataset, Index total) {
  SplitSpec s;
  const std::string key = canonical_dataset(dataset);
  if (key == "etth1" || key == "etth2") {
    s.train_end = 12 * 30 * 24;
    s.val_end = s.train_end + 4 * 30 * 24;
    s.test_end = s.val_end + 4 * 30 * 24;
  } else if (key == "ettm1" || key == "ettm2") {
    s.train_end = 12 * 30 * 24 * 4;
    s.val_end = s.train_end + 4 * 30 * 24 * 4;
    s.test_end = s.val_end + 4 * 30 * 24 * 4;
  } else {
    const Index train = static_cast<Index>(static_cast<double>(total) * 0.7);
    const Index test = static_cast<Index>(static_cast<double>(total) * 0.2);
    s.train_end = train;
    s.val_end = total - test;
    s.test_end = total;
  }
  s.validate(total);
  return s;
}

inline void fit_statistics(SplitSpec& s, const Matrix<double>& values) {
  const auto train = values.topRows(s.train_end);
  s.mean = train.colwise().mean();
  s.stdev.resize(values.cols());
  for (Index j = 0; j < values.cols(); ++j) {
    const double var = (train.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(train.rows());
    const double sd = std::sqrt(var);
    s.stdev(j) = sd > 1e-12 ? sd : 1.0;
  }
}

inline SplitSpec make_split(const SeriesFrame& f) {
  SplitSpec s = protocol_boundaries(f.name, f.steps());
  fit_statistics(s, f.values);
  return s;
}

/// Normalized series laid out variate-major, (D, test_end).
inline Matrix<double> normalize_series(const Matrix<double>& values, const SplitSpec& s) {
  Matrix<double> out(values.cols(), s.test_end);
  for (Index j = 0; j < values.cols(); ++j)
    out.row(j) = ((values.col(j).head(s.test_end).array() - s.mean(j)) / s.stdev(j)).transpose();
  return out;
}

inline Matrix<double> denormalize_series(const Matrix<double>& normalized, const SplitSpec& s) {
  Matrix<double> out(normalized.cols(), normalized.rows());
  for (Index j = 0; j < normalized.rows(); ++j)
    out.col(j) = (normalized.row(j).array() * s.stdev(j) + s.mean(j)).transpose();
  return out;
}

struct ForecastBatch {
  Tensor3<double> inputs;   // (B, D, L)
  Tensor3<double> targets;  // (B, D, H)
  const SplitSpec* stats = nullptr;

  Index size() const { return inputs.dim0(); }
};

/// Sliding windows over one split segment. Inputs and targets are read on
/// demand from a shared normalized series.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const Matrix<double>> series, const SplitSpec* stats, Index begin, Index end,
            Index lookback, Index horizon, Index stride)
      : series_(std::move(series)),
        stats_(stats),
        begin_(begin),
        end_(end),
        lookback_(lookback),
        horizon_(horizon),
        stride_(stride) {}

  Index count() const { return (end_ - begin_ - lookback_ - horizon_) / stride_ + 1; }
  Index variates() const { return series_->rows(); }
  Index lookback() const { return lookback_; }
  Index horizon() const { return horizon_; }
  Index start(Index i) const { return begin_ + i * stride_; }
  Index segment_begin() const { return begin_; }
  Index segment_end() const { return end_; }
  const Matrix<double>& series() const { return *series_; }

  auto input(Index i) const { return series_->middleCols(start(i), lookback_); }
  auto target(Index i) const { return series_->middleCols(start(i) + lookback_, horizon_); }

  /// A copy whose inputs are read from `source` (same layout), targets unchanged.
  WindowSet with_inputs(std::shared_ptr<const Matrix<double>> source) const {
    WindowSet w = *this;
    w.inputs_ = std::move(source);
    return w;
  }
  Matrix<double> input_window(Index i) const {
    const auto& src = inputs_ ? *inputs_ : *series_;
    return src.middleCols(start(i), lookback_);
  }

  ForecastBatch batch(std::span<const Index> indices) const {
    const Index b = static_cast<Index>(indices.size());
    ForecastBatch out{Tensor3<double>(b, variates(), lookback_), Tensor3<double>(b, variates(), horizon_), stats_};
    for (Index k = 0; k < b; ++k) {
      out.inputs.slice(k) = input_window(indices[static_cast<std::size_t>(k)]);
      out.targets.slice(k) = target(indices[static_cast<std::size_t>(k)]);
    }
    return out;
  }

 private:
  std::shared_ptr<const Matrix<double>> series_;
  std::shared_ptr<const Matrix<double>> inputs_;
  const SplitSpec* stats_ = nullptr;
  Index begin_ = 0, end_ = 0, lookback_ = 0, horizon_ = 0, stride_ = 1;
};

inline WindowSet make_windows(std::shared_ptr<const Matrix<double>> series, const SplitSpec& split, Split which,
                              const WindowSpec& ws, Index stride = 1) {
  ws.validate();
  if (stride <= 0) throw ConfigError("window stride must be positive");
  const Index need = ws.lookback + ws.horizon;
  if (split.length(which) < need)
    throw ConfigError(to_string(which) + " segment has " + std::to_string(split.length(which)) +
                      " steps, fewer than L + H = " + std::to_string(need));
  return WindowSet(std::move(series), &split, split.begin(which), split.end(which), ws.lookback, ws.horizon, stride);
}

/// A loaded frame with its split and normalized series, ready for windowing.
struct PreparedData {
  std::string name;
  SplitSpec split;
  std::shared_ptr<const Matrix<double>> series;

  Index variates() const { return series->rows(); }
  WindowSet windows(Split which, const WindowSpec& ws, Index stride = 1) const {
    return make_windows(series, split, which, ws, stride);
  }
};

inline PreparedData prepare(const SeriesFrame& f) {
  PreparedData p;
  p.name = f.name;
  p.split = make_split(f);
  p.series = std::make_shared<const Matrix<double>>(normalize_series(f.values, p.split));
  return p;
}

}  // namespace s2tx
