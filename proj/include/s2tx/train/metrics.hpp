#pragma once

#include <chrono>
#include <functional>
#include <vector>

#include "s2tx/data/windows.hpp"

namespace s2tx {

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> horizon_mse;  // one entry per forecast step
  std::vector<double> horizon_mae;
  double seconds = 0.0;
  Index windows = 0;
};

using Predictor = std::function<Matrix<double>(const Matrix<double>& window)>;

/// Mean squared and absolute error over every window, variate and step.
inline MetricReport evaluate(const Predictor& predict, const WindowSet& windows) {
  const auto t0 = std::chrono::steady_clock::now();
  const Index h = windows.horizon();
  Eigen::VectorXd se = Eigen::VectorXd::Zero(h), ae = Eigen::VectorXd::Zero(h);
  const Index n = windows.count();
  for (Index i = 0; i < n; ++i) {
    const Matrix<double> pred = predict(windows.input_window(i));
    const auto target = windows.target(i);
    require_shape(pred.rows() == target.rows() && pred.cols() == h, "prediction shape");
    const Matrix<double> err = pred - target;
    se += err.array().square().matrix().colwise().sum().transpose();
    ae += err.array().abs().matrix().colwise().sum().transpose();
  }
  MetricReport r;
  r.windows = n;
  const double cells = static_cast<double>(n * windows.variates());
  if (n > 0) {
    r.mse = se.sum() / (cells * static_cast<double>(h));
    r.mae = ae.sum() / (cells * static_cast<double>(h));
    for (Index k = 0; k < h; ++k) {
      r.horizon_mse.push_back(se(k) / cells);
      r.horizon_mae.push_back(ae(k) / cells);
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

template <class Model>
Predictor predictor_of(const Model& model) {
  return [&model](const Matrix<double>& w) { return model.forward(w).values; };
}

/// Repeats the last observed value over the horizon.
inline Predictor naive_last_value(Index horizon) {
  return [horizon](const Matrix<double>& w) {
    return Matrix<double>(w.col(w.cols() - 1).replicate(1, horizon));
  };
}

}  // namespace s2tx
