#pragma once

#include <cmath>
#include <map>
#include <string>

#include "s2tx/core/params.hpp"

namespace s2tx {

/// Adam with bias correction. Moment buffers are keyed by parameter name.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Matrix<double>> m;
  std::map<std::string, Matrix<double>> v;

  template <class Module>
  void apply(Module& module) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    module.visit("", ParamVisitor<double>([&](const std::string& name, Param<double>& p) {
      auto& mm = m[name];
      auto& vv = v[name];
      if (mm.size() == 0) {
        mm = Matrix<double>::Zero(p.value.rows(), p.value.cols());
        vv = Matrix<double>::Zero(p.value.rows(), p.value.cols());
      }
      mm = beta1 * mm + (1.0 - beta1) * p.grad;
      vv = beta2 * vv + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
      if (lr == 0.0) return;
      p.value.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
    }));
  }
};

}  // namespace s2tx
