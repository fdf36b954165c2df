#pragma once

#include <functional>
#include <vector>

#include "pldr/ops.hpp"
#include "pldr/tensor.hpp"

namespace pldr {

// Central difference check of reverse mode gradients. fn rebuilds the scalar
// loss from the current parameter values on every call. Returns the max over
// all coordinates of |fd - ad| / max(1, |fd|).
inline double grad_check(const std::function<Tensor<double>()>& fn,
                         std::vector<Tensor<double>> params, double step = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape<double>::Scope scope;
    Tensor<double> loss = fn();
    scope.tape.backward(loss);
    for (auto& p : params) analytic.push_back(p.grad());
  }
  double worst = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      double saved = p.data()[i];
      p.data()[i] = saved + step;
      double up = fn().item();
      p.data()[i] = saved - step;
      double down = fn().item();
      p.data()[i] = saved;
      double fd = (up - down) / (2 * step);
      double err = std::abs(fd - analytic[pi][i]) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace pldr
