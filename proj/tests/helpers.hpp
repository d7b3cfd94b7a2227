#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "transcp/autodiff.hpp"
#include "transcp/rng.hpp"
#include "transcp/tensor.hpp"

namespace testutil {

using transcp::Rng;
using transcp::Tensor;
using transcp::Var;

inline Tensor<double> random_tensor(Rng& rng, std::vector<size_t> shape,
                                    double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline bool close_rel(double a, double b, double rtol, double atol = 1e-9) {
  return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
}

// Compares reverse-mode gradients of a scalar-valued graph against central
// finite differences, element by element, at double precision. `build` must
// construct a fresh graph from the given leaves each call.
using BuildFn =
    std::function<Var<double>(const std::vector<Var<double>>&)>;

struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0.0;
  size_t bad_input = 0, bad_elem = 0;
  double analytic = 0.0, numeric = 0.0;
};

inline GradCheckResult check_gradients(std::vector<Tensor<double>> inputs,
                                       const BuildFn& build,
                                       double rtol = 1e-5,
                                       double atol = 1e-8,
                                       double h_scale = 1e-6) {
  // Analytic gradients.
  std::vector<Var<double>> leaves;
  for (auto& t : inputs) leaves.push_back(transcp::leaf(t, true));
  Var<double> loss = build(leaves);
  transcp::backward(loss);

  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    std::vector<Var<double>> ls;
    for (const auto& t : xs) ls.push_back(transcp::leaf(t, false));
    return build(ls)->value[0];
  };

  GradCheckResult res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t e = 0; e < inputs[i].numel(); ++e) {
      double x0 = inputs[i][e];
      double h = h_scale * std::max(1.0, std::abs(x0));
      inputs[i][e] = x0 + h;
      double fp = eval(inputs);
      inputs[i][e] = x0 - h;
      double fm = eval(inputs);
      inputs[i][e] = x0;
      double fd = (fp - fm) / (2 * h);
      double an = leaves[i]->grad.empty() ? 0.0 : leaves[i]->grad[e];
      double denom = std::max(std::abs(fd), std::abs(an));
      double rel = std::abs(fd - an) / std::max(denom, 1e-12);
      if (std::abs(fd - an) > atol + rtol * denom) {
        if (rel > res.worst_rel) {
          res.ok = false;
          res.worst_rel = rel;
          res.bad_input = i;
          res.bad_elem = e;
          res.analytic = an;
          res.numeric = fd;
        }
      }
    }
  }
  return res;
}

}  // namespace testutil
