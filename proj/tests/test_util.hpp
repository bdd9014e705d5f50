#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "abe/autodiff.hpp"
#include "abe/tensor.hpp"

namespace abe::testing {

/// Central finite differences of a scalar function of x. Evaluates `f` only;
/// it never touches the tape's backward machinery.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-6) {
  Tensor g(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// Autodiff gradient of a scalar-valued graph with respect to its input.
inline Tensor autodiff_gradient(const std::function<Var(Tape&, Var)>& f, const Tensor& x) {
  Tape tape;
  Var in = tape.variable(x);
  tape.backward(f(tape, in));
  return tape.gradient(in);
}

inline double eval_scalar(const std::function<Var(Tape&, Var)>& f, const Tensor& x) {
  return no_grad_eval(f, x).item();
}

}  // namespace abe::testing
