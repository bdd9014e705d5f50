#include "abe/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "abe/errors.hpp"

namespace abe {

PathAccumulator::PathAccumulator(const ExplanationTask& task, const Tensor& x, std::size_t label,
                                 UpdateMethod& update, std::size_t T, CoreOptions opts)
    : task_(task), update_(update), label_(label), opts_(opts) {
  if (T == 0) throw UsageError("T must be >= 1");
  require_finite(x, "input");
  if (update.attack() && update.config().targeted) {
    throw UsageError("targeted updates are not supported inside the attribution loop");
  }
  position_ = update_.begin(x, T);
  segment_start_ = position_;
  attribution_ = Tensor(x.shape(), 0.0);
}

void PathAccumulator::advance(std::size_t steps) {
  const double radius = opts_.trust_radius_fraction * task_.range();
  for (std::size_t s = 0; s < steps; ++s) {
    ScalarGrad sg = task_.scalar_and_grad(position_, label_, opts_.objective);
    Tensor ascent = update_.attack() ? scaled(sg.grad, -1.0) : sg.grad;
    Tensor delta = update_.step(position_, ascent);
    require_finite(delta, "update step");
    const double m = max_abs(delta);
    if (m > radius) {
      exceeded_ = true;
      max_step_ = std::max(max_step_, m);
    }
    auto a = attribution_.data();
    auto p = position_.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] += delta[i] * sg.grad[i];
      p[i] += delta[i];
    }
    ++steps_;
  }
}

void PathAccumulator::restart_segment() {
  segment_start_ = position_;
  attribution_ = Tensor(position_.shape(), 0.0);
}

AttributionResult PathAccumulator::result(std::string method_name) const {
  AttributionResult r;
  r.attribution = attribution_;
  r.method_name = std::move(method_name);
  r.steps_taken = steps_;
  r.label = label_;
  r.objective = opts_.objective;
  r.endpoints = PathEndpoints{segment_start_, position_};
  r.input = position_;
  r.references = {segment_start_};
  r.trust_radius_exceeded = exceeded_;
  if (exceeded_) {
    std::ostringstream msg;
    msg << "step size " << max_step_ << " exceeds trust radius " << opts_.trust_radius_fraction * task_.range();
    r.warnings.push_back(msg.str());
  }
  r.completeness_residual = completeness_residual(task_, r);
  return r;
}

AttributionResult fundamental_attribute(const ExplanationTask& task, const Tensor& x, std::size_t label,
                                        UpdateMethod& update, std::size_t T, CoreOptions opts) {
  PathAccumulator acc(task, x, label, update, T, opts);
  acc.advance(T);
  return acc.result("fundamental:" + to_string(update.kind()));
}

double completeness_residual(const ExplanationTask& task, const AttributionResult& result) {
  if (!result.has_completeness()) {
    throw UsageError("completeness is not defined for method '" + result.method_name + "'");
  }
  double ref = 0.0;
  for (const Tensor& r : result.references) ref += task.scalar_value(r, result.label, result.objective);
  ref /= static_cast<double>(result.references.size());
  const double target = task.scalar_value(result.input, result.label, result.objective) - ref;
  const double residual = std::abs(sum(result.attribution) - target);
  if (!std::isfinite(residual)) throw NumericalError("non-finite completeness residual");
  return residual;
}

}  // namespace abe
