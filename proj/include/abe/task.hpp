#pragma once

#include <cstddef>
#include <functional>
#include <memory>

#include "abe/autodiff.hpp"
#include "abe/model.hpp"
#include "abe/tensor.hpp"

namespace abe {

enum class TaskTag { ImageClassification, TabularClassification };

/// Scalar whose input gradient is accumulated. TargetLogit is logits[label];
/// NegCrossEntropy is -loss(x, label).
enum class Objective { TargetLogit, NegCrossEntropy };

std::string to_string(Objective objective);
std::string to_string(TaskTag tag);

using ForwardFn = std::function<Var(Tape&, Var)>;
using LossFn = std::function<Var(Tape&, Var, std::size_t)>;

struct ScalarGrad {
  double value = 0.0;
  Tensor grad;
};

/// Forward and loss closures plus the metadata every attribution method needs.
/// Closures must be pure; a task is shared read-only between concurrent jobs.
struct ExplanationTask {
  ForwardFn forward;
  LossFn loss;
  TaskTag tag = TaskTag::TabularClassification;
  double range_lo = 0.0;
  double range_hi = 1.0;
  /// Present when the task wraps a zoo model; Grad-CAM needs its internals.
  std::shared_ptr<const Model> model;

  double range() const { return range_hi - range_lo; }

  Var scalar(Tape& tape, Var x, std::size_t label, Objective objective) const;
  double scalar_value(const Tensor& x, std::size_t label, Objective objective) const;
  /// Zero gradient when the scalar does not depend on x.
  ScalarGrad scalar_and_grad(const Tensor& x, std::size_t label, Objective objective) const;

  Tensor logits(const Tensor& x) const;
  Tensor probabilities(const Tensor& x) const;
  std::size_t predict(const Tensor& x) const;
};

/// Task over a zoo model; the loss is cross-entropy of its logits.
ExplanationTask make_task(const Model& model, double range_lo, double range_hi);

/// Task over arbitrary closures (constructed axiom instances, demo functions).
ExplanationTask make_function_task(ForwardFn forward, double range_lo, double range_hi,
                                   TaskTag tag = TaskTag::TabularClassification);

}  // namespace abe
