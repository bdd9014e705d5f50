#include "abe/task.hpp"

#include "abe/errors.hpp"

namespace abe {

std::string to_string(Objective objective) {
  return objective == Objective::TargetLogit ? "target_logit" : "neg_cross_entropy";
}

std::string to_string(TaskTag tag) {
  return tag == TaskTag::ImageClassification ? "ImageClassification" : "TabularClassification";
}

Var ExplanationTask::scalar(Tape& tape, Var x, std::size_t label, Objective objective) const {
  if (objective == Objective::NegCrossEntropy) return neg(loss(tape, x, label));
  Var logits = forward(tape, x);
  if (label >= logits.size()) {
    throw DataError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                    " outputs");
  }
  return index(logits, label);
}

double ExplanationTask::scalar_value(const Tensor& x, std::size_t label, Objective objective) const {
  return no_grad_eval([&](Tape& t, Var v) { return scalar(t, v, label, objective); }, x).item();
}

ScalarGrad ExplanationTask::scalar_and_grad(const Tensor& x, std::size_t label, Objective objective) const {
  Tape tape;
  Var in = tape.variable(x);
  Var s = scalar(tape, in, label, objective);
  if (!tape.requires_grad(s.id())) {
    // Output independent of the input: the gradient is identically zero.
    return {s.value().item(), Tensor(x.shape(), 0.0)};
  }
  tape.backward(s);
  ScalarGrad out{s.value().item(), tape.gradient(in)};
  if (!out.grad.all_finite()) throw NumericalError("non-finite input gradient");
  return out;
}

Tensor ExplanationTask::logits(const Tensor& x) const { return no_grad_eval(forward, x); }

Tensor ExplanationTask::probabilities(const Tensor& x) const {
  return no_grad_eval([&](Tape& t, Var v) { return softmax(forward(t, v)); }, x);
}

std::size_t ExplanationTask::predict(const Tensor& x) const { return argmax(logits(x)); }

ExplanationTask make_task(const Model& model, double range_lo, double range_hi) {
  auto shared = std::make_shared<const Model>(model);
  ExplanationTask task;
  task.model = shared;
  task.forward = [shared](Tape& t, Var x) { return shared->forward(t, x); };
  task.loss = [shared](Tape& t, Var x, std::size_t label) {
    return cross_entropy(shared->forward(t, x), label);
  };
  task.tag = model.kind() == ModelKind::TinyCNN ? TaskTag::ImageClassification : TaskTag::TabularClassification;
  task.range_lo = range_lo;
  task.range_hi = range_hi;
  return task;
}

ExplanationTask make_function_task(ForwardFn forward, double range_lo, double range_hi, TaskTag tag) {
  ExplanationTask task;
  task.forward = forward;
  task.loss = [forward](Tape& t, Var x, std::size_t label) { return cross_entropy(forward(t, x), label); };
  task.tag = tag;
  task.range_lo = range_lo;
  task.range_hi = range_hi;
  return task;
}

}  // namespace abe
