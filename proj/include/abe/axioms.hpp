#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "abe/methods.hpp"
#include "abe/model.hpp"
#include "abe/task.hpp"

namespace abe {

enum class Axiom { Sensitivity, ImplementationInvariance, Complete, Linear };

std::string to_string(Axiom axiom);

inline constexpr std::size_t kNoFeature = std::numeric_limits<std::size_t>::max();

/// Counterexample record. `values` is check-specific:
///   Sensitivity              {A_j, f(x) - f(x')}
///   ImplementationInvariance {A_j on model a, A_j on model b}
///   Complete                 {residual, allowed bound}
///   Linear                   {A_j, theta_j (x_j - x'_j)}
struct AxiomWitness {
  std::size_t instance = 0;  // family member, probe or sample index
  Tensor input;
  Tensor baseline;
  std::size_t feature = kNoFeature;
  std::vector<double> values;
};

struct AxiomVerdict {
  Axiom axiom = Axiom::Sensitivity;
  std::string method;
  bool holds = true;
  /// The method cannot be evaluated under this axiom (no path endpoints,
  /// model internals missing). Distinct from holds = false.
  bool not_applicable = false;
  std::optional<AxiomWitness> witness;
  double tolerance = 0.0;
  std::size_t checked = 0;  // non-vacuous instances evaluated
  std::size_t passed = 0;
  std::string note;
  /// Recomputes the witness values from scratch; set whenever witness is.
  std::function<std::vector<double>()> replay;
};

/// Knobs forwarded to every method call made by the checks. Unset attack
/// step sizes fall back to UpdateConfig::for_range of the instance's task.
struct AxiomOptions {
  std::size_t T = 50;
  std::uint64_t seed = 0;
  UpdateKind attack = UpdateKind::PGD;
  std::size_t attack_steps = 10;
  std::optional<double> epsilon;
  std::optional<double> alpha;
  std::optional<double> sigma;
  std::size_t n_samples = 50;
  std::size_t jobs = 1;
  Objective objective = Objective::TargetLogit;
};

/// Method parameters for one check instance.
MethodParams axiom_params(const AxiomOptions& opts, const ExplanationTask& task, const Tensor& baseline,
                          std::uint64_t seed);

/// One function in which only `feature` differs between input and baseline.
struct SensitivityInstance {
  std::string description;
  ExplanationTask task;
  Tensor input;
  Tensor baseline;
  std::size_t label = 1;
  std::size_t feature = 0;
};

/// 20 instances cycling through quadratic, affine and ReLU dependence on
/// the differing feature, with a bilinear term in the other features.
std::vector<SensitivityInstance> sensitivity_family(std::uint64_t seed = 0);

AxiomVerdict check_sensitivity(const std::string& method, const std::vector<SensitivityInstance>& family,
                               const AxiomOptions& opts = {}, double tolerance = 1e-8);

/// `pair` must compute the same function; verified on the probes first
/// (PreconditionError otherwise). Attributions must agree within
/// tolerance * max(1, |a|, |b|) elementwise on every probe.
AxiomVerdict check_implementation_invariance(const std::string& method, const std::pair<Model, Model>& pair,
                                             double range_lo, double range_hi, const AxiomOptions& opts = {},
                                             std::size_t n_probes = 100, double tolerance = 1e-8);

/// Holds iff residual <= tolerance * max(1, |f(input) - mean f(references)|)
/// on every sample, explaining the predicted class.
AxiomVerdict check_complete(const std::string& method, const ExplanationTask& task,
                            const std::vector<Tensor>& samples, double tolerance, const AxiomOptions& opts = {});

/// f(x) = theta . x on logit 1 of a two-class task, baseline x' = 0.
struct LinearInstance {
  Tensor theta;
  Tensor input;
  Tensor baseline;
  double range_lo = -2.0;
  double range_hi = 2.0;
};

ExplanationTask linear_instance_task(const LinearInstance& inst);

/// Starts with theta = (2, 3) and theta = (10, 0.1) at x = (1, 1), then
/// theta = 0, then seeded random instances.
std::vector<LinearInstance> linear_family(std::uint64_t seed = 0);

AxiomVerdict check_linear(const std::string& method, const std::vector<LinearInstance>& family,
                          const AxiomOptions& opts = {}, double tolerance = 1e-8);
AxiomVerdict check_linear(const std::string& method, const AxiomOptions& opts = {});

/// A declared flag disagrees when the method claims the axiom and the
/// verdict is false. Undeclared axioms are reported but never disagree.
bool flag_disagrees(const MethodSpec& spec, const AxiomVerdict& verdict);

}  // namespace abe
