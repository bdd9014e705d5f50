#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "abe/task.hpp"
#include "abe/tensor.hpp"
#include "abe/update.hpp"

namespace abe {

struct PathEndpoints {
  Tensor start;
  Tensor end;
};

struct AttributionResult {
  Tensor attribution;
  std::string method_name;
  std::size_t steps_taken = 0;
  std::size_t label = 0;
  Objective objective = Objective::TargetLogit;
  /// Path actually walked by the update method, when there is one.
  std::optional<PathEndpoints> endpoints;
  /// Completeness compares sum(A) with f(input) - mean_r f(r) over `references`.
  /// Empty references means completeness is not defined for the method.
  Tensor input;
  std::vector<Tensor> references;
  double completeness_residual = 0.0;
  bool trust_radius_exceeded = false;
  /// Set when a method fell back to a secondary strategy (BIG without a flip).
  bool fallback_used = false;
  std::vector<std::string> warnings;

  bool has_completeness() const { return !references.empty(); }
};

struct CoreOptions {
  Objective objective = Objective::TargetLogit;
  /// Warn when any step has max|Δx| above this fraction of the input range.
  double trust_radius_fraction = 0.25;
};

/// Stepwise form of the fundamental method. Each advance() accumulates
/// Δx ⊙ ∇f(x_t) and moves x_t by Δx; restart_segment() zeroes the running map
/// so a path can be split into consecutive segments.
class PathAccumulator {
 public:
  PathAccumulator(const ExplanationTask& task, const Tensor& x, std::size_t label, UpdateMethod& update,
                  std::size_t T, CoreOptions opts = {});

  void advance(std::size_t steps);
  void restart_segment();

  const Tensor& attribution() const { return attribution_; }
  const Tensor& position() const { return position_; }
  std::size_t steps_taken() const { return steps_; }

  /// Oriented from the segment start to the current position.
  AttributionResult result(std::string method_name) const;

 private:
  const ExplanationTask& task_;
  UpdateMethod& update_;
  std::size_t label_;
  CoreOptions opts_;
  Tensor segment_start_;
  Tensor position_;
  Tensor attribution_;
  std::size_t steps_ = 0;
  bool exceeded_ = false;
  double max_step_ = 0.0;
};

/// Runs T update steps from update.begin(x, T). Attack kinds descend the
/// scalar; the walk starts at x and the result is oriented from x⁰ to x^T.
AttributionResult fundamental_attribute(const ExplanationTask& task, const Tensor& x, std::size_t label,
                                        UpdateMethod& update, std::size_t T, CoreOptions opts = {});

/// |sum(A) - (f(input) - mean f(references))| for the result's scalar.
/// Throws UsageError when the result has no references.
double completeness_residual(const ExplanationTask& task, const AttributionResult& result);

}  // namespace abe
