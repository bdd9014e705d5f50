#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abe/attribution.hpp"
#include "abe/model.hpp"
#include "abe/task.hpp"
#include "abe/update.hpp"

namespace abe {

AttributionResult saliency_map(const ExplanationTask& task, const Tensor& x, std::size_t label,
                               Objective objective = Objective::TargetLogit);

AttributionResult smoothgrad(const ExplanationTask& task, const Tensor& x, std::size_t label, std::size_t n_samples,
                             double sigma, std::uint64_t seed, Objective objective = Objective::TargetLogit);

/// Left-Riemann path integral from `baseline` to `x` with T gradient points.
AttributionResult integrated_gradients(const ExplanationTask& task, const Tensor& x, std::size_t label,
                                       const Tensor& baseline, std::size_t T,
                                       Objective objective = Objective::TargetLogit);

/// Baselines are drawn without replacement in seeded rounds over the pool, so
/// n_draws that is a multiple of the pool size weights every entry equally.
AttributionResult expected_gradients(const ExplanationTask& task, const Tensor& x, std::size_t label,
                                     const std::vector<Tensor>& baseline_pool, std::size_t n_draws,
                                     std::uint64_t seed, Objective objective = Objective::TargetLogit);

struct BoundaryOptions {
  UpdateKind attack = UpdateKind::PGD;
  UpdateConfig attack_cfg;
  std::size_t T = 50;
  Tensor fallback_baseline;
  /// Bisect between x and x_adv to within 1e-3 of the crossing.
  bool refine = false;
  Objective objective = Objective::TargetLogit;
};

AttributionResult boundary_ig(const ExplanationTask& task, const Tensor& x, std::size_t label,
                              const BoundaryOptions& opts);

/// Gradients accumulated along the update trajectory. For updates that start
/// at x the map is oriented from the trajectory end back to x, so that
/// sum(A) = f(x) - f(x^T).
AttributionResult adversarial_path(const ExplanationTask& task, const Tensor& x, std::size_t label, UpdateKind kind,
                                   const UpdateConfig& cfg, Objective objective = Objective::TargetLogit);

/// Uses the deepest conv feature map with more than one spatial position.
AttributionResult grad_cam(const Model& model, const Tensor& x, std::size_t label);

AttributionResult rise(const ExplanationTask& task, const Tensor& x, std::size_t label, std::size_t n_masks,
                       double keep_prob, std::size_t cell_grid, std::uint64_t seed,
                       Objective objective = Objective::TargetLogit);

/// Standard-normal attribution; control for ranking metrics.
AttributionResult random_attribution(const Tensor& x, std::uint64_t seed);

struct AxiomFlags {
  bool sensitivity = false;
  bool implementation_invariance = false;
  bool complete = false;
};

struct MethodParams {
  std::size_t T = 50;
  std::size_t fig_T = 10;
  std::size_t n_samples = 50;
  double sigma = 0.15;
  std::size_t n_draws = 50;
  std::vector<Tensor> baseline_pool;  // EG; falls back to {baseline}
  Tensor baseline;
  UpdateKind attack = UpdateKind::PGD;
  UpdateConfig attack_cfg;
  bool big_refine = false;
  std::size_t n_masks = 500;
  double keep_prob = 0.5;
  std::size_t cell_grid = 4;
  std::uint64_t seed = 0;
  Objective objective = Objective::TargetLogit;

  /// Range-scaled defaults: sigma 0.15 of range, zero baseline clamped into
  /// range, attack defaults of UpdateConfig::for_range.
  static MethodParams defaults_for(const ExplanationTask& task, const Shape& input_shape);
};

using AttributionFn =
    std::function<AttributionResult(const ExplanationTask&, const Tensor&, std::size_t, const MethodParams&)>;

struct MethodSpec {
  std::string name;
  AxiomFlags flags;
  std::string summary;
  bool needs_model_internals = false;
};

struct MethodEntry {
  MethodSpec spec;
  AttributionFn fn;
};

const std::vector<MethodEntry>& method_registry();
/// Case-insensitive. Throws UsageError listing the registered names.
const MethodEntry& find_method(const std::string& name);
std::vector<std::string> method_names();

}  // namespace abe
