#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "abe/dataset.hpp"
#include "abe/random.hpp"
#include "abe/task.hpp"
#include "abe/tensor.hpp"

namespace abe {

enum class UpdateKind { LinearPath, GaussianNoise, FGSM, BIM, PGD, MIM };

std::string to_string(UpdateKind kind);
UpdateKind parse_update_kind(const std::string& name);
bool is_attack(UpdateKind kind);

struct UpdateConfig {
  double epsilon = 16.0 / 255.0;
  double alpha = 1.6 / 255.0;
  std::size_t steps = 10;
  double momentum_decay = 1.0;
  std::uint64_t seed = 0;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;
  bool targeted = false;
  std::size_t target = 0;
  /// LinearPath start point; zeros (clamped into range) when unset.
  std::optional<Tensor> baseline;

  /// Standard attack defaults scaled to an input range [lo, hi].
  static UpdateConfig for_range(double lo, double hi);
  void validate() const;
};

/// Maps (x_t, raw gradient) to the gradient the step actually uses. Hook for
/// input-transformation attacks; identity when unset.
using GradientTransform = std::function<Tensor(const Tensor&, const Tensor&)>;

/// Stateful step generator. One instance per run: begin() resets the state.
class UpdateMethod {
 public:
  UpdateMethod(UpdateKind kind, UpdateConfig cfg);

  UpdateKind kind() const { return kind_; }
  const UpdateConfig& config() const { return cfg_; }
  bool attack() const { return is_attack(kind_); }

  void set_gradient_transform(GradientTransform transform) { transform_ = std::move(transform); }

  /// Starts a run explaining or attacking `x` over `T` steps and returns x⁰:
  /// the baseline for LinearPath, `x` itself otherwise.
  Tensor begin(const Tensor& x, std::size_t T);

  /// Δx for the current point. Sign-based kinds ascend `grad`.
  Tensor step(const Tensor& x_t, const Tensor& grad);

  const Tensor& origin() const { return origin_; }

 private:
  Tensor project(const Tensor& x_t, Tensor delta) const;

  UpdateKind kind_;
  UpdateConfig cfg_;
  GradientTransform transform_;
  Tensor origin_;
  Tensor path_delta_;
  Tensor momentum_;
  Rng rng_;
  std::size_t t_ = 0;
  std::size_t T_ = 0;
  bool started_ = false;
};

/// sign with sign(0) = 0.
Tensor sign(const Tensor& t);

struct AttackResult {
  Tensor x_adv;
  bool success = false;
  std::size_t query_count = 0;
  std::size_t steps_taken = 0;
};

/// Ascends the cross-entropy of `label` (untargeted) or descends that of
/// cfg.target (targeted) for cfg.steps steps. With `stop_on_success` the run
/// ends at the first point meeting the success criterion.
AttackResult run_attack(const ExplanationTask& task, const Tensor& x, std::size_t label, UpdateMethod& method,
                        bool stop_on_success = false);

/// Fraction of samples whose argmax prediction survives the attack. Each
/// sample gets a fresh method seeded with mix_seed(cfg.seed, index).
double robust_accuracy(const ExplanationTask& task, const Dataset& data, UpdateKind kind, const UpdateConfig& cfg);

}  // namespace abe
