#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "abe/dataset.hpp"
#include "abe/methods.hpp"
#include "abe/task.hpp"

namespace abe {

enum class Ranking { Magnitude, Signed };
/// Curve score: softmax probability of the predicted class, or its raw logit.
enum class CurveScore { Probability, Logit };

std::string to_string(Ranking ranking);

struct PerturbationCurve {
  std::vector<double> fractions;
  std::vector<double> scores;
  double auc = 0.0;
};

struct CurveOptions {
  std::size_t K = 20;
  /// Zeros when unset.
  std::optional<Tensor> baseline;
  Ranking ranking = Ranking::Magnitude;
  CurveScore score = CurveScore::Probability;
};

inline CurveOptions signed_curve_options() {
  CurveOptions o;
  o.ranking = Ranking::Signed;
  return o;
}

/// Feature indices by descending key (|A| or A); ties by ascending index.
std::vector<std::size_t> rank_features(const Tensor& attribution, Ranking ranking);

double trapezoid_auc(const std::vector<double>& fractions, const std::vector<double>& scores);

/// Reveals the top (k/K)·d features of x over the baseline, k = 0..K.
PerturbationCurve insertion_curve(const ExplanationTask& task, const Tensor& x, const Tensor& attribution,
                                  const CurveOptions& opts = {});

/// Replaces the top (k/K)·d features of x by the baseline, k = 0..K.
/// Default ranking is signed (removes positive evidence first).
PerturbationCurve deletion_curve(const ExplanationTask& task, const Tensor& x, const Tensor& attribution,
                                 CurveOptions opts = signed_curve_options());

/// Mean over probes I ~ U[-delta, delta]^d of (I·A - (f(x) - f(x - I)))^2
/// where f is the label's scalar.
double infd_score(const ExplanationTask& task, const Tensor& x, std::size_t label, const Tensor& attribution,
                  std::size_t n_probes, double delta, std::uint64_t seed,
                  Objective objective = Objective::TargetLogit);

struct ThroughputResult {
  double fps = 0.0;
  std::vector<double> rep_fps;
};

/// Explanations per second over the dataset, median of `reps` timed passes
/// after `warmup` untimed explanations. Always single-threaded.
ThroughputResult throughput(const AttributionFn& method, const ExplanationTask& task, const Dataset& data,
                            const MethodParams& params, std::size_t warmup, std::size_t reps);

struct MetricReport {
  std::string model_name;
  std::string method_name;
  std::string update_name;  // set for update-method sweep rows
  std::size_t n_samples = 0;
  double ins = 0.0;
  double del = 0.0;
  double ins_se = 0.0;
  double del_se = 0.0;
  double infd = 0.0;
  double fps = 0.0;
  std::optional<double> robust_acc;
  std::optional<double> mean_completeness_residual;
  std::string error;  // non-empty when the cell failed
};

struct MetricConfig {
  std::size_t n_samples = 20;
  std::size_t K = 20;
  std::size_t n_probes = 64;
  double delta_fraction = 0.2;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  Ranking insertion_ranking = Ranking::Magnitude;
  Ranking deletion_ranking = Ranking::Signed;
  CurveScore score = CurveScore::Probability;
  bool compute_infd = true;
  std::size_t throughput_warmup = 1;
  std::size_t throughput_reps = 3;
  /// Samples timed per throughput rep (a prefix of the evaluated samples).
  std::size_t throughput_samples = 5;
  bool robust_accuracy = false;
  MethodParams params;
};

/// Per-sample outputs kept for curve dumps and paired comparisons.
struct SampleMetrics {
  std::size_t index = 0;
  std::size_t label = 0;
  PerturbationCurve insertion;
  PerturbationCurve deletion;
  double infd = 0.0;
};

/// Explains the predicted class of the first n_samples inputs. Each sample's
/// method seed is mix_seed(cfg.seed, i).
MetricReport evaluate_method(const ExplanationTask& task, const std::string& model_name, const std::string& method,
                             const Dataset& data, const MetricConfig& cfg,
                             std::vector<SampleMetrics>* per_sample = nullptr);

struct NamedTask {
  std::string name;
  ExplanationTask task;
};

struct BenchmarkTable {
  std::vector<MetricReport> grid;
  /// adversarial_path under each update kind on `sweep_model`; empty if unset.
  std::vector<MetricReport> update_sweep;
  std::string sweep_model;
};

/// Update kinds of the sweep, baseline row first.
const std::vector<UpdateKind>& sweep_updates();

BenchmarkTable benchmark(const std::vector<NamedTask>& models, const std::vector<std::string>& methods,
                         const Dataset& data, const MetricConfig& cfg, const std::string& sweep_model = "");

}  // namespace abe
