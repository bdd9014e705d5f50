#include "abe/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "abe/errors.hpp"
#include "abe/parallel.hpp"
#include "abe/random.hpp"

namespace abe {

std::string to_string(Ranking ranking) { return ranking == Ranking::Magnitude ? "magnitude" : "signed"; }

std::vector<std::size_t> rank_features(const Tensor& attribution, Ranking ranking) {
  std::vector<std::size_t> order(attribution.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) { return ranking == Ranking::Magnitude ? std::abs(attribution[i]) : attribution[i]; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  return order;
}

double trapezoid_auc(const std::vector<double>& fractions, const std::vector<double>& scores) {
  if (fractions.size() != scores.size() || fractions.size() < 2) {
    throw UsageError("trapezoid_auc needs matching arrays of at least 2 points");
  }
  double auc = 0.0;
  for (std::size_t i = 1; i < fractions.size(); ++i) {
    auc += 0.5 * (fractions[i] - fractions[i - 1]) * (scores[i] + scores[i - 1]);
  }
  return auc;
}

namespace {

enum class Direction { Insert, Delete };

PerturbationCurve perturbation_curve(const ExplanationTask& task, const Tensor& x, const Tensor& attribution,
                                     const CurveOptions& opts, Direction dir) {
  if (opts.K < 2) throw UsageError("curve needs K >= 2");
  require_same_shape(attribution, x, "attribution");
  require_finite(attribution, "attribution");
  const Tensor base = opts.baseline ? *opts.baseline : Tensor(x.shape(), 0.0);
  require_same_shape(base, x, "curve baseline");
  const std::size_t cls = task.predict(x);
  const std::vector<std::size_t> order = rank_features(attribution, opts.ranking);
  const std::size_t d = x.size();

  auto score = [&](const Tensor& v) {
    return opts.score == CurveScore::Probability ? task.probabilities(v)[cls] : task.logits(v)[cls];
  };

  PerturbationCurve curve;
  Tensor current = dir == Direction::Insert ? base : x;
  const Tensor& source = dir == Direction::Insert ? x : base;
  std::size_t done = 0;
  for (std::size_t k = 0; k <= opts.K; ++k) {
    const std::size_t target = k * d / opts.K;
    for (; done < target; ++done) current[order[done]] = source[order[done]];
    curve.fractions.push_back(static_cast<double>(k) / static_cast<double>(opts.K));
    curve.scores.push_back(score(current));
  }
  curve.auc = trapezoid_auc(curve.fractions, curve.scores);
  return curve;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

}  // namespace

PerturbationCurve insertion_curve(const ExplanationTask& task, const Tensor& x, const Tensor& attribution,
                                  const CurveOptions& opts) {
  return perturbation_curve(task, x, attribution, opts, Direction::Insert);
}

PerturbationCurve deletion_curve(const ExplanationTask& task, const Tensor& x, const Tensor& attribution,
                                 CurveOptions opts) {
  return perturbation_curve(task, x, attribution, opts, Direction::Delete);
}

double infd_score(const ExplanationTask& task, const Tensor& x, std::size_t label, const Tensor& attribution,
                  std::size_t n_probes, double delta, std::uint64_t seed, Objective objective) {
  if (n_probes == 0) throw UsageError("infd needs n_probes >= 1");
  if (!(delta > 0) || !std::isfinite(delta)) throw UsageError("infd needs delta > 0");
  require_same_shape(attribution, x, "attribution");
  Rng rng = make_rng(seed, 5);
  const double fx = task.scalar_value(x, label, objective);
  double total = 0.0;
  for (std::size_t p = 0; p < n_probes; ++p) {
    Tensor probe = uniform_tensor(x.shape(), -delta, delta, rng);
    const double predicted = dot(probe, attribution);
    const double actual = fx - task.scalar_value(x - probe, label, objective);
    total += (predicted - actual) * (predicted - actual);
  }
  return total / static_cast<double>(n_probes);
}

ThroughputResult throughput(const AttributionFn& method, const ExplanationTask& task, const Dataset& data,
                            const MethodParams& params, std::size_t warmup, std::size_t reps) {
  if (reps == 0) throw UsageError("throughput needs reps >= 1");
  if (data.size() == 0) throw DataError("throughput: empty dataset");
  auto explain = [&](std::size_t i) {
    const Tensor& x = data.inputs[i % data.size()];
    return method(task, x, task.predict(x), params);
  };
  for (std::size_t w = 0; w < warmup; ++w) explain(w);
  ThroughputResult out;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < data.size(); ++i) explain(i);
    const std::chrono::duration<double> secs = std::chrono::steady_clock::now() - start;
    out.rep_fps.push_back(static_cast<double>(data.size()) / std::max(secs.count(), 1e-9));
  }
  std::vector<double> sorted = out.rep_fps;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  out.fps = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return out;
}

MetricReport evaluate_method(const ExplanationTask& task, const std::string& model_name, const std::string& method,
                             const Dataset& data, const MetricConfig& cfg, std::vector<SampleMetrics>* per_sample) {
  const MethodEntry& entry = find_method(method);
  const std::size_t n = std::min(cfg.n_samples, data.size());
  if (n == 0) throw DataError("evaluate_method: no samples");

  std::vector<SampleMetrics> samples(n);
  std::vector<std::optional<double>> residuals(n);
  CurveOptions ins_opts;
  ins_opts.K = cfg.K;
  ins_opts.ranking = cfg.insertion_ranking;
  ins_opts.score = cfg.score;
  CurveOptions del_opts = ins_opts;
  del_opts.ranking = cfg.deletion_ranking;
  const double delta = cfg.delta_fraction * task.range();

  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    const Tensor& x = data.inputs[i];
    MethodParams p = cfg.params;
    p.seed = mix_seed(cfg.seed, i);
    SampleMetrics& s = samples[i];
    s.index = i;
    s.label = task.predict(x);
    AttributionResult r = entry.fn(task, x, s.label, p);
    s.insertion = insertion_curve(task, x, r.attribution, ins_opts);
    s.deletion = deletion_curve(task, x, r.attribution, del_opts);
    if (cfg.compute_infd) {
      s.infd = infd_score(task, x, s.label, r.attribution, cfg.n_probes, delta, mix_seed(cfg.seed, n + i),
                          cfg.params.objective);
    }
    if (r.has_completeness()) residuals[i] = r.completeness_residual;
  });

  MetricReport rep;
  rep.model_name = model_name;
  rep.method_name = entry.spec.name;
  rep.n_samples = n;
  std::vector<double> ins, del, infd, res;
  for (std::size_t i = 0; i < n; ++i) {
    ins.push_back(samples[i].insertion.auc);
    del.push_back(samples[i].deletion.auc);
    infd.push_back(samples[i].infd);
    if (residuals[i]) res.push_back(*residuals[i]);
  }
  rep.ins = mean_of(ins);
  rep.del = mean_of(del);
  rep.ins_se = std_error(ins);
  rep.del_se = std_error(del);
  rep.infd = mean_of(infd);
  if (res.size() == n) rep.mean_completeness_residual = mean_of(res);

  if (cfg.throughput_reps > 0) {
    MethodParams p = cfg.params;
    p.seed = cfg.seed;
    const Dataset timed = data.slice(0, std::min(cfg.throughput_samples, n));
    rep.fps = throughput(entry.fn, task, timed, p, cfg.throughput_warmup, cfg.throughput_reps).fps;
  }
  if (cfg.robust_accuracy) {
    UpdateConfig ac = cfg.params.attack_cfg;
    ac.seed = cfg.seed;
    rep.robust_acc = robust_accuracy(task, data.slice(0, n), UpdateKind::PGD, ac);
  }
  if (per_sample) *per_sample = std::move(samples);
  return rep;
}

const std::vector<UpdateKind>& sweep_updates() {
  static const std::vector<UpdateKind> kinds = {UpdateKind::LinearPath, UpdateKind::FGSM, UpdateKind::BIM,
                                                UpdateKind::PGD, UpdateKind::MIM};
  return kinds;
}

BenchmarkTable benchmark(const std::vector<NamedTask>& models, const std::vector<std::string>& methods,
                         const Dataset& data, const MetricConfig& cfg, const std::string& sweep_model) {
  for (const auto& m : methods) find_method(m);
  BenchmarkTable table;
  auto cell = [&](const NamedTask& nt, const std::string& method, const MetricConfig& c) {
    try {
      return evaluate_method(nt.task, nt.name, method, data, c);
    } catch (const std::exception& e) {
      MetricReport failed;
      failed.model_name = nt.name;
      failed.method_name = method;
      failed.error = e.what();
      return failed;
    }
  };
  for (const auto& nt : models)
    for (const auto& method : methods) table.grid.push_back(cell(nt, method, cfg));

  if (!sweep_model.empty()) {
    auto it = std::find_if(models.begin(), models.end(), [&](const NamedTask& nt) { return nt.name == sweep_model; });
    if (it == models.end()) throw UsageError("sweep model '" + sweep_model + "' is not in the benchmark");
    table.sweep_model = sweep_model;
    for (UpdateKind kind : sweep_updates()) {
      MetricConfig c = cfg;
      c.params.attack = kind;
      MetricReport r = cell(*it, "MFABA", c);
      r.update_name = to_string(kind);
      table.update_sweep.push_back(r);
    }
  }
  return table;
}

}  // namespace abe
