#include "abe/axioms.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "abe/errors.hpp"
#include "abe/parallel.hpp"
#include "abe/random.hpp"

namespace abe {

std::string to_string(Axiom axiom) {
  switch (axiom) {
    case Axiom::Sensitivity: return "Sensitivity";
    case Axiom::ImplementationInvariance: return "ImplementationInvariance";
    case Axiom::Complete: return "Complete";
    case Axiom::Linear: return "Linear";
  }
  return "?";
}

MethodParams axiom_params(const AxiomOptions& opts, const ExplanationTask& task, const Tensor& baseline,
                          std::uint64_t seed) {
  MethodParams p = MethodParams::defaults_for(task, baseline.shape());
  p.T = opts.T;
  p.baseline = baseline;
  p.baseline_pool = {baseline};
  p.attack = opts.attack;
  p.attack_cfg.steps = opts.attack_steps;
  if (opts.epsilon) {
    p.attack_cfg.epsilon = *opts.epsilon;
    p.attack_cfg.alpha = *opts.epsilon / 10.0;
  }
  if (opts.alpha) p.attack_cfg.alpha = *opts.alpha;
  if (opts.sigma) p.sigma = *opts.sigma;
  p.n_samples = opts.n_samples;
  p.seed = seed;
  p.objective = opts.objective;
  return p;
}

namespace {

// Two-class logits [0, z].
Var two_class(Tape& t, Var z) { return mul(gather(z, {0, 0}), t.constant(Tensor::vector({0.0, 1.0}))); }

std::size_t first_violation(const std::vector<std::optional<AxiomWitness>>& slots) {
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (slots[i]) return i;
  return slots.size();
}

AttributionResult run_method(const MethodEntry& entry, const ExplanationTask& task, const Tensor& x, std::size_t label,
                             const MethodParams& p) {
  return entry.fn(task, x, label, p);
}

std::optional<std::string> inapplicable(const MethodEntry& entry, const ExplanationTask& task) {
  if (entry.spec.needs_model_internals && (!task.model || task.model->kind() != ModelKind::TinyCNN)) {
    return entry.spec.name + " needs conv feature maps of a TinyCNN model";
  }
  return std::nullopt;
}

AxiomVerdict not_applicable(AxiomVerdict v, std::string note) {
  v.not_applicable = true;
  v.note = std::move(note);
  return v;
}

}  // namespace

std::vector<SensitivityInstance> sensitivity_family(std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x5E);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SensitivityInstance> family;
  const std::size_t d = 3;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t j = (i + i / 3) % d;
    const std::size_t k = (j + 1) % d, l = (j + 2) % d;
    const double a = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 1.5 * u(rng));
    Tensor x = uniform_tensor({d}, -1.0, 1.0, rng);
    Tensor base = x;
    SensitivityInstance inst;
    inst.feature = j;
    double c = 0.0;
    switch (i % 3) {
      case 0:  // a (x_j - c)^2, baseline at the vertex
        c = -0.2 + 0.4 * u(rng);
        base[j] = c;
        x[j] = c + (u(rng) < 0.5 ? -1.0 : 1.0) * (0.3 + 0.4 * u(rng));
        inst.description = "quadratic";
        break;
      case 1:  // a x_j
        base[j] = -0.5 + u(rng);
        x[j] = base[j] + (u(rng) < 0.5 ? -1.0 : 1.0) * (0.2 + 0.3 * u(rng));
        inst.description = "affine";
        break;
      default:  // a relu(x_j - c), baseline below the kink
        c = -0.3 + 0.6 * u(rng);
        base[j] = c - 0.1 - 0.5 * u(rng);
        x[j] = c + 0.1 + 0.5 * u(rng);
        inst.description = "relu";
        break;
    }
    const int kind = static_cast<int>(i % 3);
    inst.task = make_function_task(
        [=](Tape& t, Var v) {
          Var xj = index(v, j);
          Var g = kind == 0 ? mul(mul(add(xj, -c), add(xj, -c)), a)
                  : kind == 1 ? mul(xj, a)
                              : mul(relu(add(xj, -c)), a);
          Var z = add(g, mul(mul(index(v, k), index(v, l)), 0.5));
          return two_class(t, z);
        },
        -1.0, 1.0);
    inst.input = x;
    inst.baseline = base;
    inst.description += " in feature " + std::to_string(j);
    family.push_back(std::move(inst));
  }
  return family;
}

AxiomVerdict check_sensitivity(const std::string& method, const std::vector<SensitivityInstance>& family,
                               const AxiomOptions& opts, double tolerance) {
  const MethodEntry& entry = find_method(method);
  AxiomVerdict v;
  v.axiom = Axiom::Sensitivity;
  v.method = entry.spec.name;
  v.tolerance = tolerance;
  if (family.empty()) return not_applicable(v, "empty family");
  if (auto why = inapplicable(entry, family.front().task)) return not_applicable(v, *why);

  auto fam = std::make_shared<const std::vector<SensitivityInstance>>(family);
  auto evaluate = [&entry, fam, opts](std::size_t i) {
    const SensitivityInstance& inst = (*fam)[i];
    const MethodParams p = axiom_params(opts, inst.task, inst.baseline, mix_seed(opts.seed, i));
    const double a = run_method(entry, inst.task, inst.input, inst.label, p).attribution[inst.feature];
    const double df = inst.task.scalar_value(inst.input, inst.label, opts.objective) -
                      inst.task.scalar_value(inst.baseline, inst.label, opts.objective);
    return std::vector<double>{a, df};
  };

  std::vector<std::optional<AxiomWitness>> slots(family.size());
  std::vector<char> live(family.size(), 0);
  parallel_for(family.size(), opts.jobs, [&](std::size_t i) {
    const SensitivityInstance& inst = family[i];
    for (std::size_t f = 0; f < inst.input.size(); ++f) {
      if (f != inst.feature && inst.input[f] != inst.baseline[f]) {
        throw UsageError("sensitivity instance " + std::to_string(i) + " differs in more than one feature");
      }
    }
    std::vector<double> vals = evaluate(i);
    if (vals[1] == 0.0) return;  // output unchanged: nothing to check
    live[i] = 1;
    if (!(std::abs(vals[0]) > tolerance)) {
      slots[i] = AxiomWitness{i, inst.input, inst.baseline, inst.feature, std::move(vals)};
    }
  });
  v.checked = static_cast<std::size_t>(std::count(live.begin(), live.end(), 1));
  v.passed = v.checked;
  for (const auto& s : slots) v.passed -= s.has_value();
  const std::size_t bad = first_violation(slots);
  if (bad < slots.size()) {
    v.holds = false;
    v.witness = slots[bad];
    v.note = family[bad].description;
    v.replay = [evaluate, bad] { return evaluate(bad); };
  } else if (v.checked == 0) {
    v.note = "vacuous: no instance changes the output";
  }
  return v;
}

AxiomVerdict check_implementation_invariance(const std::string& method, const std::pair<Model, Model>& pair,
                                             double range_lo, double range_hi, const AxiomOptions& opts,
                                             std::size_t n_probes, double tolerance) {
  const MethodEntry& entry = find_method(method);
  auto ta = std::make_shared<ExplanationTask>(make_task(pair.first, range_lo, range_hi));
  auto tb = std::make_shared<ExplanationTask>(make_task(pair.second, range_lo, range_hi));
  const Shape shape = pair.first.hyper().input_shape;
  if (shape != pair.second.hyper().input_shape || pair.first.num_classes() != pair.second.num_classes()) {
    throw PreconditionError("implementation invariance: models differ in input shape or class count");
  }

  Rng rng = make_rng(opts.seed, 0x11);
  std::vector<Tensor> probes;
  for (std::size_t i = 0; i < n_probes; ++i) probes.push_back(uniform_tensor(shape, range_lo, range_hi, rng));
  for (std::size_t i = 0; i < n_probes; ++i) {
    const Tensor la = ta->logits(probes[i]), lb = tb->logits(probes[i]);
    for (std::size_t c = 0; c < la.size(); ++c) {
      if (std::abs(la[c] - lb[c]) > 1e-9 * std::max({1.0, std::abs(la[c]), std::abs(lb[c])})) {
        throw PreconditionError("implementation invariance: models are not functionally equal (probe " +
                                std::to_string(i) + ", logit " + std::to_string(c) + ")");
      }
    }
  }

  AxiomVerdict v;
  v.axiom = Axiom::ImplementationInvariance;
  v.method = entry.spec.name;
  v.tolerance = tolerance;
  if (auto why = inapplicable(entry, *ta)) return not_applicable(v, *why);

  auto attribute = [&entry, ta, tb, opts](const Tensor& x, std::uint64_t seed) {
    const std::size_t label = ta->predict(x);
    const MethodParams pa = axiom_params(opts, *ta, Tensor(x.shape(), std::clamp(0.0, ta->range_lo, ta->range_hi)), seed);
    return std::pair{run_method(entry, *ta, x, label, pa).attribution, run_method(entry, *tb, x, label, pa).attribution};
  };

  std::vector<std::optional<AxiomWitness>> slots(n_probes);
  parallel_for(n_probes, opts.jobs, [&](std::size_t i) {
    const auto [a, b] = attribute(probes[i], mix_seed(opts.seed, i));
    for (std::size_t f = 0; f < a.size(); ++f) {
      if (!(std::abs(a[f] - b[f]) <= tolerance * std::max({1.0, std::abs(a[f]), std::abs(b[f])}))) {
        const Tensor base(probes[i].shape(), std::clamp(0.0, range_lo, range_hi));
        slots[i] = AxiomWitness{i, probes[i], base, f, {a[f], b[f]}};
        return;
      }
    }
  });
  v.checked = n_probes;
  v.passed = n_probes;
  for (const auto& s : slots) v.passed -= s.has_value();
  const std::size_t bad = first_violation(slots);
  if (bad < slots.size()) {
    v.holds = false;
    v.witness = slots[bad];
    const Tensor x = probes[bad];
    const std::size_t f = slots[bad]->feature;
    const std::uint64_t seed = mix_seed(opts.seed, bad);
    v.replay = [attribute, x, f, seed] {
      const auto [a, b] = attribute(x, seed);
      return std::vector<double>{a[f], b[f]};
    };
  }
  return v;
}

AxiomVerdict check_complete(const std::string& method, const ExplanationTask& task,
                            const std::vector<Tensor>& samples, double tolerance, const AxiomOptions& opts) {
  const MethodEntry& entry = find_method(method);
  if (samples.empty()) throw DataError("check_complete: no samples");
  AxiomVerdict v;
  v.axiom = Axiom::Complete;
  v.method = entry.spec.name;
  v.tolerance = tolerance;
  if (auto why = inapplicable(entry, task)) return not_applicable(v, *why);

  auto t = std::make_shared<const ExplanationTask>(task);
  auto xs = std::make_shared<const std::vector<Tensor>>(samples);
  auto evaluate = [&entry, t, xs, opts](std::size_t i) {
    const Tensor& x = (*xs)[i];
    const Tensor base(x.shape(), std::clamp(0.0, t->range_lo, t->range_hi));
    const MethodParams p = axiom_params(opts, *t, base, mix_seed(opts.seed, i));
    return run_method(entry, *t, x, t->predict(x), p);
  };
  auto bound_of = [t, tolerance, opts](const AttributionResult& r) {
    double ref = 0.0;
    for (const auto& b : r.references) ref += t->scalar_value(b, r.label, opts.objective);
    ref /= static_cast<double>(r.references.size());
    return tolerance * std::max(1.0, std::abs(t->scalar_value(r.input, r.label, opts.objective) - ref));
  };

  std::vector<std::optional<AxiomWitness>> slots(samples.size());
  std::vector<char> applicable(samples.size(), 1);
  parallel_for(samples.size(), opts.jobs, [&](std::size_t i) {
    AttributionResult r = evaluate(i);
    if (!r.has_completeness()) {
      applicable[i] = 0;
      return;
    }
    const double bound = bound_of(r);
    if (!(r.completeness_residual <= bound)) {
      slots[i] = AxiomWitness{i, r.input, r.references.front(), kNoFeature, {r.completeness_residual, bound}};
    }
  });
  if (std::find(applicable.begin(), applicable.end(), 0) != applicable.end()) {
    return not_applicable(v, "method exposes no path endpoints");
  }
  v.checked = samples.size();
  v.passed = samples.size();
  for (const auto& s : slots) v.passed -= s.has_value();
  const std::size_t bad = first_violation(slots);
  if (bad < slots.size()) {
    v.holds = false;
    v.witness = slots[bad];
    v.replay = [evaluate, bound_of, bad] {
      AttributionResult r = evaluate(bad);
      return std::vector<double>{r.completeness_residual, bound_of(r)};
    };
  }
  return v;
}

ExplanationTask linear_instance_task(const LinearInstance& inst) {
  const Tensor theta = inst.theta;
  return make_function_task(
      [theta](Tape& t, Var x) { return two_class(t, sum(mul(reshape(x, {x.size()}), t.constant(theta)))); },
      inst.range_lo, inst.range_hi);
}

std::vector<LinearInstance> linear_family(std::uint64_t seed) {
  std::vector<LinearInstance> family;
  auto add_instance = [&](Tensor theta, Tensor x) {
    LinearInstance inst;
    inst.baseline = Tensor(x.shape(), 0.0);
    inst.theta = std::move(theta);
    inst.input = std::move(x);
    family.push_back(std::move(inst));
  };
  add_instance(Tensor::vector({2.0, 3.0}), Tensor::vector({1.0, 1.0}));
  add_instance(Tensor::vector({10.0, 0.1}), Tensor::vector({1.0, 1.0}));
  add_instance(Tensor::vector({0.0, 0.0, 0.0}), Tensor::vector({0.5, -1.2, 1.7}));
  Rng rng = make_rng(seed, 0x7A);
  for (std::size_t d = 3; d <= 7; ++d) {
    Tensor theta = uniform_tensor({d}, -2.0, 2.0, rng);
    add_instance(theta, uniform_tensor({d}, -1.5, 1.5, rng));
  }
  return family;
}

AxiomVerdict check_linear(const std::string& method, const std::vector<LinearInstance>& family,
                          const AxiomOptions& opts, double tolerance) {
  const MethodEntry& entry = find_method(method);
  AxiomVerdict v;
  v.axiom = Axiom::Linear;
  v.method = entry.spec.name;
  v.tolerance = tolerance;

  if (family.empty()) return not_applicable(v, "empty family");
  std::vector<std::shared_ptr<const ExplanationTask>> tasks;
  for (const auto& inst : family) tasks.push_back(std::make_shared<const ExplanationTask>(linear_instance_task(inst)));
  if (auto why = inapplicable(entry, *tasks.front())) return not_applicable(v, *why);
  auto fam = std::make_shared<const std::vector<LinearInstance>>(family);
  auto attribute = [&entry, tasks, fam, opts](std::size_t i) {
    const LinearInstance& inst = (*fam)[i];
    const MethodParams p = axiom_params(opts, *tasks[i], inst.baseline, mix_seed(opts.seed, i));
    return run_method(entry, *tasks[i], inst.input, 1, p).attribution;
  };

  std::vector<std::optional<AxiomWitness>> slots(family.size());
  parallel_for(family.size(), opts.jobs, [&](std::size_t i) {
    const LinearInstance& inst = family[i];
    const Tensor a = attribute(i);
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double expected = inst.theta[j] * (inst.input[j] - inst.baseline[j]);
      if (!(std::abs(a[j] - expected) <= tolerance)) {
        slots[i] = AxiomWitness{i, inst.input, inst.baseline, j, {a[j], expected}};
        return;
      }
    }
  });
  v.checked = family.size();
  v.passed = family.size();
  for (const auto& s : slots) v.passed -= s.has_value();
  const std::size_t bad = first_violation(slots);
  if (bad < slots.size()) {
    v.holds = false;
    v.witness = slots[bad];
    const std::size_t j = slots[bad]->feature;
    const double expected = slots[bad]->values[1];
    v.replay = [attribute, bad, j, expected] { return std::vector<double>{attribute(bad)[j], expected}; };
  }
  return v;
}

AxiomVerdict check_linear(const std::string& method, const AxiomOptions& opts) {
  return check_linear(method, linear_family(opts.seed), opts);
}

bool flag_disagrees(const MethodSpec& spec, const AxiomVerdict& verdict) {
  if (verdict.not_applicable || verdict.holds) return false;
  switch (verdict.axiom) {
    case Axiom::Sensitivity: return spec.flags.sensitivity;
    case Axiom::ImplementationInvariance: return spec.flags.implementation_invariance;
    case Axiom::Complete: return spec.flags.complete;
    case Axiom::Linear: return false;
  }
  return false;
}

}  // namespace abe
