#include "abe/methods.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

#include "abe/errors.hpp"
#include "abe/random.hpp"

namespace abe {

namespace {

AttributionResult gradient_only(std::string name, Tensor attribution, const Tensor& x, std::size_t label,
                                Objective objective) {
  AttributionResult r;
  r.attribution = std::move(attribution);
  r.method_name = std::move(name);
  r.label = label;
  r.objective = objective;
  r.input = x;
  return r;
}

// Bilinear sample of an (h, w) map at fractional (u, v), clamped to the edges.
double bilinear(const std::vector<double>& m, std::size_t h, std::size_t w, double u, double v) {
  u = std::clamp(u, 0.0, static_cast<double>(h - 1));
  v = std::clamp(v, 0.0, static_cast<double>(w - 1));
  const auto r0 = static_cast<std::size_t>(std::floor(u));
  const auto c0 = static_cast<std::size_t>(std::floor(v));
  const std::size_t r1 = std::min(r0 + 1, h - 1);
  const std::size_t c1 = std::min(c0 + 1, w - 1);
  const double fr = u - static_cast<double>(r0);
  const double fc = v - static_cast<double>(c0);
  const double top = m[r0 * w + c0] * (1 - fc) + m[r0 * w + c1] * fc;
  const double bot = m[r1 * w + c0] * (1 - fc) + m[r1 * w + c1] * fc;
  return top * (1 - fr) + bot * fr;
}

// Spreads an (H, W) plane over every channel of an (H, W, C) shape.
Tensor broadcast_channels(const std::vector<double>& plane, const Shape& shape) {
  Tensor out(shape, 0.0);
  const std::size_t channels = shape[2];
  for (std::size_t p = 0; p < plane.size(); ++p)
    for (std::size_t c = 0; c < channels; ++c) out[p * channels + c] = plane[p];
  return out;
}

void require_pool(const std::vector<Tensor>& pool, const Tensor& x) {
  if (pool.empty()) throw DataError("expected_gradients: empty baseline pool");
  for (const Tensor& b : pool) require_same_shape(b, x, "baseline pool");
}

}  // namespace

AttributionResult saliency_map(const ExplanationTask& task, const Tensor& x, std::size_t label, Objective objective) {
  require_finite(x, "input");
  return gradient_only("SM", task.scalar_and_grad(x, label, objective).grad, x, label, objective);
}

AttributionResult smoothgrad(const ExplanationTask& task, const Tensor& x, std::size_t label, std::size_t n_samples,
                             double sigma, std::uint64_t seed, Objective objective) {
  if (n_samples == 0) throw UsageError("smoothgrad: n_samples must be >= 1");
  if (!(sigma >= 0) || !std::isfinite(sigma)) throw UsageError("smoothgrad: sigma must be >= 0");
  require_finite(x, "input");
  if (sigma == 0) return gradient_only("SG", task.scalar_and_grad(x, label, objective).grad, x, label, objective);
  Rng rng = make_rng(seed, 1);
  Tensor acc(x.shape(), 0.0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    acc = acc + task.scalar_and_grad(x + normal_tensor(x.shape(), 0.0, sigma, rng), label, objective).grad;
  }
  return gradient_only("SG", scaled(acc, 1.0 / static_cast<double>(n_samples)), x, label, objective);
}

AttributionResult integrated_gradients(const ExplanationTask& task, const Tensor& x, std::size_t label,
                                       const Tensor& baseline, std::size_t T, Objective objective) {
  require_same_shape(baseline, x, "integrated_gradients baseline");
  UpdateConfig cfg;
  cfg.clamp_lo = task.range_lo;
  cfg.clamp_hi = task.range_hi;
  cfg.baseline = baseline;
  UpdateMethod path(UpdateKind::LinearPath, cfg);
  CoreOptions opts;
  opts.objective = objective;
  // Trust radius does not apply: the straight path is the method's definition.
  opts.trust_radius_fraction = std::numeric_limits<double>::infinity();
  PathAccumulator acc(task, x, label, path, T, opts);
  acc.advance(T);
  AttributionResult r = acc.result("IG");
  // Report against the exact input rather than the accumulated endpoint.
  r.input = x;
  r.completeness_residual = completeness_residual(task, r);
  return r;
}

AttributionResult expected_gradients(const ExplanationTask& task, const Tensor& x, std::size_t label,
                                     const std::vector<Tensor>& baseline_pool, std::size_t n_draws,
                                     std::uint64_t seed, Objective objective) {
  require_pool(baseline_pool, x);
  if (n_draws == 0) throw UsageError("expected_gradients: n_draws must be >= 1");
  require_finite(x, "input");
  Rng rng = make_rng(seed, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> order(baseline_pool.size());
  Tensor acc(x.shape(), 0.0);
  AttributionResult r;
  for (std::size_t i = 0; i < n_draws; ++i) {
    const std::size_t slot = i % order.size();
    if (slot == 0) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
    }
    const Tensor& b = baseline_pool[order[slot]];
    const double t = unit(rng);
    Tensor diff = x - b;
    Tensor grad = task.scalar_and_grad(b + scaled(diff, t), label, objective).grad;
    acc = acc + hadamard(diff, grad);
    r.references.push_back(b);
  }
  r.attribution = scaled(acc, 1.0 / static_cast<double>(n_draws));
  r.method_name = "EG";
  r.steps_taken = n_draws;
  r.label = label;
  r.objective = objective;
  r.input = x;
  r.completeness_residual = completeness_residual(task, r);
  return r;
}

AttributionResult boundary_ig(const ExplanationTask& task, const Tensor& x, std::size_t label,
                              const BoundaryOptions& opts) {
  if (!is_attack(opts.attack)) throw UsageError("boundary_ig requires an attack kind, got " + to_string(opts.attack));
  UpdateMethod attack(opts.attack, opts.attack_cfg);
  AttackResult adv = run_attack(task, x, label, attack, true);
  if (!adv.success) {
    AttributionResult r = integrated_gradients(task, x, label, opts.fallback_baseline, opts.T, opts.objective);
    r.method_name = "BIG";
    r.fallback_used = true;
    r.warnings.push_back("no adversarial example found; used the static baseline");
    return r;
  }
  Tensor reference = adv.x_adv;
  if (opts.refine) {
    const std::size_t clean = task.predict(x);
    double lo = 0.0, hi = 1.0;
    while (hi - lo > 1e-3) {
      const double mid = 0.5 * (lo + hi);
      if (task.predict(x + scaled(adv.x_adv - x, mid)) != clean) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    reference = x + scaled(adv.x_adv - x, hi);
  }
  AttributionResult r = integrated_gradients(task, x, label, reference, opts.T, opts.objective);
  r.method_name = "BIG";
  return r;
}

AttributionResult adversarial_path(const ExplanationTask& task, const Tensor& x, std::size_t label, UpdateKind kind,
                                   const UpdateConfig& cfg, Objective objective) {
  UpdateMethod update(kind, cfg);
  CoreOptions opts;
  opts.objective = objective;
  AttributionResult r = fundamental_attribute(task, x, label, update, cfg.steps, opts);
  r.method_name = "MFABA";
  if (kind != UpdateKind::LinearPath) {
    r.attribution = scaled(r.attribution, -1.0);
    r.input = r.endpoints->start;
    r.references = {r.endpoints->end};
  }
  return r;
}

AttributionResult grad_cam(const Model& model, const Tensor& x, std::size_t label) {
  if (model.kind() != ModelKind::TinyCNN) throw UsageError("grad_cam requires a model with conv layers");
  require_finite(x, "input");
  Tape tape;
  Var in = tape.variable(x);
  ForwardTrace trace;
  Var logits = model.forward(tape, in, &trace);
  if (label >= logits.size()) throw DataError("label out of range for grad_cam");
  const Var* layer = nullptr;
  for (const Var& act : trace.conv_activations) {
    if (act.shape()[0] * act.shape()[1] > 1) layer = &act;
  }
  if (layer == nullptr) throw UsageError("grad_cam: no conv feature map with spatial extent");
  const Var act = *layer;
  tape.backward(index(logits, label));
  const Tensor grad = tape.gradient(act);
  const Tensor& a = act.value();
  const std::size_t h = a.shape()[0], w = a.shape()[1], channels = a.shape()[2];

  std::vector<double> weights(channels, 0.0);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < channels; ++c) weights[c] += grad[p * channels + c];
  for (double& v : weights) v /= static_cast<double>(h * w);

  std::vector<double> cam(h * w, 0.0);
  for (std::size_t p = 0; p < h * w; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += weights[c] * a[p * channels + c];
    cam[p] = std::max(0.0, s);
  }

  // Feature-map cells sit at their receptive-field centers in the input.
  const std::size_t H = x.shape()[0], W = x.shape()[1];
  const double off_r = (static_cast<double>(H) - static_cast<double>(h)) / 2.0;
  const double off_c = (static_cast<double>(W) - static_cast<double>(w)) / 2.0;
  std::vector<double> plane(H * W, 0.0);
  double peak = 0.0;
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double v = bilinear(cam, h, w, static_cast<double>(r) - off_r, static_cast<double>(c) - off_c);
      plane[r * W + c] = v;
      peak = std::max(peak, v);
    }
  }
  if (peak > 0) {
    for (double& v : plane) v /= peak;
  }
  return gradient_only("GradCAM", broadcast_channels(plane, x.shape()), x, label, Objective::TargetLogit);
}

AttributionResult rise(const ExplanationTask& task, const Tensor& x, std::size_t label, std::size_t n_masks,
                       double keep_prob, std::size_t cell_grid, std::uint64_t seed, Objective objective) {
  if (n_masks == 0) throw UsageError("rise: n_masks must be >= 1");
  if (!(keep_prob > 0 && keep_prob < 1)) throw UsageError("rise: keep_prob must be in (0, 1)");
  if (cell_grid == 0) throw UsageError("rise: cell_grid must be >= 1");
  require_finite(x, "input");
  Rng rng = make_rng(seed, 3);
  std::bernoulli_distribution keep(keep_prob);
  const bool image = x.rank() == 3;
  Tensor acc(x.shape(), 0.0);

  for (std::size_t i = 0; i < n_masks; ++i) {
    Tensor mask(x.shape(), 0.0);
    if (image) {
      const std::size_t H = x.shape()[0], W = x.shape()[1];
      const std::size_t s = cell_grid;
      const std::size_t cell_h = (H + s - 1) / s, cell_w = (W + s - 1) / s;
      std::vector<double> grid(s * s);
      for (double& g : grid) g = keep(rng) ? 1.0 : 0.0;
      std::uniform_int_distribution<std::size_t> shift_h(0, cell_h - 1), shift_w(0, cell_w - 1);
      const std::size_t dr = shift_h(rng), dc = shift_w(rng);
      // Grid upsampled to (s+1) cells per side, then cropped at a random shift.
      const double up_h = static_cast<double>((s + 1) * cell_h), up_w = static_cast<double>((s + 1) * cell_w);
      std::vector<double> plane(H * W);
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
          const double u = (static_cast<double>(r + dr) + 0.5) * static_cast<double>(s) / up_h - 0.5;
          const double v = (static_cast<double>(c + dc) + 0.5) * static_cast<double>(s) / up_w - 0.5;
          plane[r * W + c] = bilinear(grid, s, s, u, v);
        }
      }
      mask = broadcast_channels(plane, x.shape());
    } else {
      for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = keep(rng) ? 1.0 : 0.0;
    }
    const double score = task.scalar_value(hadamard(x, mask), label, objective);
    auto a = acc.data();
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += score * mask[j];
  }
  AttributionResult r =
      gradient_only("RISE", scaled(acc, 1.0 / (static_cast<double>(n_masks) * keep_prob)), x, label, objective);
  r.steps_taken = n_masks;
  return r;
}

AttributionResult random_attribution(const Tensor& x, std::uint64_t seed) {
  Rng rng = make_rng(seed, 4);
  return gradient_only("Random", normal_tensor(x.shape(), 0.0, 1.0, rng), x, 0, Objective::TargetLogit);
}

MethodParams MethodParams::defaults_for(const ExplanationTask& task, const Shape& input_shape) {
  MethodParams p;
  p.sigma = 0.15 * task.range();
  p.baseline = Tensor(input_shape, std::clamp(0.0, task.range_lo, task.range_hi));
  p.attack_cfg = UpdateConfig::for_range(task.range_lo, task.range_hi);
  return p;
}

namespace {

std::vector<MethodEntry> build_registry() {
  std::vector<MethodEntry> reg;
  reg.push_back({{"SM", {false, true, false}, "raw input gradient of the target scalar"},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams& p) {
                   return saliency_map(t, x, y, p.objective);
                 }});
  reg.push_back({{"SG", {false, false, false}, "mean gradient under Gaussian input noise"},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams& p) {
                   return smoothgrad(t, x, y, p.n_samples, p.sigma, p.seed, p.objective);
                 }});
  reg.push_back({{"IG", {true, true, true}, "left-Riemann straight-path integral from a baseline"},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams& p) {
                   return integrated_gradients(t, x, y, p.baseline, p.T, p.objective);
                 }});
  reg.push_back({{"FIG", {true, true, true}, "integrated gradients with few integration points"},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams& p) {
                   AttributionResult r = integrated_gradients(t, x, y, p.baseline, p.fig_T, p.objective);
                   r.method_name = "FIG";
                   return r;
                 }});
  reg.push_back({{"EG", {true, true, true}, "path gradients averaged over sampled baselines"},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams& p) {
                   const std::vector<Tensor> pool = p.baseline_pool.empty() ? std::vector<Tensor>{p.baseline}
                                                                            : p.baseline_pool;
                   return expected_gradients(t, x, y, pool, p.n_draws, p.seed, p.objective);
                 }});
  reg.push_back({{"BIG", {true, true, true}, "integrated gradients from an adversarial baseline"},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams& p) {
                   BoundaryOptions o;
                   o.attack = p.attack;
                   o.attack_cfg = p.attack_cfg;
                   o.attack_cfg.seed = p.seed;
                   o.T = p.T;
                   o.fallback_baseline = p.baseline;
                   o.refine = p.big_refine;
                   o.objective = p.objective;
                   return boundary_ig(t, x, y, o);
                 }});
  reg.push_back({{"MFABA", {true, true, true}, "gradients accumulated along an attack trajectory"},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams& p) {
                   UpdateConfig c = p.attack_cfg;
                   c.seed = p.seed;
                   if (p.attack == UpdateKind::LinearPath) c.baseline = p.baseline;
                   return adversarial_path(t, x, y, p.attack, c, p.objective);
                 }});
  reg.push_back({{"GradCAM", {false, false, false}, "gradient-weighted conv feature map", true},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams&) {
                   if (!t.model) throw UsageError("GradCAM requires a task built from a zoo model");
                   return grad_cam(*t.model, x, y);
                 }});
  reg.push_back({{"RISE", {false, false, false}, "score-weighted random masks"},
                 [](const ExplanationTask& t, const Tensor& x, std::size_t y, const MethodParams& p) {
                   return rise(t, x, y, p.n_masks, p.keep_prob, p.cell_grid, p.seed, p.objective);
                 }});
  reg.push_back({{"Random", {false, false, false}, "standard-normal control attribution"},
                 [](const ExplanationTask&, const Tensor& x, std::size_t y, const MethodParams& p) {
                   AttributionResult r = random_attribution(x, p.seed);
                   r.label = y;
                   return r;
                 }});
  return reg;
}

}  // namespace

const std::vector<MethodEntry>& method_registry() {
  static const std::vector<MethodEntry> reg = build_registry();
  return reg;
}

std::vector<std::string> method_names() {
  std::vector<std::string> names;
  for (const auto& e : method_registry()) names.push_back(e.spec.name);
  return names;
}

const MethodEntry& find_method(const std::string& name) {
  auto lower = [](std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  for (const auto& e : method_registry()) {
    if (lower(e.spec.name) == lower(name)) return e;
  }
  std::string list;
  for (const auto& n : method_names()) list += (list.empty() ? "" : ", ") + n;
  throw UsageError("unknown method '" + name + "' (available: " + list + ")");
}

}  // namespace abe
