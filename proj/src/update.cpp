#include "abe/update.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "abe/errors.hpp"

namespace abe {

std::string to_string(UpdateKind kind) {
  switch (kind) {
    case UpdateKind::LinearPath: return "LinearPath";
    case UpdateKind::GaussianNoise: return "GaussianNoise";
    case UpdateKind::FGSM: return "FGSM";
    case UpdateKind::BIM: return "BIM";
    case UpdateKind::PGD: return "PGD";
    case UpdateKind::MIM: return "MIM";
  }
  return "?";
}

UpdateKind parse_update_kind(const std::string& name) {
  for (UpdateKind k : {UpdateKind::LinearPath, UpdateKind::GaussianNoise, UpdateKind::FGSM, UpdateKind::BIM,
                       UpdateKind::PGD, UpdateKind::MIM}) {
    const std::string canon = to_string(k);
    if (canon.size() == name.size() &&
        std::equal(canon.begin(), canon.end(), name.begin(), [](unsigned char a, unsigned char b) {
          return std::tolower(a) == std::tolower(b);
        })) {
      return k;
    }
  }
  throw UsageError("unknown update method '" + name +
                   "' (available: LinearPath, GaussianNoise, FGSM, BIM, PGD, MIM)");
}

bool is_attack(UpdateKind kind) {
  return kind == UpdateKind::FGSM || kind == UpdateKind::BIM || kind == UpdateKind::PGD || kind == UpdateKind::MIM;
}

UpdateConfig UpdateConfig::for_range(double lo, double hi) {
  UpdateConfig cfg;
  cfg.clamp_lo = lo;
  cfg.clamp_hi = hi;
  cfg.epsilon = 16.0 / 255.0 * (hi - lo);
  cfg.alpha = cfg.epsilon / 10.0;
  return cfg;
}

void UpdateConfig::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0) throw UsageError("epsilon must be finite and >= 0");
  if (!std::isfinite(alpha) || alpha <= 0) throw UsageError("alpha must be finite and > 0");
  if (epsilon > 0 && alpha > 2 * epsilon) throw UsageError("alpha must not exceed 2*epsilon");
  if (steps == 0) throw UsageError("steps must be >= 1");
  if (!std::isfinite(momentum_decay) || momentum_decay < 0) throw UsageError("momentum_decay must be >= 0");
  if (!(clamp_lo < clamp_hi)) throw UsageError("clamp range requires lo < hi");
  if (baseline) require_finite(*baseline, "baseline");
}

Tensor sign(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0 ? 1.0 : (t[i] < 0 ? -1.0 : 0.0);
  return out;
}

UpdateMethod::UpdateMethod(UpdateKind kind, UpdateConfig cfg) : kind_(kind), cfg_(std::move(cfg)) {
  cfg_.validate();
}

Tensor UpdateMethod::begin(const Tensor& x, std::size_t T) {
  require_finite(x, "input");
  if (T == 0) throw UsageError("T must be >= 1");
  t_ = 0;
  T_ = T;
  started_ = true;
  rng_ = make_rng(cfg_.seed, static_cast<std::uint64_t>(kind_));
  momentum_ = Tensor(x.shape(), 0.0);
  if (kind_ == UpdateKind::LinearPath) {
    Tensor base = cfg_.baseline ? *cfg_.baseline : Tensor(x.shape(), std::clamp(0.0, cfg_.clamp_lo, cfg_.clamp_hi));
    require_same_shape(base, x, "baseline");
    path_delta_ = scaled(x - base, 1.0 / static_cast<double>(T));
    origin_ = base;
  } else {
    origin_ = x;
  }
  return origin_;
}

Tensor UpdateMethod::project(const Tensor& x_t, Tensor delta) const {
  const bool ball = attack();
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double raw = x_t[i] + delta[i];
    double v = raw;
    if (ball) v = std::clamp(v, origin_[i] - cfg_.epsilon, origin_[i] + cfg_.epsilon);
    v = std::clamp(v, cfg_.clamp_lo, cfg_.clamp_hi);
    if (ball) v = std::clamp(v, origin_[i] - cfg_.epsilon, origin_[i] + cfg_.epsilon);
    // Recompute only when a bound was hit, so a feasible step stays exact.
    if (v != raw) delta[i] = v - x_t[i];
  }
  return delta;
}

Tensor UpdateMethod::step(const Tensor& x_t, const Tensor& grad) {
  if (!started_) throw UsageError("UpdateMethod::step called before begin");
  require_same_shape(x_t, origin_, "update step");
  require_same_shape(grad, x_t, "update step");
  require_finite(grad, "gradient");
  const std::size_t t = t_++;

  Tensor g = transform_ && attack() ? transform_(x_t, grad) : grad;
  require_finite(g, "transformed gradient");

  Tensor delta;
  switch (kind_) {
    case UpdateKind::LinearPath:
      return path_delta_;
    case UpdateKind::GaussianNoise:
      delta = normal_tensor(x_t.shape(), 0.0, cfg_.alpha, rng_);
      break;
    case UpdateKind::FGSM:
      delta = t == 0 ? scaled(sign(g), cfg_.epsilon) : Tensor(x_t.shape(), 0.0);
      break;
    case UpdateKind::BIM:
      delta = scaled(sign(g), cfg_.alpha);
      break;
    case UpdateKind::PGD:
      delta = scaled(sign(g), cfg_.alpha);
      if (t == 0) delta = delta + uniform_tensor(x_t.shape(), -cfg_.epsilon, cfg_.epsilon, rng_);
      break;
    case UpdateKind::MIM: {
      double l1 = 0.0;
      for (double v : g.data()) l1 += std::abs(v);
      Tensor normed = l1 > 0 ? scaled(g, 1.0 / l1) : Tensor(g.shape(), 0.0);
      momentum_ = scaled(momentum_, cfg_.momentum_decay) + normed;
      delta = scaled(sign(momentum_), cfg_.alpha);
      break;
    }
  }
  delta = project(x_t, std::move(delta));
  require_finite(delta, "update step");
  return delta;
}

AttackResult run_attack(const ExplanationTask& task, const Tensor& x, std::size_t label, UpdateMethod& method,
                        bool stop_on_success) {
  if (!method.attack()) throw UsageError("run_attack requires an attack kind, got " + to_string(method.kind()));
  const UpdateConfig& cfg = method.config();
  AttackResult out;
  const std::size_t clean = task.predict(x);
  out.query_count = 1;
  auto succeeded = [&](std::size_t pred) { return cfg.targeted ? pred == cfg.target : pred != clean; };

  Tensor x_t = method.begin(x, cfg.steps);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    // scalar_and_grad returns the gradient of -CE.
    ScalarGrad sg = task.scalar_and_grad(x_t, cfg.targeted ? cfg.target : label, Objective::NegCrossEntropy);
    ++out.query_count;
    Tensor ascent = cfg.targeted ? sg.grad : scaled(sg.grad, -1.0);
    x_t = x_t + method.step(x_t, ascent);
    ++out.steps_taken;
    if (stop_on_success) {
      ++out.query_count;
      if (succeeded(task.predict(x_t))) break;
    }
  }
  out.x_adv = x_t;
  ++out.query_count;
  out.success = succeeded(task.predict(x_t));
  return out;
}

double robust_accuracy(const ExplanationTask& task, const Dataset& data, UpdateKind kind, const UpdateConfig& cfg) {
  if (data.size() == 0) throw DataError("robust_accuracy: empty dataset");
  std::size_t kept = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    UpdateConfig c = cfg;
    c.seed = mix_seed(cfg.seed, i);
    UpdateMethod m(kind, c);
    const Tensor& x = data.inputs[i];
    const std::size_t clean = task.predict(x);
    AttackResult r = run_attack(task, x, clean, m);
    if (task.predict(r.x_adv) == clean) ++kept;
  }
  return static_cast<double>(kept) / static_cast<double>(data.size());
}

}  // namespace abe
