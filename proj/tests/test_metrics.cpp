#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "abe/errors.hpp"
#include "abe/metrics.hpp"

using namespace abe;

namespace {

// logits = [0, w.x + b]
ExplanationTask affine_binary(const Tensor& w, double b, double lo, double hi) {
  return make_function_task(
      [w, b](Tape& t, Var x) {
        Var z = add(sum(mul(reshape(x, {x.size()}), t.constant(w))), b);
        return mul(gather(z, {0, 0}), t.constant(Tensor::vector({0.0, 1.0})));
      },
      lo, hi);
}

const Model& bars_mlp() {
  static Model m = [] {
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.seed = 3;
    return train(build_model(ModelKind::MLP, {8, 8, 1}, 4, 2, {32}), make_bars_crosses(300, 4), cfg).model;
  }();
  return m;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("ranking") {
  Tensor a = Tensor::vector({0.5, -2.0, 0.5, 1.0, -0.5});
  CHECK(rank_features(a, Ranking::Magnitude) == std::vector<std::size_t>{1, 3, 0, 2, 4});
  CHECK(rank_features(a, Ranking::Signed) == std::vector<std::size_t>{3, 0, 2, 4, 1});
  CHECK(to_string(Ranking::Signed) == "signed");
}

TEST_CASE("trapezoid") {
  CHECK(trapezoid_auc({0, 0.5, 1}, {0, 1, 0}) == doctest::Approx(0.5));
  CHECK(trapezoid_auc({0, 1}, {0.3, 0.3}) == doctest::Approx(0.3));
  CHECK_THROWS_AS(trapezoid_auc({0}, {1}), UsageError);
}

TEST_CASE("insertion and deletion curves") {
  SUBCASE("constant model gives a flat curve") {
    ExplanationTask constant =
        make_function_task([](Tape& t, Var) { return t.constant(Tensor::vector({0.2, 1.0, -0.3})); }, 0, 1);
    const double p = std::exp(1.0) / (std::exp(0.2) + std::exp(1.0) + std::exp(-0.3));
    Tensor x = Tensor::vector({0.1, 0.9, 0.4, 0.7});
    Rng rng = make_rng(1);
    Tensor a = normal_tensor(x.shape(), 0, 1, rng);
    CHECK(insertion_curve(constant, x, a).auc == doctest::Approx(p).epsilon(1e-12));
    CHECK(deletion_curve(constant, x, a).auc == doctest::Approx(p).epsilon(1e-12));
  }

  SUBCASE("affine model against a closed-form curve") {
    Tensor w = Tensor::vector({1.5, -0.5, 2.0, 0.25, -1.0, 0.75});
    const double b = -0.4;
    ExplanationTask task = affine_binary(w, b, -2, 2);
    Tensor x = Tensor::vector({1.0, 0.8, 0.6, -1.2, -0.3, 1.1});
    REQUIRE(task.predict(x) == 1);

    Tensor contrib = hadamard(w, x);
    CurveOptions opts;
    opts.K = 6;
    PerturbationCurve good = insertion_curve(task, x, contrib, opts);
    // Oracle: reveal features in order of |w_j x_j|, one per step.
    std::vector<std::size_t> order(x.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
      const double ka = std::abs(contrib[a]), kc = std::abs(contrib[c]);
      return ka != kc ? ka > kc : a < c;
    });
    double z = b;
    for (std::size_t k = 0; k <= 6; ++k) {
      if (k > 0) z += contrib[order[k - 1]];
      CHECK(good.scores[k] == doctest::Approx(sigmoid(z)).epsilon(1e-12));
      CHECK(good.fractions[k] == doctest::Approx(k / 6.0));
    }
    double auc = 0.0;
    for (std::size_t k = 1; k <= 6; ++k) auc += (good.scores[k] + good.scores[k - 1]) / 12.0;
    CHECK(good.auc == doctest::Approx(auc).epsilon(1e-12));

    Tensor reversed(x.shape());
    for (std::size_t j = 0; j < x.size(); ++j) reversed[j] = 1.0 / (1e-9 + std::abs(contrib[j]));
    CHECK(good.auc >= insertion_curve(task, x, reversed, opts).auc);

    // Endpoints are the exact model probabilities at baseline and input.
    const double px = task.probabilities(x)[1];
    CHECK(good.scores.back() == px);
    PerturbationCurve del = deletion_curve(task, x, contrib, opts);
    CHECK(del.scores.front() == px);
    CHECK(del.scores.back() == task.probabilities(Tensor(x.shape(), 0.0))[1]);
    CHECK(del.auc >= 0.0);
    CHECK(del.auc <= 1.0);

    CurveOptions logit = opts;
    logit.score = CurveScore::Logit;
    CHECK(insertion_curve(task, x, contrib, logit).scores.back() == doctest::Approx(dot(w, x) + b));

    CurveOptions bad = opts;
    bad.K = 1;
    CHECK_THROWS_AS(insertion_curve(task, x, contrib, bad), UsageError);
    CHECK_THROWS_AS(insertion_curve(task, x, Tensor::vector({1.0}), opts), ShapeError);
  }
}

TEST_CASE("INFD") {
  Tensor w = Tensor::vector({0.7, -1.3, 0.2});
  ExplanationTask task = affine_binary(w, 0.1, -1, 1);
  Tensor x = Tensor::vector({0.3, -0.2, 0.5});
  CHECK(infd_score(task, x, 1, w, 64, 0.4, 3) < 1e-12);
  const double zero = infd_score(task, x, 1, Tensor(x.shape(), 0.0), 64, 0.4, 3);
  CHECK(zero > 0.0);
  // With A = 0 the score is the mean squared change w.I over the same probes.
  Rng rng = make_rng(3, 5);
  double oracle = 0.0;
  for (int p = 0; p < 64; ++p) {
    Tensor probe = uniform_tensor(x.shape(), -0.4, 0.4, rng);
    oracle += dot(w, probe) * dot(w, probe) / 64.0;
  }
  CHECK(zero == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(infd_score(task, x, 1, Tensor::vector({1, 2, 3}), 16, 0.4, 8) ==
        infd_score(task, x, 1, Tensor::vector({1, 2, 3}), 16, 0.4, 8));
  CHECK_THROWS_AS(infd_score(task, x, 1, w, 0, 0.4, 3), UsageError);
  CHECK_THROWS_AS(infd_score(task, x, 1, w, 4, 0.0, 3), UsageError);

  SUBCASE("IG beats a scale-matched random attribution on an MLP") {
    ExplanationTask mlp = make_task(bars_mlp(), 0, 1);
    Dataset d = make_bars_crosses(60, 90);
    std::size_t wins = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Tensor& xi = d.inputs[i];
      const std::size_t y = mlp.predict(xi);
      Tensor ig = integrated_gradients(mlp, xi, y, Tensor(xi.shape(), 0.0), 32).attribution;
      Tensor rnd = random_attribution(xi, i).attribution;
      rnd = scaled(rnd, std::sqrt(dot(ig, ig) / dot(rnd, rnd)));
      wins += infd_score(mlp, xi, y, ig, 64, 0.2, i) < infd_score(mlp, xi, y, rnd, 64, 0.2, i);
    }
    CHECK(static_cast<double>(wins) >= 0.95 * d.size());
  }
}

TEST_CASE("throughput") {
  ExplanationTask task = make_task(bars_mlp(), 0, 1);
  Dataset d = make_bars_crosses(6, 2);
  MethodParams p = MethodParams::defaults_for(task, d.input_shape());
  p.T = 100;
  ThroughputResult sm = throughput(find_method("SM").fn, task, d, p, 1, 3);
  ThroughputResult ig = throughput(find_method("IG").fn, task, d, p, 1, 3);
  CHECK(sm.fps > ig.fps);
  CHECK(sm.rep_fps.size() == 3);
  const auto [lo, hi] = std::minmax_element(ig.rep_fps.begin(), ig.rep_fps.end());
  CHECK(*hi <= 1.5 * *lo);
  for (std::size_t warm : {0, 5}) {
    const double fps = throughput(find_method("SM").fn, task, d, p, warm, 1).fps;
    CHECK(std::isfinite(fps));
    CHECK(fps > 0);
  }
  CHECK_THROWS_AS(throughput(find_method("SM").fn, task, d, p, 0, 0), UsageError);
}

TEST_CASE("evaluate_method and benchmark") {
  ExplanationTask task = make_task(bars_mlp(), 0, 1);
  Dataset d = make_bars_crosses(12, 6);
  MetricConfig cfg;
  cfg.n_samples = 10;
  cfg.params = MethodParams::defaults_for(task, d.input_shape());
  cfg.params.T = 16;
  cfg.params.attack_cfg.steps = 5;
  cfg.throughput_reps = 1;
  cfg.throughput_samples = 2;
  cfg.robust_accuracy = true;
  cfg.seed = 4;

  std::vector<SampleMetrics> per;
  MetricReport r = evaluate_method(task, "mlp", "IG", d, cfg, &per);
  CHECK(r.n_samples == 10);
  CHECK(per.size() == 10);
  CHECK(r.ins >= 0.0);
  CHECK(r.ins <= 1.0);
  CHECK(r.del >= 0.0);
  CHECK(r.del <= 1.0);
  CHECK(r.infd >= 0.0);
  CHECK(r.fps > 0.0);
  CHECK(r.robust_acc.has_value());
  CHECK(r.mean_completeness_residual.has_value());
  CHECK(r.error.empty());

  SUBCASE("deterministic, independent of the worker count") {
    MetricConfig c3 = cfg;
    c3.jobs = 3;
    for (const char* m : {"SG", "MFABA", "Random"}) {
      MetricReport a = evaluate_method(task, "mlp", m, d, cfg);
      MetricReport b = evaluate_method(task, "mlp", m, d, c3);
      CHECK(a.ins == b.ins);
      CHECK(a.del == b.del);
      CHECK(a.infd == b.infd);
      CHECK(a.robust_acc == b.robust_acc);
    }
  }

  SUBCASE("benchmark grid and update sweep") {
    cfg.robust_accuracy = false;
    std::vector<NamedTask> models = {{"mlp", task}};
    BenchmarkTable t = benchmark(models, {"SM", "GradCAM"}, d, cfg, "mlp");
    REQUIRE(t.grid.size() == 2);
    CHECK(t.grid[0].error.empty());
    CHECK_FALSE(t.grid[1].error.empty());
    REQUIRE(t.update_sweep.size() == 5);
    CHECK(t.update_sweep[0].update_name == "LinearPath");
    for (const auto& row : t.update_sweep) {
      CHECK(row.error.empty());
      CHECK(row.method_name == "MFABA");
    }
    CHECK_THROWS_AS(benchmark(models, {"nope"}, d, cfg), UsageError);
    CHECK_THROWS_AS(benchmark(models, {"SM"}, d, cfg, "cnn"), UsageError);
  }
}
