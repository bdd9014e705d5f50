// Acceptance run: one PASS/FAIL line per criterion. Exits 1 if any fails.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "abe/axioms.hpp"
#include "abe/metrics.hpp"
#include "abe/serialize.hpp"
#include "test_util.hpp"

using namespace abe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (s > budget_s) {
    o.pass = false;
    o.detail += " [over the " + std::to_string(static_cast<int>(budget_s)) + " s budget]";
  }
  failures += !o.pass;
  std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), s);
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// logits = [0, w.x + b]
ExplanationTask affine_task(const Tensor& w, double b, double lo, double hi) {
  return make_function_task(
      [w, b](Tape& t, Var x) {
        Var z = add(sum(mul(reshape(x, {x.size()}), t.constant(w))), b);
        return mul(gather(z, {0, 0}), t.constant(Tensor::vector({0.0, 1.0})));
      },
      lo, hi);
}

Model trained(ModelKind kind, std::vector<std::size_t> hidden, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = mix_seed(seed, 1);
  return train(build_model(kind, {8, 8, 1}, 4, seed, std::move(hidden)), make_bars_crosses(400, mix_seed(seed, 2)), cfg)
      .model;
}

const Model& bars_mlp() {
  static const Model m = trained(ModelKind::MLP, {32}, 101);
  return m;
}

const Model& bars_cnn() {
  static const Model m = trained(ModelKind::TinyCNN, {}, 202);
  return m;
}

// --- CLI helpers ---------------------------------------------------------------

const fs::path& scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("abe_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(ABE_CLI) + " " + args + " >/dev/null 2>>" + (scratch() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string drop_csv_column(const std::string& text, const std::string& column) {
  std::istringstream in(text);
  std::string line, result;
  std::size_t drop = std::string::npos;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == column) drop = i;
      header = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (i != drop) result += cells[i] + ",";
    result += "\n";
  }
  return result;
}

// Empty when the two output directories agree outside timing fields.
std::string compare_outputs(const fs::path& a, const fs::path& b) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
  std::size_t in_b = 0;
  for (const auto& e : fs::directory_iterator(b)) in_b += e.is_regular_file();
  if (names.size() != in_b) return "file sets differ";
  for (const auto& n : names) {
    if (!fs::exists(b / n)) return n + " missing in rerun";
    bool same;
    if (n.ends_with(".json")) {
      same = strip_timing(read_json(a / n)).dump() == strip_timing(read_json(b / n)).dump();
    } else if (n.ends_with(".csv")) {
      same = drop_csv_column(slurp(a / n), "fps") == drop_csv_column(slurp(b / n), "fps");
    } else {
      same = slurp(a / n) == slurp(b / n);
    }
    if (!same) return n + " differs";
  }
  return "";
}

// --- criteria ------------------------------------------------------------------

Outcome gradient_oracle() {
  Rng rng = make_rng(1);
  struct Case {
    ModelKind kind;
    Shape shape;
    std::vector<std::size_t> hidden;
  };
  const std::vector<Case> cases = {
      {ModelKind::Linear, {10}, {}}, {ModelKind::MLP, {10}, {16, 8}}, {ModelKind::TinyCNN, {8, 8, 1}, {}}};
  double worst = 0.0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const Model m = build_model(cases[c].kind, cases[c].shape, 4, 30 + c, cases[c].hidden);
    for (int probe = 0; probe < 50; ++probe) {
      const Tensor x = normal_tensor(cases[c].shape, 0.0, 1.0, rng);
      const Tensor coeff = normal_tensor({4}, 0.0, 1.0, rng);
      std::function<Var(Tape&, Var)> f = [&](Tape& t, Var v) { return sum(mul(m.forward(t, v), t.constant(coeff))); };
      const Tensor ad = testing::autodiff_gradient(f, x);
      const Tensor fd = testing::numeric_gradient([&](const Tensor& p) { return testing::eval_scalar(f, p); }, x);
      worst = std::max(worst, testing::max_relative_error(ad, fd));
    }
  }
  return {worst < 1e-5, "max relative error " + fmt(worst) + " over 150 probes"};
}

Outcome completeness() {
  Rng rng = make_rng(2);
  double worst_affine = 0.0;
  for (int m = 0; m < 10; ++m) {
    const std::size_t d = 2 + static_cast<std::size_t>(m);
    const ExplanationTask task = affine_task(normal_tensor({d}, 0.0, 2.0, rng), 0.3 * m, -3, 3);
    const Tensor x = uniform_tensor({d}, -3, 3, rng);
    for (std::size_t T : {1, 2, 3, 7, 16, 50, 64, 200}) {
      worst_affine = std::max(worst_affine, integrated_gradients(task, x, 1, Tensor({d}, 0.0), T).completeness_residual);
    }
  }
  const ExplanationTask mlp = make_task(bars_mlp(), 0, 1);
  const Dataset data = make_bars_crosses(100, 77);
  std::size_t improved = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor& x = data.inputs[i];
    const std::size_t y = mlp.predict(x);
    const Tensor zero(x.shape(), 0.0);
    improved += integrated_gradients(mlp, x, y, zero, 64).completeness_residual <
                integrated_gradients(mlp, x, y, zero, 16).completeness_residual;
  }
  return {worst_affine < 1e-10 && improved >= 90,
          "affine max residual " + fmt(worst_affine) + ", MLP T=64 < T=16 on " + std::to_string(improved) + "/100"};
}

Outcome sign_optimality() {
  Rng rng = make_rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  double worst_corner = 0.0, worst_l1 = 0.0;
  bool exact_corner = true;
  for (int m = 0; m < 20; ++m) {
    const std::size_t d = dim(rng);
    const ExplanationTask task = affine_task(normal_tensor({d}, 0.0, 1.0, rng), 0.1, -10, 10);
    const Tensor x = uniform_tensor({d}, -1, 1, rng);
    const Tensor g = task.scalar_and_grad(x, 1, Objective::TargetLogit).grad;
    const double eps = 0.01 + 0.02 * m;
    UpdateConfig c = UpdateConfig::for_range(-10, 10);
    c.epsilon = eps;
    c.alpha = eps;
    UpdateMethod fgsm(UpdateKind::FGSM, c);
    fgsm.begin(x, 1);
    const Tensor dx = fgsm.step(x, g);
    const double gain = dot(g, dx);

    double best = -1e300;
    for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
      double v = 0.0;
      for (std::size_t j = 0; j < d; ++j) v += g[j] * ((mask >> j) & 1 ? eps : -eps);
      best = std::max(best, v);
    }
    double l1 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      l1 += std::abs(g[j]);
      const double corner = g[j] > 0 ? eps : g[j] < 0 ? -eps : 0.0;
      exact_corner = exact_corner && dx[j] == corner;
    }
    worst_corner = std::max(worst_corner, std::abs(gain - best));
    worst_l1 = std::max(worst_l1, std::abs(gain - eps * l1));
  }
  return {exact_corner && worst_corner <= 1e-12 && worst_l1 <= 1e-12,
          std::string(exact_corner ? "dx is the maximizing corner" : "dx off the corner") + ", |gain - corner max| " +
              fmt(worst_corner) + ", |gain - eps*||g||_1| " + fmt(worst_l1)};
}

Outcome implementation_invariance() {
  const std::vector<std::pair<std::string, Model>> bases = {
      {"MLP", bars_mlp()}, {"Linear", build_model(ModelKind::Linear, {8, 8, 1}, 4, 9)}};
  double worst = 0.0;
  bool verdicts = true;
  for (const auto& [name, base] : bases) {
    const auto pair = make_equivalent_pair(base, 5);
    const ExplanationTask ta = make_task(pair.first, 0, 1), tb = make_task(pair.second, 0, 1);
    Rng rng = make_rng(4);
    for (int probe = 0; probe < 100; ++probe) {
      const Tensor x = uniform_tensor({8, 8, 1}, 0, 1, rng);
      const std::size_t y = ta.predict(x);
      const Tensor zero(x.shape(), 0.0);
      worst = std::max(worst, max_abs_diff(integrated_gradients(ta, x, y, zero, 50).attribution,
                                           integrated_gradients(tb, x, y, zero, 50).attribution));
    }
    verdicts = verdicts && check_implementation_invariance("IG", pair, 0, 1, AxiomOptions{}, 100).holds;
  }
  return {worst < 1e-8 && verdicts,
          "max |A - A'| " + fmt(worst) + " over 2 x 100 probes, verdicts " + (verdicts ? "hold" : "fail")};
}

Outcome linearity() {
  const AxiomVerdict ig = check_linear("IG");
  const LinearInstance inst = linear_family()[1];
  if (inst.theta[0] != 10.0 || inst.theta[1] != 0.1) return {false, "family instance 1 is not theta=(10, 0.1)"};
  const AxiomVerdict mf = check_linear("MFABA", {inst});
  bool replayed = false;
  if (!mf.holds && mf.witness && mf.replay) replayed = mf.replay() == mf.witness->values;
  return {ig.holds && !mf.holds && replayed,
          std::string("IG ") + (ig.holds ? "holds" : "fails") + ", adversarial path " + (mf.holds ? "holds" : "fails") +
              (replayed ? " with a bitwise-replayed witness" : " without a replayable witness")};
}

Outcome faithfulness() {
  const ExplanationTask task = make_task(bars_cnn(), 0, 1);
  const Dataset data = make_bars_crosses(200, 88);
  MetricConfig cfg;
  cfg.n_samples = 200;
  cfg.seed = 6;
  cfg.jobs = 0;
  cfg.compute_infd = false;
  cfg.throughput_reps = 1;
  cfg.throughput_samples = 1;
  cfg.params = MethodParams::defaults_for(task, data.input_shape());
  const MetricReport ig = evaluate_method(task, "TinyCNN", "IG", data, cfg);
  const MetricReport rnd = evaluate_method(task, "TinyCNN", "Random", data, cfg);
  const double ins_se = std::hypot(ig.ins_se, rnd.ins_se), del_se = std::hypot(ig.del_se, rnd.del_se);
  const bool ok = ig.n_samples == 200 && ig.ins - rnd.ins > 2 * ins_se && rnd.del - ig.del > 2 * del_se;
  return {ok, "INS " + fmt(ig.ins) + " vs " + fmt(rnd.ins) + " (2SE " + fmt(2 * ins_se) + "), DEL " + fmt(ig.del) +
                  " vs " + fmt(rnd.del) + " (2SE " + fmt(2 * del_se) + ")"};
}

Outcome infd_sanity() {
  const ExplanationTask mlp = make_task(bars_mlp(), 0, 1);
  const Dataset data = make_bars_crosses(200, 99);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor& x = data.inputs[i];
    const std::size_t y = mlp.predict(x);
    const Tensor ig = integrated_gradients(mlp, x, y, Tensor(x.shape(), 0.0), 50).attribution;
    Tensor rnd = random_attribution(x, mix_seed(7, i)).attribution;
    rnd = scaled(rnd, std::sqrt(dot(ig, ig) / dot(rnd, rnd)));
    wins += infd_score(mlp, x, y, ig, 64, 0.2, i) < infd_score(mlp, x, y, rnd, 64, 0.2, i);
  }
  Rng rng = make_rng(8);
  double worst_affine = 0.0;
  for (int m = 0; m < 10; ++m) {
    const Tensor w = normal_tensor({6}, 0.0, 1.0, rng);
    const ExplanationTask task = affine_task(w, -0.2, -1, 1);
    const Tensor x = uniform_tensor({6}, -1, 1, rng);
    const Tensor grad = saliency_map(task, x, 1).attribution;
    worst_affine = std::max(worst_affine, infd_score(task, x, 1, grad, 64, 0.4, m));
  }
  return {wins >= 190 && worst_affine < 1e-12,
          "IG beats random on " + std::to_string(wins) + "/200, affine gradient INFD " + fmt(worst_affine)};
}

Outcome robustness() {
  const ExplanationTask task = make_task(bars_cnn(), 0, 1);
  const Dataset data = make_bars_crosses(200, 111);
  std::vector<double> acc;
  std::string detail;
  for (double e : {0.0, 2.0, 4.0, 8.0, 16.0}) {
    UpdateConfig c = UpdateConfig::for_range(0, 1);
    c.epsilon = e / 255.0;
    c.seed = 12;
    acc.push_back(robust_accuracy(task, data, UpdateKind::PGD, c));
    detail += (detail.empty() ? "" : ", ") + fmt(e) + "/255: " + fmt(acc.back());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < acc.size(); ++i) monotone = monotone && acc[i] <= acc[i - 1] + 0.02;
  return {monotone && acc[0] == 1.0, detail};
}

Outcome bench_sweep() {
  const std::string args = "bench --method all --seed 21 --n 20 --out ";
  if (cli(args + (scratch() / "bench_a").string()) != 0) return {false, "first run failed"};
  if (cli(args + (scratch() / "bench_b").string()) != 0) return {false, "rerun failed"};
  const Json j = read_json(scratch() / "bench_a" / "bench.json");
  const std::vector<std::string> expected = {"LinearPath", "FGSM", "BIM", "PGD", "MIM"};
  const auto& sweep = j.at("update_sweep");
  bool grid = sweep.size() == expected.size() && j.at("baseline_update") == "LinearPath";
  for (std::size_t i = 0; grid && i < expected.size(); ++i) {
    grid = sweep[i].at("method") == "MFABA" && sweep[i].at("update") == expected[i] && sweep[i].at("error").is_null() &&
           sweep[i].at("ins").is_number() && sweep[i].at("del").is_number();
  }
  const std::string diff = compare_outputs(scratch() / "bench_a", scratch() / "bench_b");
  return {grid && diff.empty(), std::string(grid ? "5-row INS/DEL sweep, LinearPath baseline first" : "sweep malformed") +
                                    (diff.empty() ? ", reruns identical" : ", " + diff)};
}

Outcome determinism() {
  const std::vector<std::string> commands = {
      "train --model tinycnn",
      "attribute --method all --model tinycnn --n 3 --png",
      "attack --eps 0,0.02,0.06",
      "metrics --method all --n 10 --robust",
      "axioms --method ig,sm,sg,big,rise --n 10",
      "bench --method ig,sg,random --n 10",
  };
  std::size_t files = 0;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    const fs::path a = scratch() / ("det_a" + std::to_string(i)), b = scratch() / ("det_b" + std::to_string(i));
    const int ca = cli(commands[i] + " --seed 33 --jobs 1 --out " + a.string());
    const int cb = cli(commands[i] + " --seed 33 --jobs 4 --out " + b.string());
    if (ca != cb || (ca != 0 && ca != 4)) return {false, commands[i] + ": exit " + std::to_string(ca) + "/" + std::to_string(cb)};
    const std::string diff = compare_outputs(a, b);
    if (!diff.empty()) return {false, commands[i] + ": " + diff};
    for (const auto& e : fs::directory_iterator(a)) files += e.is_regular_file();
  }
  return {true, "6 commands, " + std::to_string(files) + " output files identical across reruns"};
}

}  // namespace

int main() {
  criterion(1, "gradient oracle", 30, gradient_oracle);
  criterion(2, "completeness", 120, completeness);
  criterion(3, "sign optimality", 60, sign_optimality);
  criterion(4, "implementation invariance", 120, implementation_invariance);
  criterion(5, "linearity falsification", 60, linearity);
  criterion(6, "faithfulness ordering", 600, faithfulness);
  criterion(7, "INFD sanity", 120, infd_sanity);
  criterion(8, "robustness monotonicity", 120, robustness);
  criterion(9, "update sweep bench", 900, bench_sweep);
  criterion(10, "determinism", 600, determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  fs::remove_all(scratch());
  return failures == 0 ? 0 : 1;
}
