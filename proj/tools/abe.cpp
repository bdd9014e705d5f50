// Command-line front end: train, attribute, attack, metrics, axioms, bench.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "abe/axioms.hpp"
#include "abe/config.hpp"
#include "abe/errors.hpp"
#include "abe/heatmap.hpp"
#include "abe/metrics.hpp"
#include "abe/parallel.hpp"
#include "abe/random.hpp"
#include "abe/serialize.hpp"

namespace fs = std::filesystem;
using namespace abe;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitAxiomMismatch = 4;

// Seed streams of the CLI pipeline.
constexpr std::uint64_t kTrainData = 1, kEvalData = 2, kTrainInit = 3, kTrainOrder = 4;

struct Clock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

bool is_synthetic(const std::string& spec) { return spec.rfind("synthetic:", 0) == 0; }

Dataset eval_data(const RunConfig& c) {
  Dataset d = load_dataset(c.data, c.n, mix_seed(c.seed, kEvalData));
  if (!is_synthetic(c.data)) d = d.slice(0, std::min(c.n, d.size()));
  return d;
}

Dataset train_data(const RunConfig& c) {
  return is_synthetic(c.data) ? load_dataset(c.data, c.train_n, mix_seed(c.seed, kTrainData))
                              : load_dataset(c.data, 0, 0);
}

struct LoadedModel {
  std::string name;
  Model model;
  std::vector<EpochStats> curve;
};

LoadedModel obtain_model(const RunConfig& c, const std::string& kind_name, const Dataset& train_set) {
  if (!c.weights.empty()) {
    Model m = load_weights(c.weights);
    return {to_string(m.kind()), std::move(m), {}};
  }
  const ModelKind kind = parse_model_kind(kind_name);
  Model m = build_model(kind, train_set.input_shape(), train_set.meta.num_classes, mix_seed(c.seed, kTrainInit),
                        kind == ModelKind::MLP ? c.hidden : std::vector<std::size_t>{});
  std::vector<EpochStats> curve;
  if (c.epochs > 0) {
    TrainConfig tc;
    tc.learning_rate = c.lr;
    tc.epochs = c.epochs;
    tc.batch_size = c.batch;
    tc.seed = mix_seed(c.seed, kTrainOrder);
    TrainResult r = train(std::move(m), train_set, tc);
    m = std::move(r.model);
    curve = std::move(r.curve);
  }
  return {to_string(kind), std::move(m), std::move(curve)};
}

ExplanationTask task_for(const Model& m, const Dataset& d) { return make_task(m, d.meta.range_lo, d.meta.range_hi); }

void require_compatible(const Model& m, const Dataset& d) {
  if (m.hyper().input_shape != d.input_shape()) {
    throw DataError("model expects input " + shape_string(m.hyper().input_shape) + " but the data has " +
                    shape_string(d.input_shape()));
  }
  for (std::size_t y : d.labels) {
    if (y >= m.num_classes()) throw DataError("data label " + std::to_string(y) + " exceeds the model's classes");
  }
}

// "all" skips methods that need conv internals when the model has none; naming
// such a method explicitly still fails loudly.
std::vector<std::string> expand_methods(const std::vector<std::string>& names, bool has_conv = true) {
  if (names.size() == 1 && (names[0] == "all" || names[0] == "ALL")) {
    std::vector<std::string> out;
    for (const auto& n : method_names())
      if (has_conv || !find_method(n).spec.needs_model_internals) out.push_back(n);
    return out;
  }
  std::vector<std::string> out;
  for (const auto& n : names) out.push_back(find_method(n).spec.name);
  return out;
}

UpdateConfig attack_config(const RunConfig& c, double lo, double hi, std::optional<double> eps) {
  UpdateConfig u = UpdateConfig::for_range(lo, hi);
  u.steps = c.steps;
  u.seed = c.seed;
  if (!eps && !c.eps.empty()) eps = c.eps.front();
  if (eps) {
    u.epsilon = *eps;
    u.alpha = *eps > 0 ? *eps / 10.0 : 1e-3 * (hi - lo);
  }
  if (c.alpha) u.alpha = *c.alpha;
  u.validate();
  return u;
}

MethodParams method_params(const RunConfig& c, const ExplanationTask& task, const Shape& shape) {
  MethodParams p = MethodParams::defaults_for(task, shape);
  p.T = c.T;
  p.attack = parse_update_kind(c.update);
  p.attack_cfg = attack_config(c, task.range_lo, task.range_hi, std::nullopt);
  p.seed = c.seed;
  p.objective = parse_objective(c.objective);
  return p;
}

MetricConfig metric_config(const RunConfig& c, const ExplanationTask& task, const Shape& shape) {
  MetricConfig m;
  m.n_samples = c.n;
  m.K = c.K;
  m.n_probes = c.probes;
  m.seed = c.seed;
  m.jobs = c.jobs;
  m.score = c.score == "logit" ? CurveScore::Logit : CurveScore::Probability;
  m.robust_accuracy = c.robust;
  m.params = method_params(c, task, shape);
  return m;
}

Json header(const std::string& schema, const std::string& command, const RunConfig& c) {
  Json j;
  j["schema"] = schema;
  j["command"] = command;
  j["config"] = c.to_json();
  return j;
}

fs::path out_dir(const RunConfig& c) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

// --- subcommands -------------------------------------------------------------

int cmd_train(const RunConfig& c) {
  Clock clock;
  const Dataset data = train_data(c);
  if (!c.weights.empty()) throw UsageError("train builds a fresh model; drop --weights");
  LoadedModel lm = obtain_model(c, c.model, data);
  const fs::path dir = out_dir(c);
  save_weights(lm.model, dir / "weights.abw");
  write_loss_curve_csv(dir / "loss.csv", lm.curve);
  Json j = header("abe.train/1", "train", c);
  j["model"] = lm.name;
  j["param_count"] = lm.model.param_count();
  j["train_samples"] = data.size();
  j["curve"] = Json::array();
  for (const auto& s : lm.curve) j["curve"].push_back(to_json(s));
  const EpochStats final_stats = evaluate(lm.model, data);
  j["final"] = to_json(final_stats);
  j["weights"] = "weights.abw";
  j["elapsed_seconds"] = clock.seconds();
  write_json(dir / "train.json", j);
  std::cout << "trained " << lm.name << ": loss " << final_stats.loss << ", accuracy " << final_stats.accuracy
            << " -> " << (dir / "weights.abw").string() << '\n';
  return 0;
}

int cmd_attribute(const RunConfig& c) {
  Clock clock;
  const Dataset data = eval_data(c);
  if (c.index >= data.size()) {
    throw UsageError("index " + std::to_string(c.index) + " is past the " + std::to_string(data.size()) + " samples");
  }
  const LoadedModel lm = obtain_model(c, c.model, c.weights.empty() ? train_data(c) : data);
  require_compatible(lm.model, data);
  const ExplanationTask task = task_for(lm.model, data);
  const std::vector<std::string> methods = expand_methods(c.methods, lm.model.kind() == ModelKind::TinyCNN);
  const std::size_t count = std::min(c.n, data.size() - c.index);
  const Colormap cmap = parse_colormap(c.colormap);
  const fs::path dir = out_dir(c);

  struct Job {
    std::size_t sample;
    std::string method;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < count; ++i)
    for (const auto& m : methods) jobs.push_back({c.index + i, m});

  std::vector<AttributionResult> results(jobs.size());
  parallel_for(jobs.size(), c.jobs, [&](std::size_t k) {
    const Tensor& x = data.inputs[jobs[k].sample];
    MethodParams p = method_params(c, task, x.shape());
    p.seed = mix_seed(c.seed, jobs[k].sample);
    results[k] = find_method(jobs[k].method).fn(task, x, task.predict(x), p);
  });

  Json j = header("abe.attribution/1", "attribute", c);
  j["model"] = lm.name;
  j["results"] = Json::array();
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const std::string stem = "heatmap_" + jobs[k].method + "_" + std::to_string(jobs[k].sample);
    emit_heatmap(results[k].attribution, dir / stem, cmap, c.png);
    Json r;
    r["sample"] = jobs[k].sample;
    r["true_label"] = data.labels[jobs[k].sample];
    const Json body = to_json(results[k]);
    for (auto it = body.begin(); it != body.end(); ++it) r[it.key()] = *it;
    r["heatmap"] = stem + ".pgm";
    j["results"].push_back(r);
  }
  j["elapsed_seconds"] = clock.seconds();
  write_json(dir / "attribution.json", j);
  std::cout << "wrote " << jobs.size() << " attribution(s) to " << (dir / "attribution.json").string() << '\n';
  return 0;
}

int cmd_attack(const RunConfig& c) {
  Clock clock;
  const Dataset data = eval_data(c);
  const LoadedModel lm = obtain_model(c, c.model, c.weights.empty() ? train_data(c) : data);
  require_compatible(lm.model, data);
  const ExplanationTask task = task_for(lm.model, data);
  const UpdateKind kind = parse_update_kind(c.update);
  if (!is_attack(kind)) throw UsageError("attack needs an attack update (FGSM, BIM, PGD, MIM), got " + c.update);

  std::vector<std::optional<double>> eps_list;
  for (double e : c.eps) eps_list.push_back(e);
  if (eps_list.empty()) eps_list.push_back(std::nullopt);

  Json j = header("abe.attack/1", "attack", c);
  j["model"] = lm.name;
  j["update"] = to_string(kind);
  j["n_samples"] = data.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += task.predict(data.inputs[i]) == data.labels[i];
  j["clean_accuracy"] = static_cast<double>(correct) / static_cast<double>(data.size());
  j["robust_accuracy_reference"] = "clean_predictions";
  j["results"] = Json::array();
  for (const auto& eps : eps_list) {
    const UpdateConfig u = attack_config(c, task.range_lo, task.range_hi, eps);
    const double acc = robust_accuracy(task, data, kind, u);
    j["results"].push_back({{"epsilon", u.epsilon}, {"alpha", u.alpha}, {"steps", u.steps}, {"robust_accuracy", acc}});
    std::cout << to_string(kind) << " eps=" << u.epsilon << ": robust accuracy " << acc << '\n';
  }
  j["elapsed_seconds"] = clock.seconds();
  write_json(out_dir(c) / "attack.json", j);
  return 0;
}

int cmd_metrics(const RunConfig& c) {
  Clock clock;
  const Dataset data = eval_data(c);
  const LoadedModel lm = obtain_model(c, c.model, c.weights.empty() ? train_data(c) : data);
  require_compatible(lm.model, data);
  const ExplanationTask task = task_for(lm.model, data);
  const MetricConfig mc = metric_config(c, task, data.input_shape());
  std::vector<MetricReport> reports;
  for (const auto& m : expand_methods(c.methods, lm.model.kind() == ModelKind::TinyCNN)) {
    reports.push_back(evaluate_method(task, lm.name, m, data, mc));
    const MetricReport& r = reports.back();
    std::cout << r.method_name << ": INS " << r.ins << " DEL " << r.del << " INFD " << r.infd << '\n';
  }
  Json j = header("abe.metrics/1", "metrics", c);
  j["model"] = lm.name;
  j["reports"] = Json::array();
  for (const auto& r : reports) j["reports"].push_back(to_json(r));
  j["elapsed_seconds"] = clock.seconds();
  const fs::path dir = out_dir(c);
  write_json(dir / "metrics.json", j);
  write_text(dir / "metrics.csv", metrics_csv(reports));
  return 0;
}

int cmd_axioms(const RunConfig& c) {
  Clock clock;
  const Dataset data = eval_data(c);
  const LoadedModel lm = obtain_model(c, c.model, c.weights.empty() ? train_data(c) : data);
  require_compatible(lm.model, data);
  const ExplanationTask task = task_for(lm.model, data);

  AxiomOptions o;
  o.T = c.T;
  o.seed = c.seed;
  o.attack = parse_update_kind(c.update);
  o.attack_steps = c.steps;
  if (!c.eps.empty()) o.epsilon = c.eps.front();
  o.alpha = c.alpha;
  o.jobs = c.jobs;
  o.objective = parse_objective(c.objective);

  std::optional<std::pair<Model, Model>> pair;
  std::string pair_note;
  try {
    pair = make_equivalent_pair(lm.model, c.seed);
  } catch (const UsageError& e) {
    pair_note = e.what();
  }
  const auto sens_family = sensitivity_family(c.seed);
  const auto lin_family = linear_family(c.seed);

  Json j = header("abe.axioms/1", "axioms", c);
  j["model"] = lm.name;
  j["methods"] = Json::array();
  bool consistent = true;
  for (const auto& name : expand_methods(c.methods)) {
    const MethodSpec& spec = find_method(name).spec;
    std::vector<AxiomVerdict> verdicts;
    verdicts.push_back(check_sensitivity(name, sens_family, o));
    if (pair) {
      verdicts.push_back(check_implementation_invariance(name, *pair, task.range_lo, task.range_hi, o));
    } else {
      AxiomVerdict na;
      na.axiom = Axiom::ImplementationInvariance;
      na.method = spec.name;
      na.not_applicable = true;
      na.note = pair_note;
      verdicts.push_back(na);
    }
    verdicts.push_back(check_complete(name, task, data.inputs, c.tol, o));
    verdicts.push_back(check_linear(name, lin_family, o));

    Json m;
    m["method"] = spec.name;
    m["declared"] = {{"sensitivity", spec.flags.sensitivity},
                     {"implementation_invariance", spec.flags.implementation_invariance},
                     {"complete", spec.flags.complete}};
    m["verdicts"] = Json::array();
    m["disagreements"] = Json::array();
    for (const auto& v : verdicts) {
      m["verdicts"].push_back(to_json(v));
      if (flag_disagrees(spec, v)) m["disagreements"].push_back(to_string(v.axiom));
      std::cout << spec.name << " " << to_string(v.axiom) << ": "
                << (v.not_applicable ? "n/a" : v.holds ? "holds" : "fails") << '\n';
    }
    consistent = consistent && m["disagreements"].empty();
    j["methods"].push_back(m);
  }
  j["consistent"] = consistent;
  j["elapsed_seconds"] = clock.seconds();
  write_json(out_dir(c) / "axioms.json", j);
  if (!consistent) {
    std::cerr << "declared axiom flags disagree with the verdicts (see axioms.json)\n";
    return kExitAxiomMismatch;
  }
  return 0;
}

int cmd_bench(const RunConfig& c) {
  Clock clock;
  const Dataset data = eval_data(c);
  const Dataset train_set = train_data(c);
  if (!c.weights.empty() && c.models.size() > 1) throw UsageError("--weights applies to a single-model bench");
  std::vector<NamedTask> tasks;
  Json trained = Json::array();
  for (const auto& kind : c.models) {
    LoadedModel lm = obtain_model(c, kind, c.weights.empty() ? train_set : data);
    require_compatible(lm.model, data);
    trained.push_back({{"model", lm.name}, {"final", lm.curve.empty() ? Json(nullptr) : to_json(lm.curve.back())}});
    tasks.push_back({lm.name, task_for(lm.model, data)});
  }
  std::string sweep = c.sweep_model;
  if (sweep.empty()) {
    auto cnn = std::find_if(tasks.begin(), tasks.end(), [](const NamedTask& t) { return t.name == "TinyCNN"; });
    sweep = cnn != tasks.end() ? cnn->name : tasks.front().name;
  } else {
    sweep = to_string(parse_model_kind(sweep));
  }
  const MetricConfig mc = metric_config(c, tasks.front().task, data.input_shape());
  const BenchmarkTable table = benchmark(tasks, expand_methods(c.methods), data, mc, sweep);

  Json j = header("abe.bench/1", "bench", c);
  j["models"] = trained;
  j["n_samples"] = std::min(c.n, data.size());
  const Json body = to_json(table);
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = *it;
  j["baseline_update"] = to_string(sweep_updates().front());
  j["elapsed_seconds"] = clock.seconds();
  const fs::path dir = out_dir(c);
  write_json(dir / "bench.json", j);
  std::vector<MetricReport> rows = table.grid;
  rows.insert(rows.end(), table.update_sweep.begin(), table.update_sweep.end());
  write_text(dir / "bench.csv", metrics_csv(rows));
  for (const auto& r : rows) {
    std::cout << r.model_name << " " << r.method_name << (r.update_name.empty() ? "" : "/" + r.update_name)
              << ": " << (r.error.empty() ? "INS " + std::to_string(r.ins) + " DEL " + std::to_string(r.del)
                                          : "error: " + r.error)
              << '\n';
  }
  return 0;
}

// --- flag plumbing -------------------------------------------------------------

/// Collects only the flags actually given, keyed like the config file.
class FlagSet {
 public:
  explicit FlagSet(CLI::App* app) : app_(app) {}

  template <typename T>
  void option(const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app_->add_option(flag, *value, help);
    if constexpr (std::is_same_v<T, std::vector<std::string>> || std::is_same_v<T, std::vector<double>> ||
                  std::is_same_v<T, std::vector<std::size_t>>) {
      opt->delimiter(',');
    }
    entries_.push_back({opt, [key, value](Json& j) { j[key] = *value; }});
  }

  void flag(const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app_->add_flag(flag, *value, help);
    entries_.push_back({opt, [key, value](Json& j) { j[key] = *value; }});
  }

  Json given() const {
    Json j = Json::object();
    for (const auto& e : entries_)
      if (e.opt->count() > 0) e.write(j);
    return j;
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::function<void(Json&)> write;
  };
  CLI::App* app_;
  std::vector<Entry> entries_;
};

void add_flags(FlagSet& f) {
  f.option<std::string>("--model", "model", "model kind: linear, logreg, mlp, tinycnn");
  f.option<std::vector<std::string>>("--models", "models", "model kinds for bench (comma separated)");
  f.option<std::string>("--weights", "weights", "weight file from `train`");
  f.option<std::string>("--data", "data", "csv:<path>, idx:<images>,<labels> or synthetic:<name>");
  f.option<std::vector<std::string>>("--method", "methods", "attribution method(s), comma separated, or 'all'");
  f.option<std::string>("--update", "update", "update method: LinearPath, GaussianNoise, FGSM, BIM, PGD, MIM");
  f.option<std::vector<double>>("--eps", "eps", "attack radius (comma separated list for `attack`)");
  f.option<double>("--alpha", "alpha", "attack step size");
  f.option<std::size_t>("--steps", "steps", "attack / update steps");
  f.option<std::size_t>("--T", "T", "path integration steps");
  f.option<std::uint64_t>("--seed", "seed", "seed for every random stream (fallback: ABE_SEED)");
  f.option<std::string>("--out", "out", "output directory");
  f.option<std::size_t>("--jobs", "jobs", "worker threads (0: all cores)");
  f.option<std::size_t>("--n", "n", "evaluation samples");
  f.option<std::size_t>("--train-n", "train_n", "synthetic training samples");
  f.option<std::size_t>("--index", "index", "first sample explained by `attribute`");
  f.option<std::vector<std::size_t>>("--hidden", "hidden", "MLP hidden widths");
  f.option<std::size_t>("--epochs", "epochs", "training epochs (0: untrained)");
  f.option<double>("--lr", "lr", "learning rate");
  f.option<std::size_t>("--batch", "batch", "minibatch size");
  f.option<std::size_t>("--K", "K", "insertion/deletion curve points");
  f.option<std::size_t>("--probes", "probes", "INFD probes per sample");
  f.option<double>("--tol", "tol", "relative tolerance of the Complete check");
  f.option<std::string>("--objective", "objective", "explained scalar: logit or neg-ce");
  f.option<std::string>("--score", "score", "curve score: probability or logit");
  f.option<std::string>("--colormap", "colormap", "PNG colormap: gray or heat");
  f.flag("--png", "png", "also write PNG heatmaps");
  f.option<std::string>("--sweep-model", "sweep_model", "bench model for the update sweep");
  f.flag("--robust", "robust", "add PGD robust accuracy to metric reports");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attribution toolkit"};
  app.require_subcommand(1);
  std::optional<std::string> config_path;
  app.add_option("--config", config_path, "JSON config file (flags override it)");

  struct Sub {
    std::string name;
    std::string help;
    std::function<int(const RunConfig&)> run;
  };
  const std::vector<Sub> subs = {
      {"train", "train a model; writes weights.abw, loss.csv, train.json", cmd_train},
      {"attribute", "explain samples; writes attribution.json and heatmaps", cmd_attribute},
      {"attack", "robust accuracy under an attack; writes attack.json", cmd_attack},
      {"metrics", "INS/DEL/INFD per method; writes metrics.json and metrics.csv", cmd_metrics},
      {"axioms", "axiom verdicts per method; writes axioms.json", cmd_axioms},
      {"bench", "method x model grid plus update sweep; writes bench.json and bench.csv", cmd_bench},
  };
  std::vector<std::pair<CLI::App*, std::unique_ptr<FlagSet>>> parsers;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "JSON config file (flags override it)");
    auto flags = std::make_unique<FlagSet>(sub);
    add_flags(*flags);
    parsers.emplace_back(sub, std::move(flags));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!parsers[i].first->parsed()) continue;
      const RunConfig cfg = resolve_config(config_path, parsers[i].second->given());
      return subs[i].run(cfg);
    }
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitNumerical;
  }
}
