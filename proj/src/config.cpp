#include "abe/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <map>

#include "abe/errors.hpp"

namespace abe {

namespace {

using Setter = std::function<void(RunConfig&, const Json&)>;

template <typename T>
Setter field(T RunConfig::*member) {
  return [member](RunConfig& c, const Json& v) { c.*member = v.get<T>(); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model", field(&RunConfig::model)},
      {"models", field(&RunConfig::models)},
      {"weights", field(&RunConfig::weights)},
      {"data", field(&RunConfig::data)},
      {"methods", field(&RunConfig::methods)},
      {"update", field(&RunConfig::update)},
      {"eps", field(&RunConfig::eps)},
      {"alpha", [](RunConfig& c, const Json& v) { c.alpha = v.is_null() ? std::nullopt : std::optional(v.get<double>()); }},
      {"steps", field(&RunConfig::steps)},
      {"T", field(&RunConfig::T)},
      {"seed", field(&RunConfig::seed)},
      {"out", field(&RunConfig::out)},
      {"jobs", field(&RunConfig::jobs)},
      {"n", field(&RunConfig::n)},
      {"train_n", field(&RunConfig::train_n)},
      {"index", field(&RunConfig::index)},
      {"hidden", field(&RunConfig::hidden)},
      {"epochs", field(&RunConfig::epochs)},
      {"lr", field(&RunConfig::lr)},
      {"batch", field(&RunConfig::batch)},
      {"K", field(&RunConfig::K)},
      {"probes", field(&RunConfig::probes)},
      {"tol", field(&RunConfig::tol)},
      {"objective", field(&RunConfig::objective)},
      {"score", field(&RunConfig::score)},
      {"colormap", field(&RunConfig::colormap)},
      {"png", field(&RunConfig::png)},
      {"sweep_model", field(&RunConfig::sweep_model)},
      {"robust", field(&RunConfig::robust)},
  };
  return table;
}

std::string key_list() {
  std::string list;
  for (const auto& [k, _] : setters()) list += (list.empty() ? "" : ", ") + k;
  return list;
}

// Unsigned fields given as negative numbers would wrap; reject them up front.
void reject_negative(const std::string& key, const Json& v) {
  auto bad = [](const Json& e) { return e.is_number_integer() && e.get<std::int64_t>() < 0; };
  if (bad(v) || (v.is_array() && std::any_of(v.begin(), v.end(), bad))) {
    throw UsageError("config key '" + key + "' must not be negative");
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

void RunConfig::merge(const Json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto s = setters().find(it.key());
    if (s == setters().end()) {
      throw UsageError("unknown config key '" + it.key() + "' (known: " + key_list() + ")");
    }
    reject_negative(it.key(), it.value());
    try {
      s->second(*this, it.value());
    } catch (const nlohmann::json::exception&) {
      throw UsageError("config key '" + it.key() + "' has the wrong type: " + it.value().dump());
    }
  }
}

void RunConfig::validate() const {
  if (methods.empty()) throw UsageError("at least one method is required");
  if (models.empty()) throw UsageError("at least one model is required");
  if (steps == 0) throw UsageError("steps must be >= 1");
  if (T == 0) throw UsageError("T must be >= 1");
  if (n == 0) throw UsageError("n must be >= 1");
  if (batch == 0) throw UsageError("batch must be >= 1");
  if (train_n == 0) throw UsageError("train_n must be >= 1");
  if (!(lr > 0)) throw UsageError("lr must be > 0");
  if (K < 2) throw UsageError("K must be >= 2");
  if (probes == 0) throw UsageError("probes must be >= 1");
  if (!(tol >= 0)) throw UsageError("tol must be >= 0");
  for (double e : eps)
    if (!(e >= 0)) throw UsageError("eps must be >= 0");
  if (alpha && !(*alpha > 0)) throw UsageError("alpha must be > 0");
  if (score != "probability" && score != "logit") throw UsageError("score must be 'probability' or 'logit'");
  parse_objective(objective);
  parse_update_kind(update);
  for (const auto& m : models) parse_model_kind(m);
  parse_model_kind(model);
}

Json RunConfig::to_json() const {
  Json j;
  j["model"] = model;
  j["models"] = models;
  j["weights"] = weights;
  j["data"] = data;
  j["methods"] = methods;
  j["update"] = update;
  j["eps"] = eps;
  j["alpha"] = alpha ? Json(*alpha) : Json(nullptr);
  j["steps"] = steps;
  j["T"] = T;
  j["seed"] = seed;
  j["n"] = n;
  j["train_n"] = train_n;
  j["index"] = index;
  j["hidden"] = hidden;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["batch"] = batch;
  j["K"] = K;
  j["probes"] = probes;
  j["tol"] = tol;
  j["objective"] = objective;
  j["score"] = score;
  j["colormap"] = colormap;
  j["png"] = png;
  j["sweep_model"] = sweep_model;
  j["robust"] = robust;
  return j;
}

RunConfig resolve_config(const std::optional<std::string>& config_path, const Json& flags) {
  RunConfig cfg;
  if (const char* env = std::getenv("ABE_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') throw UsageError(std::string("ABE_SEED is not an unsigned integer: ") + env);
    cfg.seed = s;
  }
  if (config_path) {
    Json file;
    try {
      file = read_json(*config_path);
    } catch (const DataError& e) {
      throw UsageError(std::string("config file: ") + e.what());
    }
    cfg.merge(file);
  }
  cfg.merge(flags);
  cfg.validate();
  return cfg;
}

Objective parse_objective(const std::string& name) {
  if (name == "logit") return Objective::TargetLogit;
  if (name == "neg-ce") return Objective::NegCrossEntropy;
  throw UsageError("unknown objective '" + name + "' (available: logit, neg-ce)");
}

}  // namespace abe
