#include "abe/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "abe/errors.hpp"

namespace abe {

const std::vector<std::string>& timing_keys() {
  static const std::vector<std::string> keys = {"fps", "rep_fps", "elapsed_seconds"};
  return keys;
}

Json strip_timing(Json j) {
  if (j.is_object()) {
    Json out = Json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(timing_keys().begin(), timing_keys().end(), it.key()) != timing_keys().end()) continue;
      out[it.key()] = strip_timing(it.value());
    }
    return out;
  }
  if (j.is_array()) {
    for (auto& e : j) e = strip_timing(e);
  }
  return j;
}

Json to_json(const Tensor& t) {
  Json j;
  j["shape"] = t.shape();
  j["data"] = t.values();
  return j;
}

Tensor tensor_from_json(const Json& j) {
  try {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("tensor JSON: ") + e.what());
  }
}

namespace {

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json to_json(const AttributionResult& r) {
  Json j;
  j["method"] = r.method_name;
  j["label"] = r.label;
  j["objective"] = to_string(r.objective);
  j["steps_taken"] = r.steps_taken;
  j["attribution_sum"] = sum(r.attribution);
  j["completeness_residual"] = r.has_completeness() ? Json(r.completeness_residual) : Json(nullptr);
  j["trust_radius_exceeded"] = r.trust_radius_exceeded;
  j["fallback_used"] = r.fallback_used;
  j["warnings"] = r.warnings;
  j["attribution"] = to_json(r.attribution);
  j["input"] = to_json(r.input);
  if (r.endpoints) {
    j["endpoints"] = {{"start", to_json(r.endpoints->start)}, {"end", to_json(r.endpoints->end)}};
  } else {
    j["endpoints"] = nullptr;
  }
  j["reference_count"] = r.references.size();
  return j;
}

Json to_json(const MetricReport& r) {
  Json j;
  j["model"] = r.model_name;
  j["method"] = r.method_name;
  if (!r.update_name.empty()) j["update"] = r.update_name;
  j["n_samples"] = r.n_samples;
  j["ins"] = r.ins;
  j["del"] = r.del;
  j["ins_se"] = r.ins_se;
  j["del_se"] = r.del_se;
  j["infd"] = r.infd;
  j["fps"] = r.fps;
  j["robust_acc"] = optional_number(r.robust_acc);
  j["mean_completeness_residual"] = optional_number(r.mean_completeness_residual);
  j["error"] = r.error.empty() ? Json(nullptr) : Json(r.error);
  return j;
}

Json to_json(const AxiomVerdict& v) {
  Json j;
  j["axiom"] = to_string(v.axiom);
  j["method"] = v.method;
  j["holds"] = v.holds;
  j["not_applicable"] = v.not_applicable;
  j["tolerance"] = v.tolerance;
  j["checked"] = v.checked;
  j["passed"] = v.passed;
  j["note"] = v.note;
  if (v.witness) {
    Json w;
    w["instance"] = v.witness->instance;
    w["input"] = to_json(v.witness->input);
    w["baseline"] = to_json(v.witness->baseline);
    w["feature"] = v.witness->feature == kNoFeature ? Json(nullptr) : Json(v.witness->feature);
    w["values"] = v.witness->values;
    j["witness"] = w;
  } else {
    j["witness"] = nullptr;
  }
  return j;
}

Json to_json(const BenchmarkTable& t) {
  Json j;
  j["grid"] = Json::array();
  for (const auto& r : t.grid) j["grid"].push_back(to_json(r));
  j["sweep_model"] = t.sweep_model.empty() ? Json(nullptr) : Json(t.sweep_model);
  j["update_sweep"] = Json::array();
  for (const auto& r : t.update_sweep) j["update_sweep"].push_back(to_json(r));
  return j;
}

Json to_json(const EpochStats& s) {
  return Json{{"epoch", s.epoch}, {"loss", s.loss}, {"accuracy", s.accuracy}, {"grad_norm", s.grad_norm}};
}

std::string metrics_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "model,method,update,n_samples,ins,del,ins_se,del_se,infd,fps,robust_acc,mean_completeness_residual,error\n";
  for (const auto& r : reports) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    os << r.model_name << ',' << r.method_name << ',' << r.update_name << ',' << r.n_samples << ',' << r.ins << ','
       << r.del << ',' << r.ins_se << ',' << r.del_se << ',' << r.infd << ',' << r.fps << ',';
    if (r.robust_acc) os << *r.robust_acc;
    os << ',';
    if (r.mean_completeness_residual) os << *r.mean_completeness_residual;
    os << ',';
    if (!err.empty()) os << '"' << err << '"';
    os << '\n';
  }
  return os.str();
}

Json with_schema(const std::string& schema, const Json& body) {
  Json j;
  j["schema"] = schema;
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = it.value();
  return j;
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace abe
