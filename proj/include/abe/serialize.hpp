#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "abe/attribution.hpp"
#include "abe/axioms.hpp"
#include "abe/metrics.hpp"
#include "abe/model.hpp"

namespace abe {

using Json = nlohmann::ordered_json;

/// Keys holding wall-clock measurements; determinism checks drop them.
const std::vector<std::string>& timing_keys();

/// Recursively removes timing_keys() from objects.
Json strip_timing(Json j);

Json to_json(const Tensor& t);
Tensor tensor_from_json(const Json& j);

Json to_json(const AttributionResult& r);
Json to_json(const MetricReport& r);
Json to_json(const AxiomVerdict& v);
Json to_json(const BenchmarkTable& t);
Json to_json(const EpochStats& s);

/// One row per report; optional columns are empty when unset.
std::string metrics_csv(const std::vector<MetricReport>& reports);

/// Wraps `body` as {"schema": <name>/<version>, ...body}.
Json with_schema(const std::string& schema, const Json& body);

/// Pretty-printed with a trailing newline. Throws DataError when unwritable.
void write_json(const std::filesystem::path& path, const Json& j);
void write_text(const std::filesystem::path& path, const std::string& text);
Json read_json(const std::filesystem::path& path);

}  // namespace abe
