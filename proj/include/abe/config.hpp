#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "abe/serialize.hpp"

namespace abe {

/// Parameters shared by every CLI subcommand. Keys of the JSON config file
/// are the field names below.
struct RunConfig {
  std::string model = "MLP";
  std::vector<std::string> models = {"MLP", "TinyCNN"};  // bench
  std::string weights;
  std::string data = "synthetic:bars-crosses-4class-8x8";
  std::vector<std::string> methods = {"IG"};
  std::string update = "PGD";
  std::vector<double> eps;  // empty: 16/255 of the data range
  std::optional<double> alpha;
  std::size_t steps = 10;
  std::size_t T = 50;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::size_t jobs = 0;  // 0: all cores
  std::size_t n = 20;        // evaluation samples
  std::size_t train_n = 400;  // synthetic training samples
  std::size_t index = 0;
  std::vector<std::size_t> hidden = {32};
  std::size_t epochs = 20;  // 0: untrained model
  double lr = 0.05;
  std::size_t batch = 16;
  std::size_t K = 20;
  std::size_t probes = 64;
  double tol = 0.05;
  std::string objective = "logit";
  std::string score = "probability";
  std::string colormap = "gray";
  bool png = false;
  std::string sweep_model;
  bool robust = false;

  /// Overwrites the fields named in `j`; unknown keys or wrong types throw UsageError.
  void merge(const Json& j);
  void validate() const;
  Json to_json() const;
};

const std::vector<std::string>& config_keys();

/// defaults < ABE_SEED < config file < flags. `flags` holds only the flags
/// given on the command line, keyed like the config file.
RunConfig resolve_config(const std::optional<std::string>& config_path, const Json& flags);

Objective parse_objective(const std::string& name);

}  // namespace abe
