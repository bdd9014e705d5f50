#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "abe/autodiff.hpp"
#include "abe/dataset.hpp"
#include "abe/tensor.hpp"

namespace abe {

enum class ModelKind { Linear, LogisticRegression, MLP, TinyCNN };
enum class Activation { ReLU, Sigmoid, Identity };

std::string to_string(ModelKind kind);
std::string to_string(Activation act);
ModelKind parse_model_kind(const std::string& name);
Activation parse_activation(const std::string& name);

struct ModelHyper {
  Shape input_shape;
  std::size_t num_classes = 1;
  std::vector<std::size_t> hidden;  // MLP only
  Activation activation = Activation::ReLU;

  friend bool operator==(const ModelHyper&, const ModelHyper&) = default;
};

struct NamedParam {
  std::string name;
  Tensor value;
};

/// Optional instrumentation filled during a forward pass.
struct ForwardTrace {
  std::vector<Var> conv_activations;  // post-ReLU conv feature maps, shallow to deep
  std::vector<Var> relu_inputs;
  std::vector<Var> pool_inputs;
  std::vector<Var> pool_outputs;
};

class Model {
 public:
  Model() = default;
  Model(ModelKind kind, ModelHyper hyper, std::vector<NamedParam> params);

  ModelKind kind() const { return kind_; }
  const ModelHyper& hyper() const { return hyper_; }
  std::size_t num_classes() const { return hyper_.num_classes; }
  std::size_t input_size() const { return shape_size(hyper_.input_shape); }

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  std::size_t param_count() const;

  /// Logits of shape (num_classes). Parameters enter the tape as constants.
  Var forward(Tape& tape, Var x, ForwardTrace* trace = nullptr) const;
  /// Same, with caller-supplied parameter Vars (one per params() entry, same order).
  Var forward_with(Tape& tape, Var x, std::span<const Var> params,
                   ForwardTrace* trace = nullptr) const;

  Tensor logits(const Tensor& x) const;
  std::size_t predict(const Tensor& x) const;

 private:
  ModelKind kind_ = ModelKind::Linear;
  ModelHyper hyper_;
  std::vector<NamedParam> params_;
};

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
/// TinyCNN requires input (H, W, C) with H, W >= 8.
Model build_model(ModelKind kind, const Shape& input_shape, std::size_t num_classes,
                  std::uint64_t seed, std::vector<std::size_t> hidden = {},
                  Activation activation = Activation::ReLU);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double l2 = 0.0;
  double momentum = 0.9;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 0 is the untrained model
  double loss = 0.0;
  double accuracy = 0.0;
  double grad_norm = 0.0;  // full-dataset gradient norm of the mean loss
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> curve;
};

/// Minibatch SGD with momentum on mean cross-entropy (+ l2/2 * ||w||^2).
/// Throws NumericalError naming the epoch if the loss becomes non-finite.
TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg);

/// Mean cross-entropy, accuracy and gradient norm over the whole dataset.
EpochStats evaluate(const Model& model, const Dataset& data);

void write_loss_curve_csv(const std::filesystem::path& path, const std::vector<EpochStats>& curve);

void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);

/// Two structurally different models computing the same function:
///   Linear/LogisticRegression -> (original, identity-activation MLP whose two
///   layers factor the weight matrix);
///   single-hidden-layer MLP -> (original, hidden units permuted).
std::pair<Model, Model> make_equivalent_pair(const Model& model, std::uint64_t seed = 0);

}  // namespace abe
