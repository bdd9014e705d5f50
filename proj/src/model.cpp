#include "abe/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "abe/errors.hpp"
#include "abe/random.hpp"
#include "json.hpp"

namespace abe {

static_assert(std::endian::native == std::endian::little,
              "weight files are written by memcpy of little-endian doubles");

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Linear: return "Linear";
    case ModelKind::LogisticRegression: return "LogisticRegression";
    case ModelKind::MLP: return "MLP";
    case ModelKind::TinyCNN: return "TinyCNN";
  }
  return "?";
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "linear") return ModelKind::Linear;
  if (n == "logisticregression" || n == "logreg" || n == "logistic") return ModelKind::LogisticRegression;
  if (n == "mlp") return ModelKind::MLP;
  if (n == "tinycnn" || n == "cnn") return ModelKind::TinyCNN;
  throw UsageError("unknown model kind '" + name + "' (available: linear, logreg, mlp, tinycnn)");
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "identity") return Activation::Identity;
  throw UsageError("unknown activation '" + name + "' (available: relu, sigmoid, identity)");
}

// --- Model -----------------------------------------------------------------

Model::Model(ModelKind kind, ModelHyper hyper, std::vector<NamedParam> params)
    : kind_(kind), hyper_(std::move(hyper)), params_(std::move(params)) {}

const Tensor& Model::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw UsageError("model has no parameter '" + name + "'");
}

Tensor& Model::param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  throw UsageError("model has no parameter '" + name + "'");
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Var Model::forward(Tape& tape, Var x, ForwardTrace* trace) const {
  std::vector<Var> ps;
  ps.reserve(params_.size());
  for (const auto& p : params_) ps.push_back(tape.constant(p.value));
  return forward_with(tape, x, ps, trace);
}

namespace {

Var activate(Var v, Activation act, ForwardTrace* trace) {
  switch (act) {
    case Activation::ReLU:
      if (trace) trace->relu_inputs.push_back(v);
      return relu(v);
    case Activation::Sigmoid: return sigmoid(v);
    case Activation::Identity: return v;
  }
  return v;
}

Var dense(Var h, Var w, Var b) {
  const std::size_t out = w.shape()[1];
  return add(matmul(h, w), reshape(b, {1, out}));
}

}  // namespace

Var Model::forward_with(Tape& tape, Var x, std::span<const Var> ps, ForwardTrace* trace) const {
  (void)tape;
  if (ps.size() != params_.size()) {
    throw UsageError("forward_with: expected " + std::to_string(params_.size()) + " parameters, got " +
                     std::to_string(ps.size()));
  }
  if (x.size() != input_size()) {
    throw ShapeError(to_string(kind_) + " expects input of shape " + shape_string(hyper_.input_shape) +
                     ", got " + shape_string(x.shape()));
  }
  const std::size_t k = hyper_.num_classes;
  switch (kind_) {
    case ModelKind::Linear:
    case ModelKind::LogisticRegression: {
      Var h = reshape(x, {1, input_size()});
      return reshape(dense(h, ps[0], ps[1]), {k});
    }
    case ModelKind::MLP: {
      Var h = reshape(x, {1, input_size()});
      const std::size_t layers = ps.size() / 2;
      for (std::size_t l = 0; l < layers; ++l) {
        h = dense(h, ps[2 * l], ps[2 * l + 1]);
        if (l + 1 < layers) h = activate(h, hyper_.activation, trace);
      }
      return reshape(h, {k});
    }
    case ModelKind::TinyCNN: {
      Var img = x.shape() == hyper_.input_shape ? x : reshape(x, hyper_.input_shape);
      Var c1 = conv2d_valid(img, ps[0], ps[1]);
      if (trace) trace->relu_inputs.push_back(c1);
      Var a1 = relu(c1);
      if (trace) {
        trace->conv_activations.push_back(a1);
        trace->pool_inputs.push_back(a1);
      }
      Var p1 = max_pool2x2(a1);
      if (trace) trace->pool_outputs.push_back(p1);
      Var c2 = conv2d_valid(p1, ps[2], ps[3]);
      if (trace) trace->relu_inputs.push_back(c2);
      Var a2 = relu(c2);
      if (trace) trace->conv_activations.push_back(a2);
      Var flat = reshape(a2, {1, a2.size()});
      return reshape(dense(flat, ps[4], ps[5]), {k});
    }
  }
  throw UsageError("unsupported model kind");
}

Tensor Model::logits(const Tensor& x) const {
  return no_grad_eval([this](Tape& t, Var v) { return forward(t, v); }, x);
}

std::size_t Model::predict(const Tensor& x) const { return argmax(logits(x)); }

// --- construction ----------------------------------------------------------

namespace {

Tensor glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor(shape, -s, s, rng);
}

void add_dense(std::vector<NamedParam>& ps, const std::string& prefix, std::size_t in, std::size_t out,
               Rng& rng) {
  ps.push_back({prefix + ".weight", glorot({in, out}, in, out, rng)});
  ps.push_back({prefix + ".bias", Tensor({out}, 0.0)});
}

}  // namespace

Model build_model(ModelKind kind, const Shape& input_shape, std::size_t num_classes, std::uint64_t seed,
                  std::vector<std::size_t> hidden, Activation activation) {
  if (input_shape.empty() || shape_size(input_shape) == 0) throw UsageError("empty input shape");
  if (num_classes == 0) throw UsageError("num_classes must be positive");
  Rng rng = make_rng(seed);
  ModelHyper hyper{input_shape, num_classes, {}, activation};
  std::vector<NamedParam> ps;
  const std::size_t d = shape_size(input_shape);
  switch (kind) {
    case ModelKind::Linear:
    case ModelKind::LogisticRegression:
      if (kind == ModelKind::LogisticRegression && num_classes < 2) {
        throw UsageError("LogisticRegression needs at least 2 classes");
      }
      add_dense(ps, "dense", d, num_classes, rng);
      break;
    case ModelKind::MLP: {
      if (hidden.empty()) throw UsageError("MLP needs at least one hidden layer size");
      hyper.hidden = hidden;
      std::size_t in = d;
      for (std::size_t l = 0; l < hidden.size(); ++l) {
        if (hidden[l] == 0) throw UsageError("MLP hidden sizes must be positive");
        add_dense(ps, "layer" + std::to_string(l), in, hidden[l], rng);
        in = hidden[l];
      }
      add_dense(ps, "layer" + std::to_string(hidden.size()), in, num_classes, rng);
      break;
    }
    case ModelKind::TinyCNN: {
      if (input_shape.size() != 3 || input_shape[0] < 8 || input_shape[1] < 8) {
        throw UsageError("TinyCNN requires input shape (H, W, C) with H, W >= 8, got " +
                         shape_string(input_shape));
      }
      const std::size_t C = input_shape[2];
      ps.push_back({"conv1.weight", glorot({3, 3, C, 4}, 9 * C, 9 * 4, rng)});
      ps.push_back({"conv1.bias", Tensor({4}, 0.0)});
      ps.push_back({"conv2.weight", glorot({3, 3, 4, 8}, 9 * 4, 9 * 8, rng)});
      ps.push_back({"conv2.bias", Tensor({8}, 0.0)});
      const std::size_t h2 = (input_shape[0] - 2) / 2 - 2;
      const std::size_t w2 = (input_shape[1] - 2) / 2 - 2;
      add_dense(ps, "dense", h2 * w2 * 8, num_classes, rng);
      break;
    }
  }
  return Model(kind, std::move(hyper), std::move(ps));
}

// --- training --------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (epochs == 0) throw UsageError("epochs must be positive");
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  if (!(l2 >= 0.0)) throw UsageError("l2 must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must be in [0, 1)");
}

namespace {

void check_labels(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw DataError("training dataset is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] >= model.num_classes()) {
      throw DataError("label " + std::to_string(data.labels[i]) + " at sample " + std::to_string(i) +
                      " is outside [0, " + std::to_string(model.num_classes()) + ")");
    }
  }
}

/// Mean cross-entropy over `indices` with parameter gradients.
double loss_and_grad(const Model& model, const Dataset& data, std::span<const std::size_t> indices,
                     std::vector<Tensor>& grads, std::size_t* correct = nullptr) {
  Tape tape;
  std::vector<Var> ps;
  for (const auto& p : model.params()) ps.push_back(tape.variable(p.value));
  std::vector<Var> losses;
  losses.reserve(indices.size());
  for (std::size_t i : indices) {
    Var logits = model.forward_with(tape, tape.constant(data.inputs[i]), ps);
    if (correct && argmax(logits.value()) == data.labels[i]) ++*correct;
    losses.push_back(cross_entropy(logits, data.labels[i]));
  }
  Var total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  Var loss = mul(total, 1.0 / static_cast<double>(indices.size()));
  tape.backward(loss);
  grads.clear();
  for (Var p : ps) grads.push_back(tape.gradient(p));
  return loss.value().item();
}

}  // namespace

EpochStats evaluate(const Model& model, const Dataset& data) {
  check_labels(model, data);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<Tensor> grads;
  std::size_t correct = 0;
  EpochStats s;
  s.loss = loss_and_grad(model, data, all, grads, &correct);
  s.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  double sq = 0.0;
  for (const auto& g : grads) sq += dot(g, g);
  s.grad_norm = std::sqrt(sq);
  return s;
}

TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  check_labels(model, data);
  TrainResult result;
  result.curve.push_back(evaluate(model, data));
  if (!std::isfinite(result.curve.back().loss)) {
    throw NumericalError("training diverged: non-finite loss at epoch 0");
  }

  Rng rng = make_rng(cfg.seed, 0x7EA1);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> velocity;
  for (const auto& p : model.params()) velocity.emplace_back(p.value.shape(), 0.0);
  std::vector<Tensor> grads;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::string diverged = "training diverged: non-finite loss at epoch " + std::to_string(epoch);
    EpochStats s;
    try {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t count = std::min(cfg.batch_size, order.size() - start);
        const double loss =
            loss_and_grad(model, data, std::span<const std::size_t>(order).subspan(start, count), grads);
        if (!std::isfinite(loss)) throw NumericalError(diverged);
        auto& ps = model.params();
        for (std::size_t p = 0; p < ps.size(); ++p) {
          Tensor& w = ps[p].value;
          Tensor& v = velocity[p];
          for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = grads[p][i] + cfg.l2 * w[i];
            v[i] = cfg.momentum * v[i] + g;
            w[i] -= cfg.learning_rate * v[i];
          }
        }
      }
      s = evaluate(model, data);
    } catch (const NumericalError&) {
      throw NumericalError(diverged);
    }
    s.epoch = epoch;
    if (!std::isfinite(s.loss)) throw NumericalError(diverged);
    result.curve.push_back(s);
  }
  result.model = std::move(model);
  return result;
}

void write_loss_curve_csv(const std::filesystem::path& path, const std::vector<EpochStats>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,loss,accuracy\n";
  for (const auto& s : curve) out << s.epoch << ',' << s.loss << ',' << s.accuracy << '\n';
}

// --- weight files ----------------------------------------------------------
//
// "ABEW1" | u32 header length | JSON header | f64 LE payload | u32 CRC32(header + payload)

namespace {

constexpr char kMagicPrefix[] = "ABEW";
constexpr char kVersion = '1';

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  return v;
}

std::uint32_t crc(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(data),
                                            static_cast<uInt>(n)));
}

}  // namespace

void save_weights(const Model& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = "ABEW";
  header["version"] = 1;
  header["kind"] = to_string(model.kind());
  header["hyper"] = {{"input_shape", model.hyper().input_shape},
                     {"num_classes", model.hyper().num_classes},
                     {"hidden", model.hyper().hidden},
                     {"activation", to_string(model.hyper().activation)}};
  std::string payload;
  std::size_t offset = 0;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& p : model.params()) {
    manifest.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset},
                        {"count", p.value.size()}});
    const auto* bytes = reinterpret_cast<const char*>(p.value.data().data());
    payload.append(bytes, p.value.size() * sizeof(double));
    offset += p.value.size();
  }
  header["tensors"] = manifest;
  const std::string hdr = header.dump();

  std::string body = hdr + payload;
  std::string file(kMagicPrefix);
  file.push_back(kVersion);
  put_u32(file, static_cast<std::uint32_t>(hdr.size()));
  file += body;
  put_u32(file, crc(body.data(), body.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write weight file " + path.string());
  out.write(file.data(), static_cast<std::streamsize>(file.size()));
}

Model load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weight file " + path.string());
  std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (file.size() < 5 || file.compare(0, 4, kMagicPrefix) != 0) {
    throw DataError(name + ": not a weight file (bad magic)");
  }
  if (file[4] != kVersion) {
    throw DataError(name + ": unsupported weight file version '" + std::string(1, file[4]) + "'");
  }
  if (file.size() < 13) throw DataError(name + ": truncated weight file");
  const std::uint32_t hlen = get_u32(file, 5);
  if (file.size() < 9 + static_cast<std::size_t>(hlen) + 4) throw DataError(name + ": truncated weight file");
  const std::size_t body_len = file.size() - 9 - 4;
  if (crc(file.data() + 9, body_len) != get_u32(file, file.size() - 4)) {
    throw DataError(name + ": checksum mismatch");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(file.substr(9, hlen));
    if (header.at("version").get<int>() != 1) throw DataError(name + ": unsupported weight file version");
    ModelHyper hyper;
    hyper.input_shape = header.at("hyper").at("input_shape").get<Shape>();
    hyper.num_classes = header.at("hyper").at("num_classes").get<std::size_t>();
    hyper.hidden = header.at("hyper").at("hidden").get<std::vector<std::size_t>>();
    hyper.activation = parse_activation(header.at("hyper").at("activation").get<std::string>());
    const ModelKind kind = parse_model_kind(header.at("kind").get<std::string>());

    const std::size_t payload_at = 9 + hlen;
    const std::size_t payload_len = body_len - hlen;
    std::vector<NamedParam> ps;
    for (const auto& t : header.at("tensors")) {
      const auto shape = t.at("shape").get<Shape>();
      const auto off = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (count != shape_size(shape) || (off + count) * sizeof(double) > payload_len) {
        throw DataError(name + ": tensor manifest inconsistent with payload");
      }
      std::vector<double> vals(count);
      std::memcpy(vals.data(), file.data() + payload_at + off * sizeof(double), count * sizeof(double));
      ps.push_back({t.at("name").get<std::string>(), Tensor(shape, std::move(vals))});
    }
    Model m(kind, std::move(hyper), std::move(ps));
    const Model reference = build_model(m.kind(), m.hyper().input_shape, m.num_classes(), 0, m.hyper().hidden,
                                        m.hyper().activation);
    if (reference.params().size() != m.params().size()) {
      throw DataError(name + ": parameter list does not match the declared architecture");
    }
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      if (reference.params()[i].value.shape() != m.params()[i].value.shape()) {
        throw DataError(name + ": parameter '" + m.params()[i].name + "' has the wrong shape");
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ": malformed header: " + e.what());
  } catch (const UsageError& e) {
    throw DataError(name + ": " + e.what());
  }
}

// --- functional equivalence ------------------------------------------------

std::pair<Model, Model> make_equivalent_pair(const Model& model, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xE0);
  switch (model.kind()) {
    case ModelKind::Linear:
    case ModelKind::LogisticRegression: {
      // x W + b == (x W1 + b1) W2 + b2 with W1 = P * diag(2^e): exact in floating point.
      const Tensor& W = model.param("dense.weight");
      const Tensor& b = model.param("dense.bias");
      const std::size_t d = W.shape()[0], k = W.shape()[1];
      std::vector<std::size_t> perm(d);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::uniform_int_distribution<int> expo(-2, 2);
      Tensor W1({d, d}, 0.0), W2({d, k}, 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        const double s = std::ldexp(1.0, expo(rng));
        W1[i * d + perm[i]] = s;
        for (std::size_t j = 0; j < k; ++j) W2[perm[i] * k + j] = W[i * k + j] / s;
      }
      Tensor b1 = uniform_tensor({d}, -0.5, 0.5, rng);
      Tensor b2 = b;
      for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t h = 0; h < d; ++h) s += b1[h] * W2[h * k + j];
        b2[j] -= s;
      }
      ModelHyper hyper{model.hyper().input_shape, k, {d}, Activation::Identity};
      Model factored(ModelKind::MLP, hyper,
                     {{"layer0.weight", W1}, {"layer0.bias", b1}, {"layer1.weight", W2}, {"layer1.bias", b2}});
      return {model, factored};
    }
    case ModelKind::MLP: {
      if (model.hyper().hidden.size() != 1) {
        throw UsageError("make_equivalent_pair: only single-hidden-layer MLPs are supported");
      }
      const Tensor& W1 = model.param("layer0.weight");
      const Tensor& b1 = model.param("layer0.bias");
      const Tensor& W2 = model.param("layer1.weight");
      const std::size_t d = W1.shape()[0], h = W1.shape()[1], k = W2.shape()[1];
      std::vector<std::size_t> perm(h);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Tensor pW1 = W1, pb1 = b1, pW2 = W2;
      for (std::size_t u = 0; u < h; ++u) {
        const std::size_t src = perm[u];
        for (std::size_t i = 0; i < d; ++i) pW1[i * h + u] = W1[i * h + src];
        pb1[u] = b1[src];
        for (std::size_t j = 0; j < k; ++j) pW2[u * k + j] = W2[src * k + j];
      }
      Model permuted(ModelKind::MLP, model.hyper(),
                     {{"layer0.weight", pW1}, {"layer0.bias", pb1}, {"layer1.weight", pW2},
                      {"layer1.bias", model.param("layer1.bias")}});
      return {model, permuted};
    }
    case ModelKind::TinyCNN: break;
  }
  throw UsageError("make_equivalent_pair: unsupported model kind " + to_string(model.kind()));
}

}  // namespace abe
