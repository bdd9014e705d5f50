#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "abe/tensor.hpp"

namespace abe {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class GradMode { Enabled, Disabled };

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
/// is topologically sorted by construction and backward is a single reverse sweep.
///
/// A tape is single-threaded and single-use: backward() consumes it.
class Tape {
 public:
  /// Accumulates `out_grad` (the gradient of the node's output) into the
  /// node's parents through Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  explicit Tape(GradMode mode = GradMode::Enabled);
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is populated by backward().
  Var variable(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Records an op result. `backward` is dropped when no parent requires grad
  /// or when the tape is not recording.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient of the last backward() loss with respect to `v`; zeros when `v`
  /// did not influence the loss.
  Tensor gradient(Var v) const;

  void accumulate(std::size_t id, std::span<const double> g);
  void accumulate_at(std::size_t id, std::size_t index, double g);

  bool recording() const { return mode_ == GradMode::Enabled; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  /// Nodes currently alive across all tapes in the process.
  static std::size_t live_nodes();

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  GradMode mode_;
  bool consumed_ = false;
};

/// Evaluates `f` on a throwaway tape that records no backward closures.
Tensor no_grad_eval(const std::function<Var(Tape&, Var)>& f, const Tensor& x);

// Ops. Every op checks shapes and finiteness of its inputs and records itself on
// the operands' tape.
Var add(Var a, Var b);
Var add(Var a, double s);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul(Var a, double s);
Var neg(Var a);
Var matmul(Var a, Var b);
Var relu(Var a);
Var sigmoid(Var a);
Var log(Var a);
/// Row-wise over the last dimension.
Var softmax(Var a);
Var log_softmax(Var a);
Var sum(Var a);
Var mean(Var a);
/// Input (H, W, C); output (H/2, W/2, C), odd trailing rows/cols dropped.
Var max_pool2x2(Var a);
/// Input (H, W, Cin), kernel (kh, kw, Cin, Cout), bias (Cout); stride 1, no padding.
Var conv2d_valid(Var input, Var kernel, Var bias);
/// Flat-index gather; output is 1-D with one entry per index.
Var gather(Var a, std::vector<std::size_t> indices);
Var index(Var a, std::size_t flat_index);
Var reshape(Var a, Shape shape);

/// -log softmax(logits)[label] for a 1-D logit vector.
Var cross_entropy(Var logits, std::size_t label);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return mul(a, s); }
inline Var operator*(double s, Var a) { return mul(a, s); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace abe
