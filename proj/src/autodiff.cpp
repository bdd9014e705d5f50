#include "abe/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "abe/errors.hpp"

namespace abe {

namespace {
std::atomic<std::size_t> g_live_nodes{0};

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid()) throw GradientError(std::string(op) + ": invalid Var");
  if (&a.tape() != &b.tape()) throw GradientError(std::string(op) + ": operands live on different tapes");
  return a.tape();
}

void check_input(Var a, const char* op) {
  if (!a.valid()) throw GradientError(std::string(op) + ": invalid Var");
  require_finite(a.value(), op);
}

void check_shapes(Var a, Var b, const char* op) {
  require_same_shape(a.value(), b.value(), op);
}
}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Tape::Tape(GradMode mode) : mode_(mode) {}

Tape::~Tape() { g_live_nodes -= nodes_.size(); }

std::size_t Tape::live_nodes() { return g_live_nodes.load(); }

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording();
  nodes_.push_back(std::move(n));
  ++g_live_nodes;
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  ++g_live_nodes;
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (recording()) {
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [&](std::size_t p) { return nodes_[p].requires_grad; });
  }
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  ++g_live_nodes;
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, std::span<const double> g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::accumulate_at(std::size_t id, std::size_t index, double g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  n.grad[index] += g;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw GradientError("backward: loss lives on another tape");
  if (consumed_) throw GradientError("backward called twice on the same tape");
  if (loss.size() != 1) {
    throw GradientError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!recording()) throw GradientError("backward on a tape with gradient tracking disabled");
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad.assign(1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (n.requires_grad && !n.backward) {
      if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
      n.value.set_grad(n.grad);
    }
  }
}

Tensor Tape::gradient(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

Tensor no_grad_eval(const std::function<Var(Tape&, Var)>& f, const Tensor& x) {
  Tape tape(GradMode::Disabled);
  Var out = f(tape, tape.constant(x));
  return out.value();
}

// --- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  check_input(a, "add");
  check_input(b, "add");
  check_shapes(a, b, "add");
  Tensor out = a.value() + b.value();
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var add(Var a, double s) {
  check_input(a, "add");
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia](Tape& tp, std::span<const double> g) { tp.accumulate(ia, g); });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  check_input(a, "sub");
  check_input(b, "sub");
  check_shapes(a, b, "sub");
  Tensor out = a.value() - b.value();
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    tp.accumulate(ia, g);
    std::vector<double> ng(g.begin(), g.end());
    for (auto& v : ng) v = -v;
    tp.accumulate(ib, ng);
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  check_input(a, "mul");
  check_input(b, "mul");
  check_shapes(a, b, "mul");
  Tensor out = hadamard(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    std::vector<double> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  });
}

Var mul(Var a, double s) {
  check_input(a, "mul");
  if (!std::isfinite(s)) throw NumericalError("mul: non-finite scalar");
  Tensor out = scaled(a.value(), s);
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, s](Tape& tp, std::span<const double> g) {
    std::vector<double> ga(g.begin(), g.end());
    for (auto& v : ga) v *= s;
    tp.accumulate(ia, ga);
  });
}

Var neg(Var a) { return mul(a, -1.0); }

Var relu(Var a) {
  check_input(a, "relu");
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, std::span<const double> g) {
    const Tensor& x = tp.value(ia);
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
    tp.accumulate(ia, ga);
  });
}

Var sigmoid(Var a) {
  check_input(a, "sigmoid");
  Tensor out = a.value();
  for (auto& v : out.data()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  const auto ia = a.id();
  auto y = out.values();
  return a.tape().record(std::move(out), {ia},
                         [ia, y = std::move(y)](Tape& tp, std::span<const double> g) {
                           std::vector<double> ga(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
                           tp.accumulate(ia, ga);
                         });
}

Var log(Var a) {
  check_input(a, "log");
  Tensor out = a.value();
  for (auto& v : out.data()) {
    if (v <= 0.0) throw NumericalError("log: non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, std::span<const double> g) {
    const Tensor& x = tp.value(ia);
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / x[i];
    tp.accumulate(ia, ga);
  });
}

// --- row-wise normalizations -----------------------------------------------

namespace {
std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = last_dim(x);
  for (std::size_t r = 0; r < x.size(); r += n) {
    double m = x[r];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, x[r + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[r + j] = std::exp(x[r + j] - m);
      z += out[r + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r + j] /= z;
  }
  return out;
}
}  // namespace

Var softmax(Var a) {
  check_input(a, "softmax");
  Tensor out = softmax_rows(a.value());
  const auto ia = a.id();
  auto y = out.values();
  const std::size_t n = last_dim(out);
  return a.tape().record(std::move(out), {ia},
                         [ia, n, y = std::move(y)](Tape& tp, std::span<const double> g) {
                           // Jacobian-vector product: dx = y * (g - <g, y>) per row.
                           std::vector<double> ga(g.size());
                           for (std::size_t r = 0; r < g.size(); r += n) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += g[r + j] * y[r + j];
                             for (std::size_t j = 0; j < n; ++j) ga[r + j] = y[r + j] * (g[r + j] - s);
                           }
                           tp.accumulate(ia, ga);
                         });
}

Var log_softmax(Var a) {
  check_input(a, "log_softmax");
  const Tensor& x = a.value();
  Tensor p = softmax_rows(x);
  Tensor out = x;
  const std::size_t n = last_dim(x);
  for (std::size_t r = 0; r < x.size(); r += n) {
    double m = x[r];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, x[r + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[r + j] - m);
    const double lz = m + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r + j] = x[r + j] - lz;
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, n, p = p.values()](Tape& tp, std::span<const double> g) {
                           std::vector<double> ga(g.size());
                           for (std::size_t r = 0; r < g.size(); r += n) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += g[r + j];
                             for (std::size_t j = 0; j < n; ++j) ga[r + j] = g[r + j] - p[r + j] * s;
                           }
                           tp.accumulate(ia, ga);
                         });
}

// --- reductions ------------------------------------------------------------

Var sum(Var a) {
  check_input(a, "sum");
  const double s = abe::sum(a.value());
  const auto ia = a.id();
  const std::size_t n = a.size();
  return a.tape().record(Tensor::scalar(s), {ia}, [ia, n](Tape& tp, std::span<const double> g) {
    std::vector<double> ga(n, g[0]);
    tp.accumulate(ia, ga);
  });
}

Var mean(Var a) {
  check_input(a, "mean");
  const std::size_t n = a.size();
  const double s = abe::sum(a.value()) / static_cast<double>(n);
  const auto ia = a.id();
  return a.tape().record(Tensor::scalar(s), {ia}, [ia, n](Tape& tp, std::span<const double> g) {
    std::vector<double> ga(n, g[0] / static_cast<double>(n));
    tp.accumulate(ia, ga);
  });
}

// --- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  check_input(a, "matmul");
  check_input(b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw ShapeError("matmul: shape mismatch " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib},
                  [ia, ib, m, k, n](Tape& tp, std::span<const double> g) {
                    const Tensor& A = tp.value(ia);
                    const Tensor& B = tp.value(ib);
                    if (tp.requires_grad(ia)) {
                      std::vector<double> ga(m * k, 0.0);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                          ga[i * k + p] = s;
                        }
                      tp.accumulate(ia, ga);
                    }
                    if (tp.requires_grad(ib)) {
                      std::vector<double> gb(k * n, 0.0);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = A[i * k + p];
                          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                        }
                      tp.accumulate(ib, gb);
                    }
                  });
}

// --- spatial ---------------------------------------------------------------

Var max_pool2x2(Var a) {
  check_input(a, "max_pool2x2");
  const Tensor& x = a.value();
  if (x.rank() != 3 || x.shape()[0] < 2 || x.shape()[1] < 2) {
    throw ShapeError("max_pool2x2: expects (H, W, C) with H, W >= 2, got " +
                     shape_string(x.shape()));
  }
  const std::size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor out({Ho, Wo, C}, 0.0);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = ((2 * i) * W + 2 * j) * C + c;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = ((2 * i + di) * W + (2 * j + dj)) * C + c;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (i * Wo + j) * C + c;
        out[o] = x[best];
        arg[o] = best;
      }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, arg = std::move(arg)](Tape& tp, std::span<const double> g) {
                           for (std::size_t o = 0; o < g.size(); ++o) tp.accumulate_at(ia, arg[o], g[o]);
                         });
}

Var conv2d_valid(Var input, Var kernel, Var bias) {
  Tape& t = same_tape(input, kernel, "conv2d_valid");
  same_tape(input, bias, "conv2d_valid");
  check_input(input, "conv2d_valid");
  check_input(kernel, "conv2d_valid");
  check_input(bias, "conv2d_valid");
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  const Tensor& b = bias.value();
  if (x.rank() != 3 || k.rank() != 4 || k.shape()[2] != x.shape()[2] || b.size() != k.shape()[3] ||
      k.shape()[0] > x.shape()[0] || k.shape()[1] > x.shape()[1]) {
    throw ShapeError("conv2d_valid: shape mismatch input " + shape_string(x.shape()) +
                     " kernel " + shape_string(k.shape()) + " bias " + shape_string(b.shape()));
  }
  const std::size_t H = x.shape()[0], W = x.shape()[1], Ci = x.shape()[2];
  const std::size_t kh = k.shape()[0], kw = k.shape()[1], Co = k.shape()[3];
  const std::size_t Ho = H - kh + 1, Wo = W - kw + 1;
  Tensor out({Ho, Wo, Co}, 0.0);
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      double* o = &out[(i * Wo + j) * Co];
      for (std::size_t c = 0; c < Co; ++c) o[c] = b[c];
      for (std::size_t di = 0; di < kh; ++di)
        for (std::size_t dj = 0; dj < kw; ++dj)
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double xv = x[((i + di) * W + (j + dj)) * Ci + ci];
            const double* kr = &k[((di * kw + dj) * Ci + ci) * Co];
            for (std::size_t c = 0; c < Co; ++c) o[c] += xv * kr[c];
          }
    }
  const auto ix = input.id(), ik = kernel.id(), ib = bias.id();
  return t.record(
      std::move(out), {ix, ik, ib},
      [=](Tape& tp, std::span<const double> g) {
        const Tensor& X = tp.value(ix);
        const Tensor& K = tp.value(ik);
        std::vector<double> gx(X.size(), 0.0), gk(K.size(), 0.0), gb(Co, 0.0);
        for (std::size_t i = 0; i < Ho; ++i)
          for (std::size_t j = 0; j < Wo; ++j) {
            const double* go = &g[(i * Wo + j) * Co];
            for (std::size_t c = 0; c < Co; ++c) gb[c] += go[c];
            for (std::size_t di = 0; di < kh; ++di)
              for (std::size_t dj = 0; dj < kw; ++dj)
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                  const std::size_t xi = ((i + di) * W + (j + dj)) * Ci + ci;
                  const std::size_t kb = ((di * kw + dj) * Ci + ci) * Co;
                  double acc = 0.0;
                  for (std::size_t c = 0; c < Co; ++c) {
                    acc += go[c] * K[kb + c];
                    gk[kb + c] += go[c] * X[xi];
                  }
                  gx[xi] += acc;
                }
          }
        tp.accumulate(ix, gx);
        tp.accumulate(ik, gk);
        tp.accumulate(ib, gb);
      });
}

// --- indexing --------------------------------------------------------------

Var gather(Var a, std::vector<std::size_t> indices) {
  check_input(a, "gather");
  const Tensor& x = a.value();
  if (indices.empty()) throw ShapeError("gather: empty index list");
  Tensor out({indices.size()}, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) {
      throw ShapeError("gather: index " + std::to_string(indices[i]) + " out of range for shape " +
                       shape_string(x.shape()));
    }
    out[i] = x[indices[i]];
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, idx = std::move(indices)](Tape& tp, std::span<const double> g) {
                           for (std::size_t i = 0; i < idx.size(); ++i) tp.accumulate_at(ia, idx[i], g[i]);
                         });
}

Var index(Var a, std::size_t flat_index) { return gather(a, {flat_index}); }

Var reshape(Var a, Shape shape) {
  if (!a.valid()) throw GradientError("reshape: invalid Var");
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia](Tape& tp, std::span<const double> g) { tp.accumulate(ia, g); });
}

Var cross_entropy(Var logits, std::size_t label) {
  if (label >= logits.shape().back()) {
    throw DataError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                    std::to_string(logits.shape().back()) + " classes");
  }
  return neg(index(log_softmax(logits), label));
}

}  // namespace abe
