#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Tape owns every intermediate produced while it is alive. Ops append a
// node holding the forward value and a closure that pushes the node's
// upstream gradient into its inputs. Nodes are appended in execution order,
// so walking the tape backwards is a valid reverse topological order.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ctgraph/tensor.hpp"

namespace ctgraph {

// A learnable tensor that outlives any single tape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value; accumulated by Tape::backward

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

  void zero_grad();
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is complete.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is readable through grad() after backward().
  Var input(Tensor value);
  // Leaf bound to a Parameter; backward() adds into parameter.grad.
  Var parameter(Parameter& p);

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  // Runs reverse mode from a scalar. Gradients from a previous backward on
  // this tape are discarded first.
  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient of the last backward() wrt node `id`; zeros if it was unreached.
  Tensor grad(const Var& v) const;

  // For use inside BackwardFn.
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }
  std::span<double> grad_buffer(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// Matrix ops treat rank-1 tensors as a single row.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
// m: n x d, row: 1 x d (or d). Adds row to every row of m.
Var add_row(const Var& m, const Var& row);
// s must hold exactly one value; added to every element of a.
Var add_scalar(const Var& a, const Var& s);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var leaky_relu(const Var& x, double slope);
Var gelu(const Var& x);
Var relu(const Var& x);
// Softmax over every element of x, treated as one group.
Var softmax(const Var& x);
// Row-wise normalization over the last axis with affine gamma/beta (length d).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
// Mean binary cross-entropy with logits against fixed targets of equal shape.
Var bce_with_logits(const Var& logits, const Tensor& targets);

}  // namespace ad

// Plain (non-tape) kernels shared by the tape ops and by inference paths.
// c = a * b for row-major a (m x k) and b (k x n).
void matmul_kernel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
Tensor matmul(const Tensor& a, const Tensor& b);
double leaky_relu(double x, double slope);
Tensor softmax(const Tensor& scores);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

}  // namespace ctgraph
