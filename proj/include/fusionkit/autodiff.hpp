#pragma once

// Reverse-mode differentiation over a dynamically recorded tape.
//
// Every value on the tape is a Tensor; all arithmetic ops work on rank-2
// tensors whose rows are independent samples (a vector is a 1 x n matrix).
// Nodes are appended in evaluation order, so the tape order is already a
// topological order and backward() is a single reverse sweep.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusionkit/tensor.hpp"

namespace fusionkit::ad {

enum class OpKind {
  constant,
  parameter,
  matmul,
  add,
  add_row,
  sub,
  mul,
  mul_const,
  scale,
  tanh,
  relu,
  softmax,
  sum_pool,
  circular_convolve,
  sketch_project,
  concatenate,
  slice,
  row_outer,
  max_pool,
  transpose,
  reshape,
  broadcast,
  gather,
  context_match,
  signed_sqrt,
  l2_normalize,
  cross_entropy,
  sum,
  dcca,
  custom,
};

const char* op_name(OpKind kind) noexcept;

/// A trainable block. `grad` accumulates across backward() calls until
/// zero_grad().
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(Tensor::zeros(this->value.shape())) {}

  void zero_grad() { std::fill(grad.values().begin(), grad.values().end(), 0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
};

using ParameterList = std::vector<Parameter*>;

std::size_t parameter_count(const ParameterList& params);

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Computes the gradient of the node's inputs from the node's own gradient.
  using BackwardFn = std::function<void(Tape&, std::size_t node)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  /// Append a node. `backward` may be empty for nodes with no differentiable
  /// inputs. Used by every op, including ones defined outside this module.
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Parameter gradients are added into
  /// Parameter::grad; parameters the loss does not reach receive nothing.
  void backward(Var loss);

  const Tensor& value(std::size_t node) const { return nodes_.at(node).value; }
  const Tensor& grad(std::size_t node) const;
  const std::vector<std::size_t>& inputs(std::size_t node) const { return nodes_.at(node).inputs; }
  OpKind kind(std::size_t node) const { return nodes_.at(node).kind; }
  bool needs_grad(std::size_t node) const { return nodes_.at(node).needs_grad; }

  /// Add `g` into the gradient of `node` (no-op if it needs none).
  void accumulate(std::size_t node, const Tensor& g);
  /// Mutable gradient buffer, allocated on first use.
  Tensor& grad_buffer(std::size_t node);

  std::size_t size() const noexcept { return nodes_.size(); }
  Var var(std::size_t node) { return Var(this, node); }

  /// Kind of the first node whose value contained NaN or Inf, if any.
  std::optional<OpKind> first_nonfinite() const noexcept { return first_nonfinite_; }

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::optional<OpKind> first_nonfinite_;
};

// Arithmetic. All operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// a + row, with `row` (1 x c) broadcast over the rows of a.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Hadamard product with a constant tensor (dropout masks).
Var mul_const(Var a, const Tensor& c);
Var scale(Var a, double s);
Var tanh(Var a);
Var relu(Var a);
/// Row-wise softmax.
Var softmax(Var a);
/// Sums consecutive windows of `window` columns: (r, c) -> (r, c / window).
Var sum_pool(Var a, std::size_t window);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
/// Per-row flattened outer product: (r, p), (r, q) -> (r, p * q).
Var row_outer(Var a, Var b);
/// Max over consecutive groups of `group` rows: (r, c) -> (r / group, c).
Var max_pool_rows(Var a, std::size_t group);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
/// Repeat a single row n times.
Var broadcast_rows(Var row, std::size_t n);
/// Row i of the result is row indices[i] of a; rows may repeat.
Var gather_rows(Var a, std::span<const std::size_t> indices);
/// sign(x) * sqrt(|x| + eps) - sign(x) * sqrt(eps); smooth at zero.
Var signed_sqrt(Var a, double eps = 1e-12);
Var l2_normalize_rows(Var a, double eps = 1e-12);
/// Mean softmax cross-entropy of logits (r x C) against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);
/// Sum of all entries, as a 1 x 1 node.
Var sum(Var a);

}  // namespace fusionkit::ad
