#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "regad/types.hpp"

/// Minimal reverse-mode differentiation over dense Eigen matrices.
///
/// A Tape records the forward pass of one loss evaluation. Each free function
/// below appends one primitive and returns a Var handle; backward() replays the
/// record in reverse exactly once. Everything is double precision and the
/// reduction order of every kernel is fixed, so identical inputs give
/// bitwise-identical values and gradients.
namespace regad::nk {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// True once backward() has allocated a gradient for v.
  bool has_grad(Var v) const { return nodes_.at(v.id).grad.size() != 0; }
  const Matrix& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a 1x1 loss. Throws std::logic_error on a non-scalar
  /// loss or a second call.
  void backward(Var loss);

  /// Appends a node; `fn` is dropped when no input requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  /// Adds `g` into the gradient of input `v` (no-op for constants).
  void accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Forward primitives. Shape mismatches throw std::invalid_argument.

Var matmul(Var a, Var b);
/// Sparse constant times dense variable. The sparse matrix is copied into the tape.
Var spmm(const SparseMatrix& s, Var h);
/// Adds a 1 x cols bias row to every row of `a`.
Var add_bias(Var a, Var bias);
Var add(Var a, Var b);
Var cwise_product(Var a, Var b);
/// scale * a + shift, elementwise, with constant scale and shift.
Var affine(Var a, double scale, double shift);
Var relu(Var a);
Var sigmoid(Var a);
/// log(sigmoid(a)), evaluated without overflow.
Var log_sigmoid(Var a);
Var log(Var a);
Var abs(Var a);
Var gather_rows(Var a, std::span<const NodeId> rows);
/// Column of row-wise dot products a[i]·a[j], one per (i, j) pair.
Var pair_dot(Var a, std::span<const std::pair<NodeId, NodeId>> pairs);
/// Sum of weights ⊙ a, as a 1x1 value.
Var weighted_sum(Var a, const Matrix& weights);
Var sum(Var a);
Var mean(Var a);

/// Named parameter arrays in insertion order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
  };

  void add(std::string name, Matrix value);
  Matrix& at(std::string_view name);
  const Matrix& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t scalar_count() const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Bitwise equality of names, shapes and values.
  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Entry> entries_;
};

/// Records every entry as a parameter, in store order.
std::vector<Var> bind(Tape& tape, const ParamStore& params);
/// Collects gradients for bound parameters into a store shaped like `params`;
/// parameters the loss never touched get zeros.
ParamStore collect_gradients(const Tape& tape, std::span<const Var> vars, const ParamStore& params);

/// Evaluates the loss at `params`; when `grads` is non-null also fills it with
/// the analytic gradient.
using LossFn = std::function<double(const ParamStore& params, ParamStore* grads)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  bool passed = false;
};

/// Compares analytic gradients with central differences. Relative error per
/// scalar is |a - n| / max(|a|, |n|, 1e-8). Throws NonFiniteError if either
/// side is not finite.
GradCheckReport grad_check(const LossFn& loss, const ParamStore& params, double tolerance,
                           double step = 1e-5);

}  // namespace regad::nk
