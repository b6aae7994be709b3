#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sheafalign/tensor.hpp"

namespace sheafalign {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape. Nodes are appended in evaluation
/// order, so the node list is already topologically sorted. One tape per
/// step and per worker; a tape is not thread safe.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_adjoint)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input (parameter or embedding we want gradients for).
  Var leaf(Tensor value);
  /// A non-differentiable input. Its adjoint stays zero.
  Var constant(Tensor value);

  /// Internal: append the result of a primitive. `backward` receives the
  /// adjoint of the result and must call accumulate() for its inputs.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Propagates d(output)/d(node) to every node. `output` must be 1x1.
  void backward(Var output);

  /// Adjoint of `v` from the last backward(). Nodes not reachable from the
  /// output report a zero tensor of matching shape.
  const Tensor& grad(Var v) const;

  void accumulate(std::size_t id, const Tensor& adjoint);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
};

/// Free-function form of Tape::backward.
void backward(Tape& tape, Var output);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(double s, Var a);
Var hadamard(Var a, Var b);
/// x + 1 * bias, with bias a 1 x cols row.
Var add_row_broadcast(Var x, Var bias);
Var relu(Var x);
Var tanh(Var x);
/// Sum of all entries, as 1x1.
Var sum(Var x);
/// Sum of squared entries, as 1x1.
Var sum_squares(Var x);
Var gather_rows(Var x, std::span<const std::size_t> indices);
Var normalize_rows(Var x);
Var rowwise_cosine_similarity(Var a, Var b);
Var logsumexp_rows(Var x);
/// Main diagonal of a square matrix as an n x 1 column.
Var diagonal(Var x);

/// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h for every entry.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step = 1e-5);

/// max |a - b| / max(max |b|, 1e-8); the gradient-check error measure.
double relative_linf_error(const Tensor& a, const Tensor& b);

}  // namespace sheafalign
