#include "sheafalign/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "sheafalign/error.hpp"

namespace sheafalign {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (Var in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id_].requires_grad;
}

void Tape::backward(Var output) {
  check_owner(output);
  const Tensor& out = nodes_[output.id_].value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw ContractError("backward needs a scalar output, got " + out.shape_string());
  }
  adjoints_.clear();
  adjoints_.reserve(nodes_.size());
  for (const auto& node : nodes_) adjoints_.emplace_back(node.value.rows(), node.value.cols());
  adjoints_[output.id_](0, 0) = 1.0;
  for (std::size_t k = output.id_ + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.requires_grad || !node.backward) continue;
    // Copy: the callback may accumulate into other adjoints, never into k itself.
    const Tensor adj = adjoints_[k];
    node.backward(*this, adj);
  }
}

const Tensor& Tape::grad(Var v) const {
  check_owner(v);
  if (adjoints_.size() != nodes_.size()) {
    throw ContractError("grad() requested before backward()");
  }
  return adjoints_[v.id_];
}

void Tape::accumulate(std::size_t id, const Tensor& adjoint) {
  if (!nodes_[id].requires_grad) return;
  adjoints_[id] += adjoint;
}

void backward(Tape& tape, Var output) { tape.backward(output); }

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractError("operands recorded on different tapes");
  }
  return *a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var ins[] = {a, b};
  return t.record(matmul(a.value(), b.value()), ins, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a.id(), matmul(g, transpose(b.value())));
    if (tp.requires_grad(b)) tp.accumulate(b.id(), matmul(transpose(a.value()), g));
  });
}

Var transpose(Var a) {
  Var ins[] = {a};
  return a.tape()->record(transpose(a.value()), ins, [a](Tape& tp, const Tensor& g) {
    tp.accumulate(a.id(), transpose(g));
  });
}

Var operator+(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var ins[] = {a, b};
  return t.record(a.value() + b.value(), ins, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a.id(), g);
    tp.accumulate(b.id(), g);
  });
}

Var operator-(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var ins[] = {a, b};
  return t.record(a.value() - b.value(), ins, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a.id(), g);
    tp.accumulate(b.id(), -1.0 * g);
  });
}

Var operator*(double s, Var a) {
  Var ins[] = {a};
  return a.tape()->record(s * a.value(), ins,
                          [a, s](Tape& tp, const Tensor& g) { tp.accumulate(a.id(), s * g); });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var ins[] = {a, b};
  return t.record(hadamard(a.value(), b.value()), ins, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a.id(), hadamard(g, b.value()));
    if (tp.requires_grad(b)) tp.accumulate(b.id(), hadamard(g, a.value()));
  });
}

Var add_row_broadcast(Var x, Var bias) {
  Tape& t = same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_row_broadcast: bias " + bv.shape_string() + " for input " +
                         xv.shape_string());
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  Var ins[] = {x, bias};
  return t.record(std::move(out), ins, [x, bias](Tape& tp, const Tensor& g) {
    tp.accumulate(x.id(), g);
    if (tp.requires_grad(bias)) {
      Tensor db(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) db(0, c) += g(r, c);
      tp.accumulate(bias.id(), db);
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  Var ins[] = {x};
  return x.tape()->record(std::move(out), ins, [x](Tape& tp, const Tensor& g) {
    Tensor dx = g;
    const Tensor& xv = x.value();
    for (std::size_t k = 0; k < dx.size(); ++k)
      if (!(xv[k] > 0.0)) dx[k] = 0.0;
    tp.accumulate(x.id(), dx);
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  Tensor saved = out;
  Var ins[] = {x};
  return x.tape()->record(std::move(out), ins, [x, y = std::move(saved)](Tape& tp, const Tensor& g) {
    Tensor dx = g;
    for (std::size_t k = 0; k < dx.size(); ++k) dx[k] *= 1.0 - y[k] * y[k];
    tp.accumulate(x.id(), dx);
  });
}

Var sum(Var x) {
  Var ins[] = {x};
  return x.tape()->record(Tensor(1, 1, sum(x.value())), ins, [x](Tape& tp, const Tensor& g) {
    tp.accumulate(x.id(), Tensor(x.rows(), x.cols(), g(0, 0)));
  });
}

Var sum_squares(Var x) {
  Var ins[] = {x};
  return x.tape()->record(Tensor(1, 1, squared_norm(x.value())), ins,
                          [x](Tape& tp, const Tensor& g) {
                            tp.accumulate(x.id(), (2.0 * g(0, 0)) * x.value());
                          });
}

Var gather_rows(Var x, std::span<const std::size_t> indices) {
  Var ins[] = {x};
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out = gather_rows(x.value(), idx);
  return x.tape()->record(std::move(out), ins, [x, idx = std::move(idx)](Tape& tp, const Tensor& g) {
    Tensor dx(x.rows(), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < dx.cols(); ++c) dx(idx[r], c) += g(r, c);
    tp.accumulate(x.id(), dx);
  });
}

Var normalize_rows(Var x) {
  Var ins[] = {x};
  return x.tape()->record(normalize_rows(x.value()), ins, [x](Tape& tp, const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor dx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      double sq = 0.0;
      for (double v : xv.row_view(r)) sq += v * v;
      const double norm = std::sqrt(sq);
      double gy = 0.0;
      for (std::size_t c = 0; c < xv.cols(); ++c) gy += g(r, c) * xv(r, c) / norm;
      for (std::size_t c = 0; c < xv.cols(); ++c)
        dx(r, c) = (g(r, c) - (xv(r, c) / norm) * gy) / norm;
    }
    tp.accumulate(x.id(), dx);
  });
}

Var rowwise_cosine_similarity(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "rowwise_cosine_similarity");
  return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

Var logsumexp_rows(Var x) {
  Var ins[] = {x};
  Tensor out = logsumexp_rows(x.value());
  Tensor lse = out;
  return x.tape()->record(std::move(out), ins, [x, lse = std::move(lse)](Tape& tp, const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor dx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) dx(r, c) = g(r, 0) * std::exp(xv(r, c) - lse(r, 0));
    tp.accumulate(x.id(), dx);
  });
}

Var diagonal(Var x) {
  const Tensor& xv = x.value();
  if (xv.rows() != xv.cols()) throw DimensionError("diagonal: non-square " + xv.shape_string());
  Tensor out(xv.rows(), 1);
  for (std::size_t k = 0; k < xv.rows(); ++k) out(k, 0) = xv(k, k);
  Var ins[] = {x};
  return x.tape()->record(std::move(out), ins, [x](Tape& tp, const Tensor& g) {
    Tensor dx(x.rows(), x.cols());
    for (std::size_t k = 0; k < dx.rows(); ++k) dx(k, k) = g(k, 0);
    tp.accumulate(x.id(), dx);
  });
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step) {
  Tensor grad(x.rows(), x.cols());
  Tensor probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + step;
    const double up = f(probe);
    probe[k] = orig - step;
    const double down = f(probe);
    probe[k] = orig;
    grad[k] = (up - down) / (2.0 * step);
  }
  return grad;
}

double relative_linf_error(const Tensor& a, const Tensor& b) {
  return max_abs_diff(a, b) / std::max(max_abs(b), 1e-8);
}

}  // namespace sheafalign
