#include "fusionkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace fusionkit::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMatrix>;
using ConstMap = Eigen::Map<const RowMatrix>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
Map as_matrix(Tensor& t) { return Map(t.data().data(), t.rows(), t.cols()); }

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || a.tape() != b.tape()) throw std::logic_error("operands live on different tapes");
  return *a.tape();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

/// Elementwise unary op with derivative expressed through input and output.
template <class F, class D>
Var unary(Var a, OpKind kind, F f, D df) {
  Tape& tape = *a.tape();
  Tensor out = a.value();
  for (auto& v : out.values()) v = f(v);
  const std::size_t ia = a.id();
  return tape.record(kind, {ia}, std::move(out), [ia, df](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const auto& x = t.value(ia);
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

const char* op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_row: return "add_row";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::mul_const: return "mul_const";
    case OpKind::scale: return "scale";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::softmax: return "softmax";
    case OpKind::sum_pool: return "sum_pool";
    case OpKind::circular_convolve: return "circular_convolve";
    case OpKind::sketch_project: return "sketch_project";
    case OpKind::concatenate: return "concatenate";
    case OpKind::slice: return "slice";
    case OpKind::row_outer: return "row_outer";
    case OpKind::max_pool: return "max_pool";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::broadcast: return "broadcast";
    case OpKind::gather: return "gather";
    case OpKind::context_match: return "context_match";
    case OpKind::signed_sqrt: return "signed_sqrt";
    case OpKind::l2_normalize: return "l2_normalize";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::sum: return "sum";
    case OpKind::dcca: return "dcca";
    case OpKind::custom: return "custom";
  }
  return "unknown";
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) { return record(OpKind::constant, {}, std::move(value), {}); }

Var Tape::param(Parameter& p) {
  Var v = record(OpKind::parameter, {}, p.value, {});
  nodes_.back().param = &p;
  nodes_.back().needs_grad = true;
  return v;
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  if (!first_nonfinite_ && !value.all_finite()) first_nonfinite_ = kind;
  Node node;
  node.kind = kind;
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_.at(i).needs_grad; });
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t node) const {
  const Node& n = nodes_.at(node);
  if (!n.has_grad) throw std::logic_error("gradient requested for a node the loss does not reach");
  return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t node) {
  Node& n = nodes_.at(node);
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(std::size_t node, const Tensor& g) {
  if (!nodes_.at(node).needs_grad) return;
  Tensor& buf = grad_buffer(node);
  require_same(buf, g, "gradient accumulate");
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::logic_error("loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_string(loss.value().shape()));
  }
  grad_buffer(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.needs_grad) continue;
    if (n.param) {
      Tensor& pg = n.param->grad;
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av.shape()) + " * " +
                     shape_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.needs_grad(ia)) as_matrix(t.grad_buffer(ia)).noalias() += g * as_matrix(t.value(ib)).transpose();
    if (t.needs_grad(ib)) as_matrix(t.grad_buffer(ib)).noalias() += as_matrix(t.value(ia)).transpose() * g;
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value() + b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::add, {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var add_row(Var a, Var row) {
  Tape& tape = same_tape(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require_matrix(av, "add_row");
  if (rv.size() != av.cols()) {
    throw ShapeError("add_row: row " + shape_string(rv.shape()) + " does not match " +
                     shape_string(av.shape()));
  }
  Tensor out = av;
  const std::size_t c = av.cols();
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += rv[j];
  const std::size_t ia = a.id(), ir = row.id();
  return tape.record(OpKind::add_row, {ia, ir}, std::move(out), [ia, ir, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.needs_grad(ir)) {
      Tensor& gr = t.grad_buffer(ir);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) gr[j] += g(i, j);
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value() - b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::sub, {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    if (t.needs_grad(ib)) t.accumulate(ib, -1.0 * t.grad(self));
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same(a.value(), b.value(), "mul");
  Tensor out = hadamard(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::mul, {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var mul_const(Var a, const Tensor& c) {
  Tape& tape = *a.tape();
  require_same(a.value(), c, "mul_const");
  Tensor out = hadamard(a.value(), c);
  const std::size_t ia = a.id();
  return tape.record(OpKind::mul_const, {ia}, std::move(out), [ia, c](Tape& t, std::size_t self) {
    if (t.needs_grad(ia)) t.accumulate(ia, hadamard(t.grad(self), c));
  });
}

Var scale(Var a, double s) {
  Tape& tape = *a.tape();
  Tensor out = s * a.value();
  const std::size_t ia = a.id();
  return tape.record(OpKind::scale, {ia}, std::move(out), [ia, s](Tape& t, std::size_t self) {
    if (t.needs_grad(ia)) t.accumulate(ia, s * t.grad(self));
  });
}

Var tanh(Var a) {
  return unary(
      a, OpKind::tanh, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, OpKind::relu, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softmax(Var a) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require_matrix(av, "softmax");
  Tensor out = av;
  const std::size_t c = av.cols();
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, av(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out(i, j) = std::exp(av(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
  }
  const std::size_t ia = a.id();
  return tape.record(OpKind::softmax, {ia}, std::move(out), [ia, c](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var sum_pool(Var a, std::size_t window) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require_matrix(av, "sum_pool");
  if (window == 0 || av.cols() % window != 0) {
    throw ShapeError("sum_pool: window " + std::to_string(window) + " does not divide " +
                     shape_string(av.shape()));
  }
  const std::size_t oc = av.cols() / window;
  Tensor out({av.rows(), oc});
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < oc; ++j)
      for (std::size_t w = 0; w < window; ++w) out(i, j) += av(i, j * window + w);
  const std::size_t ia = a.id();
  return tape.record(OpKind::sum_pool, {ia}, std::move(out), [ia, window, oc](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < oc; ++j)
        for (std::size_t w = 0; w < window; ++w) ga(i, j * window + w) += g(i, j);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& tape = *parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw std::logic_error("operands live on different tapes");
    require_matrix(p.value(), "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    ids.push_back(p.id());
    offsets.push_back(cols);
    cols += p.cols();
  }
  Tensor out({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(&v.values()[i * v.cols()], v.cols(), &out.values()[i * cols + offsets[k]]);
  }
  auto inputs = ids;
  return tape.record(OpKind::concatenate, std::move(inputs), std::move(out),
                     [ids, offsets](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.needs_grad(ids[k])) continue;
                         Tensor& gk = t.grad_buffer(ids[k]);
                         const std::size_t c = gk.cols();
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < c; ++j) gk(i, j) += g(i, offsets[k] + j);
                       }
                     });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& tape = *parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw std::logic_error("operands live on different tapes");
    require_matrix(p.value(), "concat_rows");
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    ids.push_back(p.id());
    offsets.push_back(rows);
    rows += p.rows();
  }
  Tensor out({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().values();
    std::copy(v.begin(), v.end(), out.values().begin() + offsets[k] * cols);
  }
  auto inputs = ids;
  return tape.record(OpKind::concatenate, std::move(inputs), std::move(out),
                     [ids, offsets, cols](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.needs_grad(ids[k])) continue;
                         Tensor& gk = t.grad_buffer(ids[k]);
                         const double* src = g.data().data() + offsets[k] * cols;
                         for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += src[i];
                       }
                     });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require_matrix(av, "slice_cols");
  if (begin >= end || end > av.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({av.rows(), w});
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = av(i, begin + j);
  const std::size_t ia = a.id();
  return tape.record(OpKind::slice, {ia}, std::move(out), [ia, begin, w](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < w; ++j) ga(i, begin + j) += g(i, j);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require_matrix(av, "slice_rows");
  if (begin >= end || end > av.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(av.shape()));
  }
  const std::size_t c = av.cols();
  Tensor out({end - begin, c},
             std::vector<double>(av.values().begin() + begin * c, av.values().begin() + end * c));
  const std::size_t ia = a.id();
  return tape.record(OpKind::slice, {ia}, std::move(out), [ia, begin, c](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad(self);
    double* dst = t.grad_buffer(ia).data().data() + begin * c;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var row_outer(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "row_outer");
  require_matrix(bv, "row_outer");
  if (av.rows() != bv.rows()) throw ShapeError("row_outer: row counts differ");
  const std::size_t p = av.cols(), q = bv.cols();
  Tensor out({av.rows(), p * q});
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) out(r, i * q + j) = av(r, i) * bv(r, j);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::row_outer, {ia, ib}, std::move(out), [ia, ib, p, q](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    const bool need_a = t.needs_grad(ia), need_b = t.needs_grad(ib);
    Tensor* ga = need_a ? &t.grad_buffer(ia) : nullptr;
    Tensor* gb = need_b ? &t.grad_buffer(ib) : nullptr;
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
          const double gij = g(r, i * q + j);
          if (ga) (*ga)(r, i) += gij * bv(r, j);
          if (gb) (*gb)(r, j) += gij * av(r, i);
        }
  });
}

Var max_pool_rows(Var a, std::size_t group) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require_matrix(av, "max_pool_rows");
  if (group == 0 || av.rows() % group != 0) {
    throw ShapeError("max_pool_rows: group " + std::to_string(group) + " does not divide " +
                     shape_string(av.shape()));
  }
  const std::size_t out_rows = av.rows() / group, c = av.cols();
  Tensor out({out_rows, c});
  std::vector<std::size_t> argmax(out_rows * c);
  for (std::size_t r = 0; r < out_rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = r * group;
      for (std::size_t k = r * group + 1; k < (r + 1) * group; ++k)
        if (av(k, j) > av(best, j)) best = k;
      argmax[r * c + j] = best;
      out(r, j) = av(best, j);
    }
  const std::size_t ia = a.id();
  return tape.record(OpKind::max_pool, {ia}, std::move(out),
                     [ia, c, argmax = std::move(argmax)](Tape& t, std::size_t self) {
                       if (!t.needs_grad(ia)) return;
                       const Tensor& g = t.grad(self);
                       Tensor& ga = t.grad_buffer(ia);
                       for (std::size_t k = 0; k < argmax.size(); ++k) ga(argmax[k], k % c) += g[k];
                     });
}

Var transpose(Var a) {
  Tape& tape = *a.tape();
  Tensor out = fusionkit::transpose(a.value());
  const std::size_t ia = a.id();
  return tape.record(OpKind::transpose, {ia}, std::move(out), [ia](Tape& t, std::size_t self) {
    if (t.needs_grad(ia)) t.accumulate(ia, fusionkit::transpose(t.grad(self)));
  });
}

Var reshape(Var a, Shape shape) {
  Tape& tape = *a.tape();
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return tape.record(OpKind::reshape, {ia}, std::move(out), [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var broadcast_rows(Var row, std::size_t n) {
  Tape& tape = *row.tape();
  const Tensor& rv = row.value();
  if (rv.rank() != 2 || rv.rows() != 1) {
    throw ShapeError("broadcast_rows: expected a single row, got " + shape_string(rv.shape()));
  }
  const std::size_t c = rv.cols();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(rv.values().begin(), c, out.values().begin() + i * c);
  const std::size_t ir = row.id();
  return tape.record(OpKind::broadcast, {ir}, std::move(out), [ir, c](Tape& t, std::size_t self) {
    if (!t.needs_grad(ir)) return;
    const Tensor& g = t.grad(self);
    Tensor& gr = t.grad_buffer(ir);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j) gr[j] += g(i, j);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require_matrix(av, "gather_rows");
  const std::size_t c = av.cols();
  Tensor out({indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(indices[i]) + " out of range for " +
                       shape_string(av.shape()));
    }
    std::copy_n(av.values().begin() + indices[i] * c, c, out.values().begin() + i * c);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return tape.record(OpKind::gather, {ia}, std::move(out), [ia, c, idx = std::move(idx)](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) ga[idx[i] * c + j] += g[i * c + j];
  });
}

Var signed_sqrt(Var a, double eps) {
  const double base = std::sqrt(eps);
  return unary(
      a, OpKind::signed_sqrt,
      [eps, base](double x) { return x >= 0.0 ? std::sqrt(x + eps) - base : base - std::sqrt(-x + eps); },
      [eps](double x, double) { return 0.5 / std::sqrt(std::abs(x) + eps); });
}

Var l2_normalize_rows(Var a, double eps) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require_matrix(av, "l2_normalize_rows");
  const std::size_t c = av.cols();
  Tensor out = av;
  std::vector<double> norms(av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = eps;
    for (std::size_t j = 0; j < c; ++j) s += av(i, j) * av(i, j);
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= norms[i];
  }
  const std::size_t ia = a.id();
  return tape.record(OpKind::l2_normalize, {ia}, std::move(out),
                     [ia, c, norms = std::move(norms)](Tape& t, std::size_t self) {
                       if (!t.needs_grad(ia)) return;
                       const Tensor& y = t.value(self);
                       const Tensor& g = t.grad(self);
                       Tensor& ga = t.grad_buffer(ia);
                       for (std::size_t i = 0; i < y.rows(); ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
                         for (std::size_t j = 0; j < c; ++j)
                           ga(i, j) += (g(i, j) - y(i, j) * dot) / norms[i];
                       }
                     });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = *logits.tape();
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy");
  if (labels.size() != lv.rows()) throw ShapeError("cross_entropy: one label per row required");
  const std::size_t r = lv.rows(), c = lv.cols();
  Tensor probs({r, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw std::out_of_range("cross_entropy: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs(i, j) = std::exp(lv(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) probs(i, j) /= z;
    loss += -(lv(i, labels[i]) - mx - std::log(z));
  }
  loss /= static_cast<double>(r);
  std::vector<int> lab(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return tape.record(OpKind::cross_entropy, {il}, Tensor({1, 1}, {loss}),
                     [il, r, c, probs = std::move(probs), lab = std::move(lab)](Tape& t, std::size_t self) {
                       if (!t.needs_grad(il)) return;
                       const double g = t.grad(self)[0] / static_cast<double>(r);
                       Tensor& gl = t.grad_buffer(il);
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           gl(i, j) += g * (probs(i, j) - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
                     });
}

Var sum(Var a) {
  Tape& tape = *a.tape();
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return tape.record(OpKind::sum, {ia}, Tensor({1, 1}, {s}), [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const double g = t.grad(self)[0];
    for (auto& v : t.grad_buffer(ia).values()) v += g;
  });
}

}  // namespace fusionkit::ad
