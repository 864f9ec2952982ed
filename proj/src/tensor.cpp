#include "fusionkit/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace fusionkit {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

void require_mode(const Tensor& w, std::size_t mode, const char* what) {
  if (mode < 1 || mode > w.rank()) {
    throw ShapeError(std::string(what) + ": mode " + std::to_string(mode) +
                     " out of range [1, " + std::to_string(w.rank()) + "] for shape " +
                     shape_string(w.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_string(shape_));
  }
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_string(shape_));
  }
  if (data_.size() != shape_product(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match shape " +
                     shape_string(shape_));
  }
  std::size_t off = 0;
  for (std::size_t a = 0; a < shape_.size(); ++a) {
    if (index[a] >= shape_[a]) throw std::out_of_range("tensor index out of range");
    off = off * shape_[a] + index[a];
  }
  return off;
}

double& Tensor::at(std::span<const std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::span<const std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_product(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                     shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  Eigen::Map<RowMatrix>(out.data().data(), a.rows(), b.cols()).noalias() =
      ConstMap(a.data().data(), a.rows(), a.cols()) * ConstMap(b.data().data(), b.rows(), b.cols());
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

std::vector<double> vecmat(std::span<const double> x, const Tensor& w) {
  require_rank(w, 2, "vecmat");
  if (w.rows() != x.size()) {
    throw ShapeError("vecmat: vector of size " + std::to_string(x.size()) + " against " +
                     shape_string(w.shape()));
  }
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) continue;
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += x[i] * w(i, j);
  }
  return out;
}

std::vector<double> matvec(const Tensor& w, std::span<const double> x) {
  require_rank(w, 2, "matvec");
  if (w.cols() != x.size()) {
    throw ShapeError("matvec: " + shape_string(w.shape()) + " against vector of size " +
                     std::to_string(x.size()));
  }
  std::vector<double> out(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) out[i] += w(i, j) * x[j];
  return out;
}

Tensor mode_n_product(const Tensor& w, const Tensor& v, std::size_t mode) {
  require_mode(w, mode, "mode_n_product");
  require_rank(v, 2, "mode_n_product");
  const std::size_t axis = mode - 1;
  const std::size_t in_dim = w.dim(axis);
  if (v.cols() != in_dim) {
    throw ShapeError("mode_n_product: factor " + shape_string(v.shape()) +
                     " incompatible with mode " + std::to_string(mode) + " of " +
                     shape_string(w.shape()));
  }
  const std::size_t out_dim = v.rows();
  // View w as (outer, in_dim, inner) in row-major order.
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= w.dim(a);
  for (std::size_t a = axis + 1; a < w.rank(); ++a) inner *= w.dim(a);

  Shape out_shape = w.shape();
  out_shape[axis] = out_dim;
  Tensor out(out_shape);
  const auto src = w.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < out_dim; ++j) {
      double* row = dst.data() + (o * out_dim + j) * inner;
      for (std::size_t i = 0; i < in_dim; ++i) {
        const double vji = v(j, i);
        if (vji == 0.0) continue;
        const double* fibre = src.data() + (o * in_dim + i) * inner;
        for (std::size_t r = 0; r < inner; ++r) row[r] += vji * fibre[r];
      }
    }
  }
  return out;
}

ModeNMatricization matricize(const Tensor& w, std::size_t mode) {
  require_mode(w, mode, "matricize");
  const std::size_t axis = mode - 1;
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= w.dim(a);
  for (std::size_t a = axis + 1; a < w.rank(); ++a) inner *= w.dim(a);
  const std::size_t rows = w.dim(axis);

  Tensor m({rows, outer * inner});
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t r = 0; r < inner; ++r) m(i, o * inner + r) = w[(o * rows + i) * inner + r];
  return {mode, w.shape(), std::move(m)};
}

Tensor dematricize(const ModeNMatricization& m) {
  Tensor w(m.original_shape);
  if (m.mode < 1 || m.mode > w.rank()) throw ShapeError("dematricize: mode out of range");
  const std::size_t axis = m.mode - 1;
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= w.dim(a);
  for (std::size_t a = axis + 1; a < w.rank(); ++a) inner *= w.dim(a);
  const std::size_t rows = w.dim(axis);
  if (m.matrix.rank() != 2 || m.matrix.rows() != rows || m.matrix.cols() != outer * inner) {
    throw ShapeError("dematricize: matrix " + shape_string(m.matrix.shape()) +
                     " does not unfold " + shape_string(m.original_shape));
  }
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t r = 0; r < inner; ++r) w[(o * rows + i) * inner + r] = m.matrix(i, o * inner + r);
  return w;
}

Tensor outer_product(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw ShapeError("outer_product: empty input");
  Tensor out({x.size(), y.size()});
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) out(i, j) = x[i] * y[j];
  return out;
}

std::vector<double> full_bilinear(std::span<const double> x, std::span<const double> y,
                                  const Tensor& w) {
  require_rank(w, 3, "full_bilinear");
  if (w.dim(0) != x.size() || w.dim(1) != y.size()) {
    throw ShapeError("full_bilinear: tensor " + shape_string(w.shape()) +
                     " incompatible with inputs of size " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  const std::size_t o = w.dim(2);
  std::vector<double> z(o, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double xy = x[i] * y[j];
      if (xy == 0.0) continue;
      for (std::size_t k = 0; k < o; ++k) z[k] += w(i, j, k) * xy;
    }
  }
  return z;
}

std::size_t matrix_rank(const Tensor& m, double rel_tol) {
  require_rank(m, 2, "matrix_rank");
  const RowMatrix a = ConstMap(m.data().data(), m.rows(), m.cols());
  const Eigen::VectorXd s = Eigen::BDCSVD<RowMatrix>(a).singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > rel_tol * s(0)) ++r;
  }
  return r;
}

void to_json(nlohmann::json& j, const Tensor& t) {
  j = nlohmann::json{{"shape", t.shape()}, {"data", t.values()}};
}

void from_json(const nlohmann::json& j, Tensor& t) {
  t = Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace fusionkit
