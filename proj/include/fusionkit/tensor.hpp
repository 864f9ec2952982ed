#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace fusionkit {

/// Raised for any shape or dimension incompatibility. The message always
/// names the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense N-dimensional array of doubles in row-major order.
///
/// Every dimension is at least 1 and `data().size()` always equals the
/// product of the shape. Vectors are rank-1 tensors, matrices rank-2.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  // Matrix-style accessors; valid for rank-2 tensors.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double& at(std::span<const std::size_t> index);
  double at(std::span<const std::size_t> index) const;
  std::size_t offset(std::span<const std::size_t> index) const;

  /// Same data, new shape. The element count must not change.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Shape& shape);

// Elementwise algebra. Shapes must match exactly.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);

/// Plain matrix product of two rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x^T W for a rank-2 W with W.rows() == x.size().
std::vector<double> vecmat(std::span<const double> x, const Tensor& w);
/// W x for a rank-2 W with W.cols() == x.size().
std::vector<double> matvec(const Tensor& w, std::span<const double> x);

/// Mode-n product W x_n V with a 1-based mode index: the mode-n fibres of
/// `w` are multiplied by `v`, which must have shape (J, w.dim(n-1)).
Tensor mode_n_product(const Tensor& w, const Tensor& v, std::size_t mode);

/// Mode-n unfolding. Row i holds the i-th mode-n slice; columns enumerate the
/// remaining modes in increasing mode order with the last remaining mode
/// varying fastest (the row-major order of the slice).
struct ModeNMatricization {
  std::size_t mode = 1;
  Shape original_shape;
  Tensor matrix;
};

ModeNMatricization matricize(const Tensor& w, std::size_t mode);
Tensor dematricize(const ModeNMatricization& m);

/// out(i, j) = x[i] * y[j]
Tensor outer_product(std::span<const double> x, std::span<const double> y);

/// z[k] = sum_ij w(i, j, k) x[i] y[j], i.e. W x_1 x x_2 y for w of shape (m, n, o).
std::vector<double> full_bilinear(std::span<const double> x, std::span<const double> y,
                                  const Tensor& w);

/// Number of singular values above `rel_tol` times the largest one.
std::size_t matrix_rank(const Tensor& m, double rel_tol = 1e-8);

void to_json(nlohmann::json& j, const Tensor& t);
void from_json(const nlohmann::json& j, Tensor& t);

}  // namespace fusionkit
