#pragma once

// Straight-line reference computations used as test oracles. Nothing here
// calls into the library's numerical routines; every value is produced by
// looping the defining formula directly.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "fusionkit/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec random_vector(std::size_t n, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vec v(n);
  for (auto& x : v) x = nd(gen);
  return v;
}

inline fusionkit::Tensor random_tensor(fusionkit::Shape shape, std::mt19937_64& gen, double scale = 1.0) {
  fusionkit::Tensor t(shape);
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& x : t.values()) x = nd(gen);
  return t;
}

/// z[k] = sum_i sum_j w[i][j][k] x[i] y[j] over a flat row-major (m, n, o) buffer.
inline Vec triple_sum(const Vec& x, const Vec& y, const std::vector<double>& w, std::size_t o) {
  const std::size_t m = x.size(), n = y.size();
  Vec z(o, 0.0);
  for (std::size_t k = 0; k < o; ++k)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) z[k] += w[(i * n + j) * o + k] * x[i] * y[j];
  return z;
}

/// out[k] = sum_j a[j] b[(k - j) mod d], O(d^2).
inline Vec direct_convolution(const Vec& a, const Vec& b) {
  const std::size_t d = a.size();
  Vec out(d, 0.0);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t j = 0; j < d; ++j) out[k] += a[j] * b[(k + d - j) % d];
  return out;
}

inline Vec sketch_loop(const std::vector<std::size_t>& h, const std::vector<int>& s, std::size_t d, const Vec& x) {
  Vec out(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < x.size(); ++i)
      if (h[i] == j) out[j] += s[i] * x[i];
  return out;
}

/// Count sketch of vec(x y^T) under h(i, j) = (hx[i] + hy[j]) mod d and
/// sign sx[i] * sy[j], by materializing the flattened outer product.
inline Vec induced_outer_sketch(const std::vector<std::size_t>& hx, const std::vector<int>& sx,
                                const std::vector<std::size_t>& hy, const std::vector<int>& sy, std::size_t d,
                                const Vec& x, const Vec& y) {
  Vec flat;
  std::vector<std::size_t> h;
  std::vector<int> s;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) {
      flat.push_back(x[i] * y[j]);
      h.push_back((hx[i] + hy[j]) % d);
      s.push_back(sx[i] * sy[j]);
    }
  return sketch_loop(h, s, d, flat);
}

/// Central finite-difference gradient of f at x.
inline Vec finite_difference(const std::function<double(const Vec&)>& f, Vec x, double step = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const Vec& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

/// max |a - b| / max(max |b|, floor)
inline double rel_error(const Vec& a, const Vec& b, double floor = 1e-12) {
  return max_abs_diff(a, b) / std::max(max_abs(b), floor);
}

/// Worst relative violation of separate linearity of f in x and in y at a
/// random point: |f(ax + bx', y) - a f(x, y) - b f(x', y)| / scale, and the
/// same in y.
inline double linearity_error(const std::function<Vec(const Vec&, const Vec&)>& f, std::size_t m, std::size_t n,
                              std::mt19937_64& gen) {
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  const double a = coef(gen), b = coef(gen);
  const Vec x = random_vector(m, gen), x2 = random_vector(m, gen);
  const Vec y = random_vector(n, gen), y2 = random_vector(n, gen);
  Vec xc(m), yc(n);
  for (std::size_t i = 0; i < m; ++i) xc[i] = a * x[i] + b * x2[i];
  for (std::size_t i = 0; i < n; ++i) yc[i] = a * y[i] + b * y2[i];
  const Vec fxy = f(x, y), fx2 = f(x2, y), fy2 = f(x, y2);
  const Vec lhs_x = f(xc, y), lhs_y = f(x, yc);
  double err = 0.0;
  double scale = 1e-300;
  for (std::size_t k = 0; k < fxy.size(); ++k) {
    scale = std::max({scale, std::abs(a * fxy[k]), std::abs(b * fx2[k]), std::abs(b * fy2[k])});
    err = std::max(err, std::abs(lhs_x[k] - (a * fxy[k] + b * fx2[k])));
    err = std::max(err, std::abs(lhs_y[k] - (a * fxy[k] + b * fy2[k])));
  }
  return err / scale;
}

/// Numerical rank with a Jacobi SVD (the library uses a divide-and-conquer SVD).
inline std::size_t jacobi_rank(const fusionkit::Tensor& m, double rel_tol = 1e-8) {
  Eigen::MatrixXd a(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) a(i, j) = m(i, j);
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

/// Canonical correlations from the generalized symmetric eigenproblem
///   [0 S01; S10 0] w = rho [S00 0; 0 S11] w,
/// returned in decreasing order (top `c`).
inline Vec generalized_eigen_cca(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& x1, std::size_t c, double r) {
  const Eigen::Index n = x0.rows(), d0 = x0.cols(), d1 = x1.cols();
  const Eigen::MatrixXd c0 = x0.rowwise() - x0.colwise().mean();
  const Eigen::MatrixXd c1 = x1.rowwise() - x1.colwise().mean();
  const double denom = static_cast<double>(n - 1);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d0 + d1, d0 + d1);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(d0 + d1, d0 + d1);
  const Eigen::MatrixXd s01 = c0.transpose() * c1 / denom;
  a.topRightCorner(d0, d1) = s01;
  a.bottomLeftCorner(d1, d0) = s01.transpose();
  b.topLeftCorner(d0, d0) = c0.transpose() * c0 / denom + r * Eigen::MatrixXd::Identity(d0, d0);
  b.bottomRightCorner(d1, d1) = c1.transpose() * c1 / denom + r * Eigen::MatrixXd::Identity(d1, d1);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(a, b);
  const Eigen::VectorXd ev = es.eigenvalues();  // ascending
  Vec out;
  for (std::size_t i = 0; i < c; ++i) out.push_back(ev(ev.size() - 1 - static_cast<Eigen::Index>(i)));
  return out;
}

}  // namespace oracle
