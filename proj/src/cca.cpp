#include "fusionkit/cca.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace fusionkit {

namespace {

constexpr double kEigenFloor = 1e-10;

using Matrix = Eigen::MatrixXd;

Matrix to_eigen(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a sample matrix, got " + shape_string(t.shape()));
  Matrix m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
  return m;
}

Tensor from_eigen(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t(i, j) = m(i, j);
  return t;
}

Matrix centered(const Matrix& x) { return x.rowwise() - x.colwise().mean(); }

/// Symmetric inverse square root with eigenvalues floored at kEigenFloor.
Matrix inverse_sqrt(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  const Eigen::VectorXd d = es.eigenvalues().cwiseMax(kEigenFloor).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

void require_singular_free(const Matrix& cov, int view) {
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Matrix>(cov, Eigen::EigenvaluesOnly).eigenvalues();
  const double top = ev.maxCoeff();
  if (top <= 0.0 || ev.minCoeff() <= kEigenFloor * std::max(1.0, top)) {
    throw std::domain_error("cca_fit: covariance of view " + std::to_string(view) +
                            " is singular; use a positive regularizer");
  }
}

struct CrossDecomposition {
  Matrix k0, k1;  // whitening transforms
  Matrix u, v;    // singular vectors of the whitened cross-covariance
  Eigen::VectorXd sigma;
};

CrossDecomposition decompose(const Matrix& c0, const Matrix& c1, double r, bool check_singular) {
  const double denom = static_cast<double>(c0.rows() - 1);
  Matrix s00 = c0.transpose() * c0 / denom;
  Matrix s11 = c1.transpose() * c1 / denom;
  s00.diagonal().array() += r;
  s11.diagonal().array() += r;
  if (check_singular) {
    require_singular_free(s00, 0);
    require_singular_free(s11, 1);
  }
  CrossDecomposition out;
  out.k0 = inverse_sqrt(s00);
  out.k1 = inverse_sqrt(s11);
  const Matrix t = out.k0 * (c0.transpose() * c1 / denom) * out.k1;
  Eigen::BDCSVD<Matrix> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.u = svd.matrixU();
  out.v = svd.matrixV();
  out.sigma = svd.singularValues();
  return out;
}

void check_views(const Tensor& view0, const Tensor& view1, std::size_t components, const char* what) {
  if (view0.rank() != 2 || view1.rank() != 2 || view0.rows() != view1.rows()) {
    throw ShapeError(std::string(what) + ": views " + shape_string(view0.shape()) + " and " +
                     shape_string(view1.shape()) + " must be sample matrices with equal sample counts");
  }
  if (components == 0 || components > std::min(view0.cols(), view1.cols())) {
    throw std::invalid_argument(std::string(what) + ": components must be in [1, " +
                                std::to_string(std::min(view0.cols(), view1.cols())) + "]");
  }
}

}  // namespace

void to_json(nlohmann::json& j, const CcaSolution& s) {
  j = nlohmann::json{{"w0", s.w0}, {"w1", s.w1}, {"correlations", s.correlations}, {"regularizer", s.regularizer}};
}

void from_json(const nlohmann::json& j, CcaSolution& s) {
  s.w0 = j.at("w0").get<Tensor>();
  s.w1 = j.at("w1").get<Tensor>();
  s.correlations = j.at("correlations").get<std::vector<double>>();
  s.regularizer = j.at("regularizer").get<double>();
}

CcaSolution cca_fit(const Tensor& view0, const Tensor& view1, std::size_t components, double regularizer) {
  check_views(view0, view1, components, "cca_fit");
  if (view0.rows() < 2) throw std::invalid_argument("cca_fit: need at least 2 samples");
  if (regularizer < 0.0) throw std::invalid_argument("cca_fit: regularizer must be >= 0");
  const auto dec = decompose(centered(to_eigen(view0)), centered(to_eigen(view1)), regularizer, regularizer == 0.0);
  const auto c = static_cast<Eigen::Index>(components);
  Matrix w0 = dec.k0 * dec.u.leftCols(c);
  Matrix w1 = dec.k1 * dec.v.leftCols(c);
  // Canonical directions are defined up to a joint sign; pick the one whose
  // largest-magnitude entry of w0 is positive.
  for (Eigen::Index j = 0; j < c; ++j) {
    Eigen::Index arg = 0;
    w0.col(j).cwiseAbs().maxCoeff(&arg);
    if (w0(arg, j) < 0.0) {
      w0.col(j) *= -1.0;
      w1.col(j) *= -1.0;
    }
  }
  CcaSolution s;
  s.w0 = from_eigen(w0);
  s.w1 = from_eigen(w1);
  s.regularizer = regularizer;
  for (Eigen::Index j = 0; j < c; ++j) s.correlations.push_back(std::clamp(dec.sigma(j), 0.0, 1.0));
  return s;
}

CcaCorrelation cca_correlation(const CcaSolution& solution, const Tensor& view0, const Tensor& view1) {
  if (view0.rank() != 2 || view1.rank() != 2 || view0.rows() != view1.rows() ||
      view0.cols() != solution.w0.rows() || view1.cols() != solution.w1.rows()) {
    throw ShapeError("cca_correlation: batches " + shape_string(view0.shape()) + " and " +
                     shape_string(view1.shape()) + " do not match projections " + shape_string(solution.w0.shape()) +
                     " and " + shape_string(solution.w1.shape()));
  }
  const Matrix p0 = centered(to_eigen(view0) * to_eigen(solution.w0));
  const Matrix p1 = centered(to_eigen(view1) * to_eigen(solution.w1));
  CcaCorrelation out;
  for (Eigen::Index j = 0; j < p0.cols(); ++j) {
    const double v0 = p0.col(j).squaredNorm(), v1 = p1.col(j).squaredNorm();
    if (p0.rows() < 2 || v0 <= 0.0 || v1 <= 0.0) {
      out.correlations.push_back(0.0);
      out.degenerate = true;
      continue;
    }
    out.correlations.push_back(p0.col(j).dot(p1.col(j)) / std::sqrt(v0 * v1));
  }
  return out;
}

std::pair<Tensor, Tensor> correlated_views(std::size_t samples, std::size_t dim, std::size_t latent, double noise,
                                           std::uint64_t seed) {
  Rng rng(seed);
  const auto draw = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (auto& v : t.values()) v = rng.normal();
    return t;
  };
  const Tensor a0 = draw(latent, dim), a1 = draw(latent, dim);
  const Tensor z = draw(samples, latent);
  Tensor x0 = matmul(z, a0), x1 = matmul(z, a1);
  for (auto& v : x0.values()) v += noise * rng.normal();
  for (auto& v : x1.values()) v += noise * rng.normal();
  return {std::move(x0), std::move(x1)};
}

// ---------------------------------------------------------------------------
// DCCA

DccaEncoder::DccaEncoder(ad::Parameter w1, ad::Parameter b1, ad::Parameter w2, ad::Parameter b2, Activation a)
    : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), b2_(std::move(b2)), activation_(a) {}

DccaEncoder::DccaEncoder(std::string name, std::size_t dim, Activation activation, Rng& rng)
    : DccaEncoder(ad::Parameter(name + ".w1", fan_in_uniform(dim, 2 * dim, dim, rng)),
                  ad::Parameter(name + ".b1", Tensor::zeros({1, 2 * dim})),
                  ad::Parameter(name + ".w2", fan_in_uniform(2 * dim, dim, 2 * dim, rng)),
                  ad::Parameter(name + ".b2", Tensor::zeros({1, dim})), activation) {}

DccaEncoder DccaEncoder::identity(std::string name, std::size_t dim, Activation activation) {
  Tensor w1({dim, 2 * dim}), w2({2 * dim, dim});
  for (std::size_t i = 0; i < dim; ++i) {
    w1(i, i) = 1.0;
    w2(i, i) = 1.0;
  }
  return DccaEncoder(ad::Parameter(name + ".w1", std::move(w1)), ad::Parameter(name + ".b1", Tensor::zeros({1, 2 * dim})),
                     ad::Parameter(name + ".w2", std::move(w2)), ad::Parameter(name + ".b2", Tensor::zeros({1, dim})),
                     activation);
}

ad::Var DccaEncoder::forward(ad::Var x) {
  ad::Tape& tape = *x.tape();
  if (x.cols() != dim()) {
    throw ShapeError("DccaEncoder: input " + shape_string(x.value().shape()) + " but encoder dim is " +
                     std::to_string(dim()));
  }
  ad::Var h = ad::add_row(ad::matmul(x, tape.param(w1_)), tape.param(b1_));
  if (activation_ == Activation::tanh) h = ad::tanh(h);
  return ad::add_row(ad::matmul(h, tape.param(w2_)), tape.param(b2_));
}

DccaModel::DccaModel(DccaEncoder encoder_t, DccaEncoder encoder_v) : t_(std::move(encoder_t)), v_(std::move(encoder_v)) {}

DccaModel DccaModel::random(std::size_t dim_t, std::size_t dim_v, Activation activation, std::uint64_t seed,
                            const std::string& prefix) {
  Rng rng(seed);
  DccaEncoder t(prefix + ".t", dim_t, activation, rng);
  DccaEncoder v(prefix + ".v", dim_v, activation, rng);
  return DccaModel(std::move(t), std::move(v));
}

DccaModel DccaModel::identity(std::size_t dim_t, std::size_t dim_v, Activation activation, const std::string& prefix) {
  return DccaModel(DccaEncoder::identity(prefix + ".t", dim_t, activation),
                   DccaEncoder::identity(prefix + ".v", dim_v, activation));
}

ad::ParameterList DccaModel::parameters() {
  auto out = t_.parameters();
  const auto v = v_.parameters();
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

namespace ad {

Var dcca_loss(Var h1, Var h2, std::size_t components, double regularizer) {
  if (h1.tape() != h2.tape()) throw std::logic_error("operands live on different tapes");
  check_views(h1.value(), h2.value(), components, "dcca_loss");
  const std::size_t n = h1.rows();
  if (n < components + 2) {
    throw std::invalid_argument("dcca_loss: batch of " + std::to_string(n) + " samples is too small; need at least " +
                                std::to_string(components + 2) + " for " + std::to_string(components) +
                                " components");
  }
  Matrix c1 = centered(to_eigen(h1.value()));
  Matrix c2 = centered(to_eigen(h2.value()));
  const auto dec = decompose(c1, c2, regularizer, false);
  const auto c = static_cast<Eigen::Index>(components);
  const double corr = dec.sigma.head(c).sum();

  const Matrix uc = dec.u.leftCols(c), vc = dec.v.leftCols(c);
  const Eigen::VectorXd dc = dec.sigma.head(c);
  Matrix d12 = dec.k0 * uc * vc.transpose() * dec.k1;
  Matrix d11 = -0.5 * dec.k0 * uc * dc.asDiagonal() * uc.transpose() * dec.k0;
  Matrix d22 = -0.5 * dec.k1 * vc * dc.asDiagonal() * vc.transpose() * dec.k1;

  const std::size_t i1 = h1.id(), i2 = h2.id();
  Tape& tape = *h1.tape();
  return tape.record(OpKind::dcca, {i1, i2}, Tensor({1, 1}, -corr),
                     [=, c1 = std::move(c1), c2 = std::move(c2), d12 = std::move(d12), d11 = std::move(d11),
                      d22 = std::move(d22)](Tape& t, std::size_t self) {
                       const double g = -t.grad(self)[0] / static_cast<double>(n - 1);
                       if (t.needs_grad(i1)) t.accumulate(i1, from_eigen(g * (2.0 * c1 * d11 + c2 * d12.transpose())));
                       if (t.needs_grad(i2)) t.accumulate(i2, from_eigen(g * (2.0 * c2 * d22 + c1 * d12)));
                     });
}

}  // namespace ad

double dcca_objective(DccaModel& model, const Tensor& batch_t, const Tensor& batch_v, std::size_t components,
                      double regularizer) {
  ad::Tape tape;
  ad::Var loss = ad::dcca_loss(model.encoder_t().forward(tape.constant(batch_t)),
                               model.encoder_v().forward(tape.constant(batch_v)), components, regularizer);
  tape.backward(loss);
  return loss.value()[0];
}

}  // namespace fusionkit
