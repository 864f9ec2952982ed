#pragma once

// Linear CCA in closed form and deep CCA with trainable two-layer encoders.
//
// Sample matrices hold one sample per row. Covariances use the unbiased
// 1/(N-1) normalization, and the ridge term r*I is added to both
// within-view covariances.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "fusionkit/autodiff.hpp"
#include "fusionkit/factorized.hpp"

namespace fusionkit {

inline constexpr double kDefaultCcaRegularizer = 1e-4;

struct CcaSolution {
  Tensor w0;  // d0 x c
  Tensor w1;  // d1 x c
  std::vector<double> correlations;  // non-increasing, in [0, 1]
  double regularizer = 0.0;
};

void to_json(nlohmann::json& j, const CcaSolution& s);
void from_json(const nlohmann::json& j, CcaSolution& s);

/// Top-c canonical pairs from the SVD of S00^{-1/2} S01 S11^{-1/2}. Throws
/// std::domain_error naming the view when r = 0 and its covariance is
/// singular.
CcaSolution cca_fit(const Tensor& view0, const Tensor& view1, std::size_t components,
                    double regularizer = kDefaultCcaRegularizer);

struct CcaCorrelation {
  std::vector<double> correlations;
  /// Set when some projection had zero variance; its correlation is 0.
  bool degenerate = false;
};

/// Pearson correlation of each projected component pair on a batch.
CcaCorrelation cca_correlation(const CcaSolution& solution, const Tensor& view0, const Tensor& view1);

/// Two views driven by a shared `latent`-dimensional factor through fixed
/// random mixings plus independent noise.
std::pair<Tensor, Tensor> correlated_views(std::size_t samples, std::size_t dim, std::size_t latent,
                                           double noise, std::uint64_t seed);

/// affine(d -> 2d) -> activation -> affine(2d -> d)
class DccaEncoder {
 public:
  DccaEncoder(std::string name, std::size_t dim, Activation activation, Rng& rng);
  /// W1 = [I 0], W2 = [I; 0], zero biases.
  static DccaEncoder identity(std::string name, std::size_t dim, Activation activation);

  ad::Var forward(ad::Var x);
  ad::ParameterList parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
  std::size_t dim() const { return w1_.value.rows(); }
  Activation activation() const noexcept { return activation_; }

 private:
  DccaEncoder(ad::Parameter w1, ad::Parameter b1, ad::Parameter w2, ad::Parameter b2, Activation a);

  ad::Parameter w1_, b1_, w2_, b2_;
  Activation activation_;
};

class DccaModel {
 public:
  DccaModel(DccaEncoder encoder_t, DccaEncoder encoder_v);
  static DccaModel random(std::size_t dim_t, std::size_t dim_v, Activation activation, std::uint64_t seed,
                          const std::string& prefix = "dcca");
  static DccaModel identity(std::size_t dim_t, std::size_t dim_v, Activation activation,
                            const std::string& prefix = "dcca");

  DccaEncoder& encoder_t() noexcept { return t_; }
  DccaEncoder& encoder_v() noexcept { return v_; }
  ad::ParameterList parameters();

 private:
  DccaEncoder t_;
  DccaEncoder v_;
};

namespace ad {
/// -(sum of the top-c canonical correlations) between the rows of h1 and h2,
/// as a 1 x 1 node with its analytic gradient.
Var dcca_loss(Var h1, Var h2, std::size_t components, double regularizer = kDefaultCcaRegularizer);
}  // namespace ad

/// Encodes both batches, evaluates the loss, and accumulates gradients into
/// the model's parameters. Returns the loss.
double dcca_objective(DccaModel& model, const Tensor& batch_t, const Tensor& batch_v, std::size_t components,
                      double regularizer = kDefaultCcaRegularizer);

}  // namespace fusionkit
