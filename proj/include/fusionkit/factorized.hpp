#pragma once

// Low-rank factorized bilinear pooling: MLB, MFB and stacked MFH.

#include <cstdint>
#include <vector>

#include "fusionkit/fusion.hpp"

namespace fusionkit {

enum class Activation { none, tanh };

/// Seeded uniform fan-in initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);

/// z = act((X^T x) * (Y^T y)) with X: m x o, Y: n x o and o < min(m, n).
class MlbOp final : public FusionOp {
 public:
  MlbOp(Tensor x_proj, Tensor y_proj, Activation activation = Activation::tanh);
  static MlbOp random(std::size_t m, std::size_t n, std::size_t o, std::uint64_t seed,
                      Activation activation = Activation::tanh);

  std::string kind() const override { return "mlb"; }
  std::size_t left_dim() const override { return x_.value.rows(); }
  std::size_t right_dim() const override { return y_.value.rows(); }
  std::size_t output_dim() const override { return x_.value.cols(); }

  std::vector<double> fuse(std::span<const double> x, std::span<const double> y) const override;
  ad::Var forward(ad::Var x, ad::Var y, const ForwardContext& ctx = {}) override;
  ad::ParameterList parameters() override { return {&x_, &y_}; }
  nlohmann::json config() const override;

  Activation activation() const noexcept { return activation_; }
  const Tensor& x_proj() const noexcept { return x_.value; }
  const Tensor& y_proj() const noexcept { return y_.value; }

 private:
  ad::Parameter x_;
  ad::Parameter y_;
  Activation activation_;
};

/// Factorized bilinear pooling with k factors per output:
/// z_i = sum_{d<k} (X^T x)_{ik+d} (Y^T y)_{ik+d}, with X: m x k*o, Y: n x k*o.
/// Columns [i*k, (i+1)*k) of X and Y hold the factors of output i.
class MfbOp final : public FusionOp {
 public:
  MfbOp(Tensor x_factors, Tensor y_factors, std::size_t k);
  static MfbOp random(std::size_t m, std::size_t n, std::size_t o, std::size_t k, std::uint64_t seed);

  std::string kind() const override { return "mfb"; }
  std::size_t left_dim() const override { return x_.value.rows(); }
  std::size_t right_dim() const override { return y_.value.rows(); }
  std::size_t output_dim() const override { return x_.value.cols() / k_; }
  std::size_t factors() const noexcept { return k_; }

  std::vector<double> fuse(std::span<const double> x, std::span<const double> y) const override;
  ad::Var forward(ad::Var x, ad::Var y, const ForwardContext& ctx = {}) override;
  ad::ParameterList parameters() override { return {&x_, &y_}; }
  nlohmann::json config() const override;

  /// The expanded k*o vector (X^T x) * (Y^T y) before sum pooling.
  std::vector<double> expand(std::span<const double> x, std::span<const double> y) const;
  /// Tape version of expand, one row per pair.
  ad::Var expand(ad::Var x, ad::Var y);

  const Tensor& x_factors() const noexcept { return x_.value; }
  const Tensor& y_factors() const noexcept { return y_.value; }

 private:
  ad::Parameter x_;
  ad::Parameter y_;
  std::size_t k_;
};

/// p stacked MFB units. Unit i's expanded term (after dropout) multiplies the
/// running product z_exp^{i-1}, starting from all-ones; the output is the
/// sum-pooled concatenation [z_exp^1, ..., z_exp^p] of dimension p * o.
class MfhOp final : public FusionOp {
 public:
  MfhOp(std::vector<MfbOp> units, double dropout = 0.1);
  static MfhOp random(std::size_t m, std::size_t n, std::size_t o, std::size_t k, std::size_t p,
                      double dropout, std::uint64_t seed);

  std::string kind() const override { return "mfh"; }
  std::size_t left_dim() const override { return units_.front().left_dim(); }
  std::size_t right_dim() const override { return units_.front().right_dim(); }
  std::size_t output_dim() const override { return units_.size() * units_.front().output_dim(); }

  /// Evaluation mode (no dropout).
  std::vector<double> fuse(std::span<const double> x, std::span<const double> y) const override;
  /// Training mode: inverted dropout on each unit's expanded term.
  std::vector<double> fuse_train(std::span<const double> x, std::span<const double> y, Rng& rng) const;
  ad::Var forward(ad::Var x, ad::Var y, const ForwardContext& ctx = {}) override;
  ad::ParameterList parameters() override;
  nlohmann::json config() const override;

  std::size_t unit_count() const noexcept { return units_.size(); }
  const MfbOp& unit(std::size_t i) const { return units_.at(i); }
  double dropout() const noexcept { return dropout_; }

 private:
  std::vector<double> fuse_impl(std::span<const double> x, std::span<const double> y, Rng* rng) const;

  std::vector<MfbOp> units_;
  double dropout_;
};

std::vector<double> mlb_fuse(const MlbOp& op, std::span<const double> x, std::span<const double> y);
std::vector<double> mfb_fuse(const MfbOp& op, std::span<const double> x, std::span<const double> y);
/// With `train_mode` set, `rng` drives the dropout masks and must be non-null.
std::vector<double> mfh_fuse(const MfhOp& op, std::span<const double> x, std::span<const double> y,
                             bool train_mode = false, Rng* rng = nullptr);

}  // namespace fusionkit
