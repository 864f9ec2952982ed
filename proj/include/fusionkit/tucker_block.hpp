#pragma once

// Tucker (MUTAN-style) fusion and block-superdiagonal (BLOCK) fusion.

#include <cstdint>
#include <vector>

#include "fusionkit/fusion.hpp"

namespace fusionkit {

/// Seeded matrix with orthonormal rows (rows <= cols) or orthonormal columns
/// (rows > cols), from the QR factorization of a Gaussian draw.
Tensor orthonormal(std::size_t rows, std::size_t cols, Rng& rng);

/// y = ((core x_1 (q^T W_q)) x_2 (v^T W_v)) x_3 W_o^T.
///
/// core: t1 x t2 x t3, W_q: d_q x t1, W_v: d_v x t2, W_o: t3 x o.
class TuckerOp final : public FusionOp {
 public:
  TuckerOp(Tensor core, Tensor w_q, Tensor w_v, Tensor w_o);
  static TuckerOp random(std::size_t d_q, std::size_t d_v, std::size_t o, std::size_t t1,
                         std::size_t t2, std::size_t t3, std::uint64_t seed);

  std::string kind() const override { return "tucker"; }
  std::size_t left_dim() const override { return w_q_.value.rows(); }
  std::size_t right_dim() const override { return w_v_.value.rows(); }
  std::size_t output_dim() const override { return w_o_.value.cols(); }

  std::vector<double> fuse(std::span<const double> q, std::span<const double> v) const override;
  ad::Var forward(ad::Var q, ad::Var v, const ForwardContext& ctx = {}) override;
  ad::ParameterList parameters() override { return {&core_, &w_q_, &w_v_, &w_o_}; }
  nlohmann::json config() const override;

  /// The full d_q x d_v x o bilinear tensor core x_1 W_q x_2 W_v x_3 W_o^T.
  Tensor reconstruct() const;

  const Tensor& core() const noexcept { return core_.value; }
  const Tensor& w_q() const noexcept { return w_q_.value; }
  const Tensor& w_v() const noexcept { return w_v_.value; }
  const Tensor& w_o() const noexcept { return w_o_.value; }

 private:
  ad::Parameter core_;
  ad::Parameter w_q_;
  ad::Parameter w_v_;
  ad::Parameter w_o_;
};

/// Block-superdiagonal bilinear fusion with R blocks of rank (R1, R2, R3).
///
/// x_hat = U1 x (R*R1), y_hat = U2 y (R*R2); block r contracts core S_r with
/// the r-th R1-chunk of x_hat and R2-chunk of y_hat into z_r (R3); the chunks
/// are stacked into z_hat (R*R3) and z = U3 z_hat.
class BlockOp final : public FusionOp {
 public:
  BlockOp(std::vector<Tensor> cores, Tensor u1, Tensor u2, Tensor u3);
  static BlockOp random(std::size_t m, std::size_t n, std::size_t o, std::size_t blocks,
                        std::size_t r1, std::size_t r2, std::size_t r3, std::uint64_t seed);

  std::string kind() const override { return "block"; }
  std::size_t left_dim() const override { return u1_.value.cols(); }
  std::size_t right_dim() const override { return u2_.value.cols(); }
  std::size_t output_dim() const override { return u3_.value.rows(); }

  std::vector<double> fuse(std::span<const double> x, std::span<const double> y) const override;
  ad::Var forward(ad::Var x, ad::Var y, const ForwardContext& ctx = {}) override;
  ad::ParameterList parameters() override;
  nlohmann::json config() const override;

  std::size_t blocks() const noexcept { return cores_.size(); }
  std::size_t block_left() const { return cores_.front().value.dim(0); }
  std::size_t block_right() const { return cores_.front().value.dim(1); }
  std::size_t block_out() const { return cores_.front().value.dim(2); }

  const Tensor& core(std::size_t r) const { return cores_.at(r).value; }
  const Tensor& u1() const noexcept { return u1_.value; }
  const Tensor& u2() const noexcept { return u2_.value; }
  const Tensor& u3() const noexcept { return u3_.value; }

 private:
  std::vector<ad::Parameter> cores_;
  ad::Parameter u1_;
  ad::Parameter u2_;
  ad::Parameter u3_;
};

std::vector<double> tucker_fuse(const TuckerOp& op, std::span<const double> q, std::span<const double> v);
std::vector<double> block_fuse(const BlockOp& op, std::span<const double> x, std::span<const double> y);

/// Largest m * n * o that reconstruct_block_tensor will materialize.
inline constexpr std::size_t kMaxReconstructEntries = 1'000'000;

/// W = sum_r S_r x_1 U1_r^T x_2 U2_r^T x_3 U3_r, of shape m x n x o.
Tensor reconstruct_block_tensor(const BlockOp& op);

}  // namespace fusionkit
