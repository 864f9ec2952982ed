#pragma once

// Count sketch projections and compact bilinear pooling (MCB).
//
// A sketch plan maps R^n -> R^d with out[h[i]] += s[i] * x[i]. The sketch of
// a flattened outer product x (x) y under the pair hash
// (h_x[i] + h_y[j]) mod d with sign s_x[i] * s_y[j] equals the circular
// convolution of the two individual sketches, which is what makes MCB cheap.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "fusionkit/fusion.hpp"

namespace fusionkit {

/// VQA-era MCB sketch size for 2048-d inputs. Documentation only; not a default.
inline constexpr std::size_t kReferenceMcbSketchDim = 16000;

/// Frozen count-sketch hash and sign tables, regenerated from (seed, input_dim, d).
class SketchPlan {
 public:
  SketchPlan(std::uint64_t seed, std::size_t input_dim, std::size_t sketch_dim);

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t input_dim() const noexcept { return index_.size(); }
  std::size_t sketch_dim() const noexcept { return sketch_dim_; }
  std::span<const std::size_t> index_map() const noexcept { return index_; }
  std::span<const int> sign_map() const noexcept { return sign_; }

  bool operator==(const SketchPlan&) const = default;

 private:
  std::uint64_t seed_;
  std::size_t sketch_dim_;
  std::vector<std::size_t> index_;
  std::vector<int> sign_;
};

void to_json(nlohmann::json& j, const SketchPlan& p);
SketchPlan sketch_plan_from_json(const nlohmann::json& j);

std::vector<double> count_sketch(const SketchPlan& plan, std::span<const double> x);

/// out[k] = sum_j a[j] b[(k - j) mod d], computed with real FFTs.
std::vector<double> circular_convolve(std::span<const double> a, std::span<const double> b);
/// out[j] = sum_k a[k] b[(k - j) mod d]; the adjoint of convolving with b.
std::vector<double> circular_correlate(std::span<const double> a, std::span<const double> b);

class McbOp final : public FusionOp {
 public:
  McbOp(SketchPlan plan_x, SketchPlan plan_y, bool normalize = false);
  /// Plans seeded independently from `seed`.
  McbOp(std::uint64_t seed, std::size_t left_dim, std::size_t right_dim, std::size_t sketch_dim,
        bool normalize = false);

  std::string kind() const override { return "mcb"; }
  std::size_t left_dim() const override { return plan_x_.input_dim(); }
  std::size_t right_dim() const override { return plan_y_.input_dim(); }
  std::size_t output_dim() const override { return plan_x_.sketch_dim(); }

  std::vector<double> fuse(std::span<const double> x, std::span<const double> y) const override;
  ad::Var forward(ad::Var x, ad::Var y, const ForwardContext& ctx = {}) override;
  ad::ParameterList parameters() override { return {}; }
  nlohmann::json config() const override;

  const SketchPlan& plan_x() const noexcept { return plan_x_; }
  const SketchPlan& plan_y() const noexcept { return plan_y_; }
  bool normalize() const noexcept { return normalize_; }

 private:
  SketchPlan plan_x_;
  SketchPlan plan_y_;
  bool normalize_;
};

std::vector<double> mcb_fuse(const McbOp& op, std::span<const double> x, std::span<const double> y);

namespace ad {
/// Row-wise count sketch as a fixed linear map.
Var sketch_project(Var x, const SketchPlan& plan);
/// Row-wise circular convolution.
Var circular_convolve(Var a, Var b);
}  // namespace ad

}  // namespace fusionkit
