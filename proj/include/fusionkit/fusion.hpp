#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusionkit/autodiff.hpp"
#include "fusionkit/random.hpp"

namespace fusionkit {

/// Per-call evaluation state. Dropout and other stochastic behaviour is only
/// active when `train` is set, and then draws from `rng`.
struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;
};

/// Uniform interface over every bilinear fusion operator: (x, y) -> z.
///
/// `fuse` is the direct, tape-free evaluation of a single pair. `forward`
/// records the same computation on a tape for a batch whose rows are
/// independent pairs, so that parameters can be trained.
class FusionOp {
 public:
  virtual ~FusionOp() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t left_dim() const = 0;
  virtual std::size_t right_dim() const = 0;
  virtual std::size_t output_dim() const = 0;

  virtual std::vector<double> fuse(std::span<const double> x, std::span<const double> y) const = 0;
  virtual ad::Var forward(ad::Var x, ad::Var y, const ForwardContext& ctx = {}) = 0;

  virtual ad::ParameterList parameters() = 0;
  virtual nlohmann::json config() const = 0;

  std::size_t parameter_count() { return ad::parameter_count(parameters()); }

 protected:
  void check_inputs(std::span<const double> x, std::span<const double> y) const;
  void check_inputs(const ad::Var& x, const ad::Var& y) const;
};

/// Everything needed to rebuild a fusion operator. Fields that do not apply
/// to a given kind are ignored.
struct FusionSpec {
  std::string kind = "mlb";  // mcb | mlb | mfb | mfh | tucker | block
  std::size_t left_dim = 16;
  std::size_t right_dim = 16;
  std::size_t output_dim = 8;
  std::uint64_t seed = 0;

  bool tanh = true;          // mlb
  std::size_t factors = 4;   // mfb / mfh: k
  std::size_t units = 2;     // mfh: p
  double dropout = 0.1;      // mfh
  bool normalize = false;    // mcb: signed sqrt + l2
  std::size_t core_left = 8, core_right = 8, core_out = 8;  // tucker t1, t2, t3
  std::size_t blocks = 4;    // block: R
  std::size_t block_left = 8, block_right = 8, block_out = 8;  // block: R1, R2, R3
};

void to_json(nlohmann::json& j, const FusionSpec& s);
void from_json(const nlohmann::json& j, FusionSpec& s);

std::unique_ptr<FusionOp> make_fusion(const FusionSpec& spec);

/// The kinds accepted by make_fusion.
const std::vector<std::string>& fusion_kinds();

}  // namespace fusionkit
