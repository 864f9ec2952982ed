#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>

#include <json.hpp>

#include "fusionkit/autodiff.hpp"

namespace fusionkit {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

/// Applies accumulated gradients. A block whose gradient is entirely zero is
/// left untouched, Adam moments included.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});

  void step(const ad::ParameterList& params);
  static void zero_grad(const ad::ParameterList& params);

  const OptimizerConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return steps_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
    std::size_t t = 0;
  };

  OptimizerConfig config_;
  std::size_t steps_ = 0;
  std::unordered_map<const ad::Parameter*, Moments> state_;
};

}  // namespace fusionkit
