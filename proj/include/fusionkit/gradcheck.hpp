#pragma once

// Finite-difference verification of tape gradients for fusion operators.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusionkit/fusion.hpp"

namespace fusionkit {

struct GradCheckOptions {
  std::size_t max_coordinates = 200;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so gradients that are zero up
  /// to rounding are compared absolutely.
  double floor = 1e-5;
  std::size_t batch = 3;
};

struct GradCheckBlock {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::string op;
  std::vector<GradCheckBlock> blocks;
  bool passed() const;
  double max_rel_error() const;
};

void to_json(nlohmann::json& j, const GradCheckReport& r);

/// Checks d(loss)/d(theta) for loss = sum(w * op.forward(x, y)) with fixed
/// random x, y, w, over the operator's parameters and the inputs ("x", "y").
/// Coordinates are sampled without replacement, at most
/// `max_coordinates` in total. Stochastic layers run in eval mode.
GradCheckReport grad_check(FusionOp& op, std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace fusionkit
