#include "fusionkit/fusion.hpp"

#include <algorithm>

#include "fusionkit/factorized.hpp"
#include "fusionkit/sketch.hpp"
#include "fusionkit/tucker_block.hpp"

namespace fusionkit {

void FusionOp::check_inputs(std::span<const double> x, std::span<const double> y) const {
  if (x.size() != left_dim() || y.size() != right_dim()) {
    throw ShapeError(kind() + ": inputs of size (" + std::to_string(x.size()) + ", " +
                     std::to_string(y.size()) + ") but operator expects (" +
                     std::to_string(left_dim()) + ", " + std::to_string(right_dim()) + ")");
  }
}

void FusionOp::check_inputs(const ad::Var& x, const ad::Var& y) const {
  if (!x.valid() || x.tape() != y.tape()) throw std::logic_error(kind() + ": inputs on different tapes");
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  if (xv.rank() != 2 || yv.rank() != 2 || xv.rows() != yv.rows() || xv.cols() != left_dim() ||
      yv.cols() != right_dim()) {
    throw ShapeError(kind() + ": batch inputs " + shape_string(xv.shape()) + " and " +
                     shape_string(yv.shape()) + " incompatible with operator dims (" +
                     std::to_string(left_dim()) + ", " + std::to_string(right_dim()) + ")");
  }
}

void to_json(nlohmann::json& j, const FusionSpec& s) {
  j = nlohmann::json{{"kind", s.kind},
                     {"left_dim", s.left_dim},
                     {"right_dim", s.right_dim},
                     {"output_dim", s.output_dim},
                     {"seed", s.seed},
                     {"tanh", s.tanh},
                     {"factors", s.factors},
                     {"units", s.units},
                     {"dropout", s.dropout},
                     {"normalize", s.normalize},
                     {"core_left", s.core_left},
                     {"core_right", s.core_right},
                     {"core_out", s.core_out},
                     {"blocks", s.blocks},
                     {"block_left", s.block_left},
                     {"block_right", s.block_right},
                     {"block_out", s.block_out}};
}

void from_json(const nlohmann::json& j, FusionSpec& s) {
  const FusionSpec d;
  s.kind = j.value("kind", d.kind);
  s.left_dim = j.value("left_dim", d.left_dim);
  s.right_dim = j.value("right_dim", d.right_dim);
  s.output_dim = j.value("output_dim", d.output_dim);
  s.seed = j.value("seed", d.seed);
  s.tanh = j.value("tanh", d.tanh);
  s.factors = j.value("factors", d.factors);
  s.units = j.value("units", d.units);
  s.dropout = j.value("dropout", d.dropout);
  s.normalize = j.value("normalize", d.normalize);
  s.core_left = j.value("core_left", d.core_left);
  s.core_right = j.value("core_right", d.core_right);
  s.core_out = j.value("core_out", d.core_out);
  s.blocks = j.value("blocks", d.blocks);
  s.block_left = j.value("block_left", d.block_left);
  s.block_right = j.value("block_right", d.block_right);
  s.block_out = j.value("block_out", d.block_out);
}

const std::vector<std::string>& fusion_kinds() {
  static const std::vector<std::string> kinds = {"mcb", "mlb", "mfb", "mfh", "tucker", "block"};
  return kinds;
}

std::unique_ptr<FusionOp> make_fusion(const FusionSpec& s) {
  if (s.kind == "mcb") {
    return std::make_unique<McbOp>(s.seed, s.left_dim, s.right_dim, s.output_dim, s.normalize);
  }
  if (s.kind == "mlb") {
    return std::make_unique<MlbOp>(MlbOp::random(s.left_dim, s.right_dim, s.output_dim, s.seed,
                                                 s.tanh ? Activation::tanh : Activation::none));
  }
  if (s.kind == "mfb") {
    return std::make_unique<MfbOp>(MfbOp::random(s.left_dim, s.right_dim, s.output_dim, s.factors, s.seed));
  }
  if (s.kind == "mfh") {
    if (s.units == 0 || s.output_dim % s.units != 0) {
      throw ShapeError("mfh: output_dim " + std::to_string(s.output_dim) +
                       " must be a positive multiple of units " + std::to_string(s.units));
    }
    return std::make_unique<MfhOp>(MfhOp::random(s.left_dim, s.right_dim, s.output_dim / s.units,
                                                 s.factors, s.units, s.dropout, s.seed));
  }
  if (s.kind == "tucker") {
    return std::make_unique<TuckerOp>(TuckerOp::random(s.left_dim, s.right_dim, s.output_dim, s.core_left,
                                                       s.core_right, s.core_out, s.seed));
  }
  if (s.kind == "block") {
    return std::make_unique<BlockOp>(BlockOp::random(s.left_dim, s.right_dim, s.output_dim, s.blocks,
                                                     s.block_left, s.block_right, s.block_out, s.seed));
  }
  throw std::invalid_argument("unknown fusion kind '" + s.kind + "'");
}

}  // namespace fusionkit
