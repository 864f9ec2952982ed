#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fusionkit/checkpoint.hpp"
#include "fusionkit/factorized.hpp"
#include "fusionkit/gradcheck.hpp"
#include "fusionkit/optim.hpp"
#include "fusionkit/tucker_block.hpp"

namespace ad = fusionkit::ad;
using fusionkit::Tensor;

namespace {

// z = x * y elementwise, with a backward rule that drops the factor y.
class BrokenHadamard final : public fusionkit::FusionOp {
 public:
  std::string kind() const override { return "broken"; }
  std::size_t left_dim() const override { return 3; }
  std::size_t right_dim() const override { return 3; }
  std::size_t output_dim() const override { return 3; }
  std::vector<double> fuse(std::span<const double> x, std::span<const double> y) const override {
    std::vector<double> z(3);
    for (std::size_t i = 0; i < 3; ++i) z[i] = x[i] * y[i];
    return z;
  }
  ad::Var forward(ad::Var x, ad::Var y, const fusionkit::ForwardContext&) override {
    ad::Tape& tape = *x.tape();
    Tensor out = fusionkit::hadamard(x.value(), y.value());
    const std::size_t ix = x.id(), iy = y.id();
    return tape.record(ad::OpKind::custom, {ix, iy}, std::move(out), [ix, iy](ad::Tape& t, std::size_t self) {
      t.accumulate(ix, t.grad(self));
      t.accumulate(iy, fusionkit::hadamard(t.grad(self), t.value(ix)));
    });
  }
  ad::ParameterList parameters() override { return {}; }
  nlohmann::json config() const override { return {{"kind", kind()}}; }
};

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fusionkit_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Optimizer, AdamSkipsZeroGradient) {
  ad::Parameter a("a", Tensor::ones({2, 2})), b("b", Tensor::ones({2}));
  b.grad[0] = 0.5;
  fusionkit::Optimizer opt;
  opt.step({&a, &b});
  EXPECT_EQ(a.value, Tensor::ones({2, 2}));
  EXPECT_NE(b.value, Tensor::ones({2}));
  // Only the block with a nonzero gradient moves; its zero-gradient entry
  // stays put because Adam's update for it is 0 / (0 + eps).
  EXPECT_EQ(b.value[1], 1.0);
  EXPECT_NEAR(b.value[0], 1.0 - 1e-3, 1e-9);
}

TEST(Optimizer, SgdStepAndZeroLearningRate) {
  ad::Parameter a("a", Tensor::matrix(1, 2, {1.0, 2.0}));
  a.grad = Tensor::matrix(1, 2, {0.5, -1.0});
  fusionkit::Optimizer sgd({"sgd", 0.1});
  sgd.step({&a});
  EXPECT_NEAR(a.value[0], 0.95, 1e-15);
  EXPECT_NEAR(a.value[1], 2.1, 1e-15);
  fusionkit::Optimizer frozen({"adam", 0.0});
  const Tensor before = a.value;
  frozen.step({&a});
  EXPECT_EQ(a.value, before);
  EXPECT_THROW(fusionkit::Optimizer({"rmsprop"}), std::invalid_argument);
}

TEST(GradCheck, MlbWithoutActivationPasses) {
  auto op = fusionkit::MlbOp::random(6, 5, 3, 1, fusionkit::Activation::none);
  const auto report = fusionkit::grad_check(op, 7);
  EXPECT_TRUE(report.passed()) << nlohmann::json(report).dump();
  ASSERT_EQ(report.blocks.size(), 4u);
  EXPECT_EQ(report.blocks[2].name, "x");
}

TEST(GradCheck, SmallBlockPasses) {
  auto op = fusionkit::BlockOp::random(5, 4, 3, 2, 2, 2, 2, 3);
  const auto report = fusionkit::grad_check(op, 8);
  EXPECT_TRUE(report.passed()) << nlohmann::json(report).dump();
  std::size_t checked = 0;
  for (const auto& b : report.blocks) checked += b.checked;
  EXPECT_LE(checked, 200u);
}

TEST(GradCheck, EveryKindPasses) {
  for (const auto& kind : fusionkit::fusion_kinds()) {
    fusionkit::FusionSpec spec;
    spec.kind = kind;
    spec.left_dim = 8;
    spec.right_dim = 6;
    spec.output_dim = kind == "mlb" ? 4 : 6;
    spec.core_left = spec.core_right = spec.core_out = 3;
    spec.blocks = 2;
    spec.block_left = spec.block_right = spec.block_out = 2;
    spec.units = 2;
    spec.factors = 3;
    auto op = fusionkit::make_fusion(spec);
    const auto report = fusionkit::grad_check(*op, 9);
    EXPECT_TRUE(report.passed()) << kind << ": " << nlohmann::json(report).dump();
  }
}

TEST(GradCheck, CorruptedBackwardIsFlagged) {
  BrokenHadamard op;
  const auto report = fusionkit::grad_check(op, 10);
  EXPECT_FALSE(report.passed());
  EXPECT_FALSE(report.blocks.at(0).passed);
  EXPECT_TRUE(report.blocks.at(1).passed);
}

TEST(Checkpoint, LittleEndianEncoding) {
  std::ostringstream out;
  const std::vector<double> v = {1.0};
  fusionkit::write_f64_le(out, v);
  const std::string bytes = out.str();
  ASSERT_EQ(bytes.size(), 8u);
  // 1.0 = 0x3FF0000000000000
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 0xF0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x00);
  std::istringstream in(bytes);
  EXPECT_EQ(fusionkit::read_f64_le(in, 1), v);
}

TEST(Checkpoint, RoundTripRestoresParameters) {
  const auto dir = temp_dir("ckpt");
  auto op = fusionkit::MfhOp::random(4, 3, 2, 2, 2, 0.1, 5);
  fusionkit::save_checkpoint(dir, op.config(), op.parameters());
  auto other = fusionkit::MfhOp::random(4, 3, 2, 2, 2, 0.1, 6);
  fusionkit::load_checkpoint(dir, other.parameters());
  const auto a = op.parameters(), b = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
  EXPECT_EQ(fusionkit::read_checkpoint_config(dir), op.config());

  std::ifstream manifest(dir / "manifest.json");
  const auto j = nlohmann::json::parse(manifest);
  EXPECT_EQ(j.at("blocks").at(1).at("offset"), 16);  // unit 0 x_factors is 4 x 4
  EXPECT_EQ(std::filesystem::file_size(dir / "params.bin"), 8u * fusionkit::ad::parameter_count(a));
}

TEST(Checkpoint, ShapeMismatchRejected) {
  const auto dir = temp_dir("ckpt_shape");
  auto op = fusionkit::MfbOp::random(4, 3, 2, 2, 1);
  fusionkit::save_checkpoint(dir, op.config(), op.parameters());
  auto wider = fusionkit::MfbOp::random(5, 3, 2, 2, 1);
  EXPECT_THROW(fusionkit::load_checkpoint(dir, wider.parameters()), fusionkit::ShapeError);
}
