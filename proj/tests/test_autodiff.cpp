#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "fusionkit/autodiff.hpp"
#include "fusionkit/sketch.hpp"
#include "oracles.hpp"

namespace ad = fusionkit::ad;
using fusionkit::Tensor;

namespace {

using Builder = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

// Compares tape gradients of a scalar built from `params` with central
// differences over every coordinate. Returns the worst relative error.
double worst_gradient_error(std::vector<ad::Parameter>& params, const Builder& build) {
  for (auto& p : params) p.zero_grad();
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (auto& p : params) vars.push_back(tape.param(p));
    tape.backward(build(tape, vars));
  }
  const auto eval = [&]() {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (auto& p : params) vars.push_back(tape.constant(p.value));
    return build(tape, vars).value()[0];
  };
  double worst = 0.0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + 1e-6;
      const double fp = eval();
      p.value[i] = orig - 1e-6;
      const double fm = eval();
      p.value[i] = orig;
      const double numeric = (fp - fm) / 2e-6;
      const double analytic = p.grad[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

ad::Parameter random_param(const char* name, fusionkit::Shape shape, std::mt19937_64& gen) {
  return ad::Parameter(name, oracle::random_tensor(shape, gen));
}

// Fixed random weighting so the loss depends on every output entry.
ad::Var weighted_sum(ad::Var z, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return ad::sum(ad::mul_const(z, oracle::random_tensor(z.value().shape(), gen)));
}

}  // namespace

TEST(Backward, SumGivesOnes) {
  ad::Parameter x("x", Tensor::matrix(2, 3, {1, -2, 3, 4, 5, -6}));
  ad::Tape tape;
  tape.backward(ad::sum(tape.param(x)));
  EXPECT_EQ(x.grad, Tensor::ones({2, 3}));
}

TEST(Backward, QuadraticGivesTwoX) {
  ad::Parameter x("x", Tensor::matrix(1, 4, {0.5, -1.5, 2.0, 3.0}));
  ad::Tape tape;
  ad::Var v = tape.param(x);
  tape.backward(ad::matmul(v, ad::transpose(v)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad[i], 2.0 * x.value[i]);
}

TEST(Backward, RejectsNonScalarLoss) {
  ad::Parameter x("x", Tensor::ones({2, 2}));
  ad::Tape tape;
  EXPECT_THROW(tape.backward(tape.param(x)), fusionkit::ShapeError);
}

TEST(Backward, UnreachedParameterStaysZero) {
  ad::Parameter a("a", Tensor::ones({1, 2})), b("b", Tensor::ones({1, 2}));
  ad::Tape tape;
  ad::Var va = tape.param(a);
  (void)tape.param(b);
  tape.backward(ad::sum(va));
  EXPECT_EQ(b.grad, Tensor::zeros({1, 2}));
}

TEST(Backward, SharedNodeAccumulates) {
  ad::Parameter x("x", Tensor::matrix(1, 2, {3, 4}));
  ad::Tape tape;
  ad::Var v = tape.param(x);
  tape.backward(ad::sum(ad::add(v, ad::scale(v, 2.0))));
  EXPECT_EQ(x.grad, Tensor({1, 2}, 3.0));
}

TEST(Backward, NonFiniteNodeKindIsRecorded) {
  ad::Tape tape;
  ad::Var a = tape.constant(Tensor::matrix(1, 2, {1e308, 1e308}));
  EXPECT_FALSE(tape.first_nonfinite().has_value());
  ad::Var b = ad::scale(a, 10.0);
  (void)ad::tanh(b);
  ASSERT_TRUE(tape.first_nonfinite().has_value());
  EXPECT_EQ(*tape.first_nonfinite(), ad::OpKind::scale);
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
  std::mt19937_64 gen(61);
  ad::Tape tape;
  Tensor logits = oracle::random_tensor({5, 7}, gen, 10.0);
  logits(0, 0) = 700.0;
  const Tensor p = ad::softmax(tape.constant(logits)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(p(r, c), 0.0);
      s += p(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(CrossEntropy, MatchesHandValue) {
  ad::Tape tape;
  const std::vector<int> labels = {1};
  const double loss = ad::cross_entropy(tape.constant(Tensor::matrix(1, 3, {0.0, std::log(2.0), 0.0})), labels)
                          .value()[0];
  EXPECT_NEAR(loss, -std::log(0.5), 1e-12);
}

TEST(MaxPool, PicksGroupMaxima) {
  ad::Tape tape;
  const Tensor out = ad::max_pool_rows(tape.constant(Tensor::matrix(4, 2, {1, 8, 3, 2, -1, -5, -2, -4})), 2).value();
  EXPECT_EQ(out, Tensor::matrix(2, 2, {3, 8, -1, -4}));
}

struct GradCase {
  const char* name;
  std::vector<fusionkit::Shape> shapes;
  Builder build;
};

void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

class OpGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  std::mt19937_64 gen(71);
  std::vector<ad::Parameter> params;
  for (const auto& s : c.shapes) params.push_back(random_param("p", s, gen));
  EXPECT_LE(worst_gradient_error(params, c.build), 1e-6) << c.name;
}

const fusionkit::SketchPlan kPlan(5, 6, 4);

INSTANTIATE_TEST_SUITE_P(
    AllOps, OpGradient,
    ::testing::Values(
        GradCase{"matmul", {{3, 4}, {4, 2}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::matmul(v[0], v[1]), 1); }},
        GradCase{"add_sub", {{2, 3}, {2, 3}},
                 [](ad::Tape&, auto& v) { return weighted_sum(ad::sub(ad::add(v[0], v[1]), ad::mul(v[0], v[0])), 2); }},
        GradCase{"add_row", {{3, 4}, {1, 4}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::add_row(v[0], v[1]), 3); }},
        GradCase{"mul", {{2, 5}, {2, 5}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::mul(v[0], v[1]), 4); }},
        GradCase{"scale_tanh", {{3, 3}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::tanh(ad::scale(v[0], 0.7)), 5); }},
        GradCase{"relu", {{3, 3}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::relu(v[0]), 6); }},
        GradCase{"softmax", {{3, 5}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::softmax(v[0]), 7); }},
        GradCase{"sum_pool", {{2, 6}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::sum_pool(v[0], 3), 8); }},
        GradCase{"concat_slice", {{2, 3}, {2, 2}},
                 [](ad::Tape&, auto& v) {
                   const std::vector<ad::Var> parts = {v[0], v[1]};
                   ad::Var c = ad::concat_cols(parts);
                   const std::vector<ad::Var> rows = {ad::slice_cols(c, 1, 5), ad::slice_cols(ad::slice_rows(c, 0, 1), 0, 4)};
                   return weighted_sum(ad::concat_rows(rows), 9);
                 }},
        GradCase{"row_outer", {{3, 2}, {3, 3}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::row_outer(v[0], v[1]), 10); }},
        GradCase{"max_pool", {{6, 3}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::max_pool_rows(v[0], 3), 11); }},
        GradCase{"transpose_reshape", {{2, 6}},
                 [](ad::Tape&, auto& v) { return weighted_sum(ad::reshape(ad::transpose(v[0]), {3, 4}), 12); }},
        GradCase{"broadcast", {{1, 4}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::broadcast_rows(v[0], 3), 13); }},
        GradCase{"gather", {{3, 4}}, [](ad::Tape&, auto& v) {
          const std::vector<std::size_t> idx = {2, 0, 2, 1, 2};
          return weighted_sum(ad::gather_rows(v[0], idx), 21);
        }},
        GradCase{"signed_sqrt", {{2, 4}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::signed_sqrt(v[0]), 14); }},
        GradCase{"l2_normalize", {{3, 4}}, [](ad::Tape&, auto& v) { return weighted_sum(ad::l2_normalize_rows(v[0]), 15); }},
        GradCase{"cross_entropy", {{4, 5}},
                 [](ad::Tape&, auto& v) {
                   static const std::vector<int> labels = {0, 3, 4, 1};
                   return ad::cross_entropy(v[0], labels);
                 }},
        GradCase{"sketch_project", {{2, 6}},
                 [](ad::Tape&, auto& v) { return weighted_sum(fusionkit::ad::sketch_project(v[0], kPlan), 16); }},
        GradCase{"circular_convolve", {{2, 5}, {2, 5}},
                 [](ad::Tape&, auto& v) { return weighted_sum(fusionkit::ad::circular_convolve(v[0], v[1]), 17); }}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Parameters, CountSumsBlockSizes) {
  ad::Parameter a("a", Tensor({3, 4})), b("b", Tensor({5}));
  EXPECT_EQ(ad::parameter_count({&a, &b}), 17u);
}
