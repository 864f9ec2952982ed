#include "fusionkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fusionkit {

namespace {

Tensor normal_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

std::vector<std::size_t> sample_indices(std::size_t size, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  count = std::min(count, size);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
  idx.resize(count);
  return idx;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const GradCheckBlock& b) { return b.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
  return m;
}

void to_json(nlohmann::json& j, const GradCheckReport& r) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : r.blocks) {
    blocks.push_back({{"name", b.name},
                      {"size", b.size},
                      {"checked", b.checked},
                      {"max_rel_error", b.max_rel_error},
                      {"passed", b.passed}});
  }
  j = nlohmann::json{{"op", r.op}, {"passed", r.passed()}, {"blocks", blocks}};
}

GradCheckReport grad_check(FusionOp& op, std::uint64_t seed, const GradCheckOptions& options) {
  Rng rng(seed);
  ad::Parameter x("x", normal_tensor({options.batch, op.left_dim()}, rng));
  ad::Parameter y("y", normal_tensor({options.batch, op.right_dim()}, rng));
  const Tensor weights = normal_tensor({options.batch, op.output_dim()}, rng);

  ad::ParameterList blocks = op.parameters();
  blocks.push_back(&x);
  blocks.push_back(&y);
  for (auto* p : blocks) p->zero_grad();

  {
    ad::Tape tape;
    ad::Var z = op.forward(tape.param(x), tape.param(y));
    tape.backward(ad::sum(ad::mul_const(z, weights)));
  }

  const auto loss = [&]() {
    ad::Tape tape;
    ad::Var z = op.forward(tape.constant(x.value), tape.constant(y.value));
    return ad::sum(ad::mul_const(z, weights)).value()[0];
  };

  GradCheckReport report;
  report.op = op.kind();
  const std::size_t per_block = std::max<std::size_t>(1, options.max_coordinates / blocks.size());
  for (auto* p : blocks) {
    GradCheckBlock b;
    b.name = p->name;
    b.size = p->value.size();
    for (std::size_t i : sample_indices(b.size, per_block, rng)) {
      const double orig = p->value[i];
      p->value[i] = orig + options.step;
      const double fp = loss();
      p->value[i] = orig - options.step;
      const double fm = loss();
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), options.floor});
      b.max_rel_error = std::max(b.max_rel_error, std::abs(numeric - analytic) / denom);
      ++b.checked;
    }
    b.passed = b.max_rel_error <= options.tolerance;
    report.blocks.push_back(b);
  }
  for (auto* p : op.parameters()) p->zero_grad();
  return report;
}

}  // namespace fusionkit
