#include "fusionkit/factorized.hpp"

#include <cmath>

namespace fusionkit {

namespace {

const char* activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "none"; }

void require_matrix_rows(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " must be a matrix, got " + shape_string(t.shape()));
}

}  // namespace

Tensor fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

// ---------------------------------------------------------------------------
// MLB

MlbOp::MlbOp(Tensor x_proj, Tensor y_proj, Activation activation)
    : x_("mlb.x_proj", std::move(x_proj)), y_("mlb.y_proj", std::move(y_proj)), activation_(activation) {
  require_matrix_rows(x_.value, "MlbOp X");
  require_matrix_rows(y_.value, "MlbOp Y");
  const std::size_t m = x_.value.rows(), n = y_.value.rows(), o = x_.value.cols();
  if (y_.value.cols() != o) {
    throw ShapeError("MlbOp: X " + shape_string(x_.value.shape()) + " and Y " +
                     shape_string(y_.value.shape()) + " must share the output dimension");
  }
  if (o >= std::min(m, n)) {
    throw ShapeError("MlbOp: output dim " + std::to_string(o) + " must be < min(m, n) = " +
                     std::to_string(std::min(m, n)));
  }
}

MlbOp MlbOp::random(std::size_t m, std::size_t n, std::size_t o, std::uint64_t seed, Activation activation) {
  Rng rng(seed);
  Tensor x = fan_in_uniform(m, o, m, rng);
  Tensor y = fan_in_uniform(n, o, n, rng);
  return MlbOp(std::move(x), std::move(y), activation);
}

std::vector<double> MlbOp::fuse(std::span<const double> x, std::span<const double> y) const {
  check_inputs(x, y);
  auto z = vecmat(x, x_.value);
  const auto py = vecmat(y, y_.value);
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] *= py[i];
    if (activation_ == Activation::tanh) z[i] = std::tanh(z[i]);
  }
  return z;
}

ad::Var MlbOp::forward(ad::Var x, ad::Var y, const ForwardContext&) {
  check_inputs(x, y);
  ad::Tape& tape = *x.tape();
  ad::Var z = ad::mul(ad::matmul(x, tape.param(x_)), ad::matmul(y, tape.param(y_)));
  return activation_ == Activation::tanh ? ad::tanh(z) : z;
}

nlohmann::json MlbOp::config() const {
  return {{"kind", kind()},
          {"left_dim", left_dim()},
          {"right_dim", right_dim()},
          {"output_dim", output_dim()},
          {"activation", activation_name(activation_)}};
}

// ---------------------------------------------------------------------------
// MFB

MfbOp::MfbOp(Tensor x_factors, Tensor y_factors, std::size_t k)
    : x_("mfb.x_factors", std::move(x_factors)), y_("mfb.y_factors", std::move(y_factors)), k_(k) {
  require_matrix_rows(x_.value, "MfbOp X");
  require_matrix_rows(y_.value, "MfbOp Y");
  if (k_ == 0) throw ShapeError("MfbOp: factor count k must be >= 1");
  if (x_.value.cols() != y_.value.cols() || x_.value.cols() % k_ != 0) {
    throw ShapeError("MfbOp: factor matrices " + shape_string(x_.value.shape()) + " and " +
                     shape_string(y_.value.shape()) + " must both have k*o columns with k = " +
                     std::to_string(k_));
  }
}

MfbOp MfbOp::random(std::size_t m, std::size_t n, std::size_t o, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = fan_in_uniform(m, k * o, m, rng);
  Tensor y = fan_in_uniform(n, k * o, n, rng);
  return MfbOp(std::move(x), std::move(y), k);
}

std::vector<double> MfbOp::expand(std::span<const double> x, std::span<const double> y) const {
  check_inputs(x, y);
  auto e = vecmat(x, x_.value);
  const auto py = vecmat(y, y_.value);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] *= py[i];
  return e;
}

ad::Var MfbOp::expand(ad::Var x, ad::Var y) {
  check_inputs(x, y);
  ad::Tape& tape = *x.tape();
  return ad::mul(ad::matmul(x, tape.param(x_)), ad::matmul(y, tape.param(y_)));
}

std::vector<double> MfbOp::fuse(std::span<const double> x, std::span<const double> y) const {
  const auto e = expand(x, y);
  std::vector<double> z(output_dim(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t d = 0; d < k_; ++d) z[i] += e[i * k_ + d];
  return z;
}

ad::Var MfbOp::forward(ad::Var x, ad::Var y, const ForwardContext&) {
  return ad::sum_pool(expand(x, y), k_);
}

nlohmann::json MfbOp::config() const {
  return {{"kind", kind()},
          {"left_dim", left_dim()},
          {"right_dim", right_dim()},
          {"output_dim", output_dim()},
          {"factors", k_}};
}

// ---------------------------------------------------------------------------
// MFH

MfhOp::MfhOp(std::vector<MfbOp> units, double dropout) : units_(std::move(units)), dropout_(dropout) {
  if (units_.empty()) throw ShapeError("MfhOp: at least one MFB unit is required");
  if (!(dropout_ >= 0.0 && dropout_ < 1.0)) throw std::invalid_argument("MfhOp: dropout must be in [0, 1)");
  const auto& first = units_.front();
  for (std::size_t i = 1; i < units_.size(); ++i) {
    const auto& u = units_[i];
    if (u.left_dim() != first.left_dim() || u.right_dim() != first.right_dim() ||
        u.output_dim() != first.output_dim() || u.factors() != first.factors()) {
      throw ShapeError("MfhOp: unit " + std::to_string(i) + " is not dimension-compatible with unit 0");
    }
  }
  for (std::size_t i = 0; i < units_.size(); ++i) {
    auto params = units_[i].parameters();
    params[0]->name = "mfh.unit" + std::to_string(i) + ".x_factors";
    params[1]->name = "mfh.unit" + std::to_string(i) + ".y_factors";
  }
}

MfhOp MfhOp::random(std::size_t m, std::size_t n, std::size_t o, std::size_t k, std::size_t p,
                    double dropout, std::uint64_t seed) {
  std::vector<MfbOp> units;
  for (std::size_t i = 0; i < p; ++i) units.push_back(MfbOp::random(m, n, o, k, derive_seed(seed, i)));
  return MfhOp(std::move(units), dropout);
}

std::vector<double> MfhOp::fuse_impl(std::span<const double> x, std::span<const double> y, Rng* rng) const {
  const std::size_t k = units_.front().factors();
  const std::size_t o = units_.front().output_dim();
  std::vector<double> running(k * o, 1.0);
  std::vector<double> z;
  z.reserve(units_.size() * o);
  const double keep_scale = 1.0 / (1.0 - dropout_);
  for (const auto& unit : units_) {
    const auto e = unit.expand(x, y);
    for (std::size_t i = 0; i < e.size(); ++i) {
      double term = e[i];
      if (rng && dropout_ > 0.0) term = rng->bernoulli(dropout_) ? 0.0 : term * keep_scale;
      running[i] *= term;
    }
    for (std::size_t j = 0; j < o; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < k; ++d) s += running[j * k + d];
      z.push_back(s);
    }
  }
  return z;
}

std::vector<double> MfhOp::fuse(std::span<const double> x, std::span<const double> y) const {
  return fuse_impl(x, y, nullptr);
}

std::vector<double> MfhOp::fuse_train(std::span<const double> x, std::span<const double> y, Rng& rng) const {
  return fuse_impl(x, y, &rng);
}

ad::Var MfhOp::forward(ad::Var x, ad::Var y, const ForwardContext& ctx) {
  check_inputs(x, y);
  const std::size_t k = units_.front().factors();
  const bool drop = ctx.train && dropout_ > 0.0;
  if (drop && !ctx.rng) throw std::invalid_argument("MfhOp: training mode requires an rng");
  const double keep_scale = 1.0 / (1.0 - dropout_);

  std::vector<ad::Var> pooled;
  ad::Var running;
  for (auto& unit : units_) {
    ad::Var term = unit.expand(x, y);
    if (drop) {
      Tensor mask(term.value().shape());
      for (auto& v : mask.values()) v = ctx.rng->bernoulli(dropout_) ? 0.0 : keep_scale;
      term = ad::mul_const(term, mask);
    }
    running = running.valid() ? ad::mul(running, term) : term;
    pooled.push_back(ad::sum_pool(running, k));
  }
  return pooled.size() == 1 ? pooled.front() : ad::concat_cols(pooled);
}

ad::ParameterList MfhOp::parameters() {
  ad::ParameterList out;
  for (auto& u : units_) {
    auto p = u.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

nlohmann::json MfhOp::config() const {
  return {{"kind", kind()},
          {"left_dim", left_dim()},
          {"right_dim", right_dim()},
          {"output_dim", output_dim()},
          {"factors", units_.front().factors()},
          {"units", units_.size()},
          {"dropout", dropout_}};
}

std::vector<double> mlb_fuse(const MlbOp& op, std::span<const double> x, std::span<const double> y) {
  return op.fuse(x, y);
}

std::vector<double> mfb_fuse(const MfbOp& op, std::span<const double> x, std::span<const double> y) {
  return op.fuse(x, y);
}

std::vector<double> mfh_fuse(const MfhOp& op, std::span<const double> x, std::span<const double> y,
                             bool train_mode, Rng* rng) {
  if (!train_mode) return op.fuse(x, y);
  if (!rng) throw std::invalid_argument("mfh_fuse: training mode requires an rng");
  return op.fuse_train(x, y, *rng);
}

}  // namespace fusionkit
