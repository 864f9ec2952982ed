#include "fusionkit/sketch.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>

namespace fusionkit {

namespace {

constexpr double kSqrtEps = 1e-12;
constexpr double kNormEps = 1e-12;

// FFTW planning is not thread-safe; execution with the new-array interface is.
// Plans are created once per length and shared.
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const FftPlans& plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, FftPlans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  const int len = static_cast<int>(n);
  std::vector<double> real(n);
  std::vector<fftw_complex> spec(n / 2 + 1);
  FftPlans p;
  p.forward = fftw_plan_dft_r2c_1d(len, real.data(), spec.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.inverse = fftw_plan_dft_c2r_1d(len, spec.data(), real.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  return cache.emplace(n, p).first->second;
}

using Spectrum = std::vector<std::complex<double>>;

Spectrum rfft(std::span<const double> x) {
  const auto& p = plans_for(x.size());
  std::vector<double> in(x.begin(), x.end());
  Spectrum out(x.size() / 2 + 1);
  fftw_execute_dft_r2c(p.forward, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> irfft(Spectrum spec, std::size_t n) {
  const auto& p = plans_for(n);
  std::vector<double> out(n);
  fftw_execute_dft_c2r(p.inverse, reinterpret_cast<fftw_complex*>(spec.data()), out.data());
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= inv;
  return out;
}

void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " must match and be non-zero");
  }
}

double signed_sqrt(double v) {
  const double base = std::sqrt(kSqrtEps);
  return v >= 0.0 ? std::sqrt(v + kSqrtEps) - base : base - std::sqrt(-v + kSqrtEps);
}

}  // namespace

SketchPlan::SketchPlan(std::uint64_t seed, std::size_t input_dim, std::size_t sketch_dim)
    : seed_(seed), sketch_dim_(sketch_dim), index_(input_dim), sign_(input_dim) {
  if (input_dim == 0 || sketch_dim == 0) {
    throw ShapeError("sketch plan dimensions must be positive");
  }
  for (std::size_t i = 0; i < input_dim; ++i) {
    const std::uint64_t h = counter_draw(seed, 2 * i);
    const std::uint64_t s = counter_draw(seed, 2 * i + 1);
    index_[i] = static_cast<std::size_t>((static_cast<unsigned __int128>(h) * sketch_dim) >> 64);
    sign_[i] = (s >> 63) ? 1 : -1;
  }
}

void to_json(nlohmann::json& j, const SketchPlan& p) {
  j = nlohmann::json{{"seed", p.seed()}, {"input_dim", p.input_dim()}, {"d", p.sketch_dim()}};
}

SketchPlan sketch_plan_from_json(const nlohmann::json& j) {
  return SketchPlan(j.at("seed").get<std::uint64_t>(), j.at("input_dim").get<std::size_t>(),
                    j.at("d").get<std::size_t>());
}

std::vector<double> count_sketch(const SketchPlan& plan, std::span<const double> x) {
  if (x.size() != plan.input_dim()) {
    throw ShapeError("count_sketch: input of size " + std::to_string(x.size()) +
                     " but plan expects " + std::to_string(plan.input_dim()));
  }
  std::vector<double> out(plan.sketch_dim(), 0.0);
  const auto h = plan.index_map();
  const auto s = plan.sign_map();
  for (std::size_t i = 0; i < x.size(); ++i) out[h[i]] += s[i] * x[i];
  return out;
}

std::vector<double> circular_convolve(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "circular_convolve");
  Spectrum fa = rfft(a);
  const Spectrum fb = rfft(b);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  return irfft(std::move(fa), a.size());
}

std::vector<double> circular_correlate(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "circular_correlate");
  Spectrum fa = rfft(a);
  const Spectrum fb = rfft(b);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= std::conj(fb[k]);
  return irfft(std::move(fa), a.size());
}

McbOp::McbOp(SketchPlan plan_x, SketchPlan plan_y, bool normalize)
    : plan_x_(std::move(plan_x)), plan_y_(std::move(plan_y)), normalize_(normalize) {
  if (plan_x_.sketch_dim() != plan_y_.sketch_dim()) {
    throw ShapeError("McbOp: sketch dims differ (" + std::to_string(plan_x_.sketch_dim()) +
                     " vs " + std::to_string(plan_y_.sketch_dim()) + ")");
  }
}

McbOp::McbOp(std::uint64_t seed, std::size_t left_dim, std::size_t right_dim,
             std::size_t sketch_dim, bool normalize)
    : McbOp(SketchPlan(derive_seed(seed, 1), left_dim, sketch_dim),
            SketchPlan(derive_seed(seed, 2), right_dim, sketch_dim), normalize) {}

std::vector<double> McbOp::fuse(std::span<const double> x, std::span<const double> y) const {
  check_inputs(x, y);
  auto z = circular_convolve(count_sketch(plan_x_, x), count_sketch(plan_y_, y));
  if (normalize_) {
    double norm = kNormEps;
    for (auto& v : z) {
      v = signed_sqrt(v);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : z) v /= norm;
  }
  return z;
}

ad::Var McbOp::forward(ad::Var x, ad::Var y, const ForwardContext&) {
  check_inputs(x, y);
  ad::Var z = ad::circular_convolve(ad::sketch_project(x, plan_x_), ad::sketch_project(y, plan_y_));
  if (normalize_) z = ad::l2_normalize_rows(ad::signed_sqrt(z, kSqrtEps), kNormEps);
  return z;
}

nlohmann::json McbOp::config() const {
  return {{"kind", kind()}, {"plan_x", plan_x_}, {"plan_y", plan_y_}, {"normalize", normalize_}};
}

std::vector<double> mcb_fuse(const McbOp& op, std::span<const double> x, std::span<const double> y) {
  return op.fuse(x, y);
}

namespace ad {

Var sketch_project(Var x, const SketchPlan& plan) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != plan.input_dim()) {
    throw ShapeError("sketch_project: input " + shape_string(xv.shape()) + " but plan expects " +
                     std::to_string(plan.input_dim()) + " columns");
  }
  const std::size_t d = plan.sketch_dim(), n = plan.input_dim();
  std::vector<std::size_t> h(plan.index_map().begin(), plan.index_map().end());
  std::vector<int> s(plan.sign_map().begin(), plan.sign_map().end());
  Tensor out({xv.rows(), d});
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t i = 0; i < n; ++i) out(r, h[i]) += s[i] * xv(r, i);
  const std::size_t ix = x.id();
  return tape.record(OpKind::sketch_project, {ix}, std::move(out),
                     [ix, n, h = std::move(h), s = std::move(s)](Tape& t, std::size_t self) {
                       if (!t.needs_grad(ix)) return;
                       const Tensor& g = t.grad(self);
                       Tensor& gx = t.grad_buffer(ix);
                       for (std::size_t r = 0; r < g.rows(); ++r)
                         for (std::size_t i = 0; i < n; ++i) gx(r, i) += s[i] * g(r, h[i]);
                     });
}

Var circular_convolve(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("operands live on different tapes");
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape() || av.rank() != 2) {
    throw ShapeError("circular_convolve: shapes " + shape_string(av.shape()) + " and " +
                     shape_string(bv.shape()) + " must match");
  }
  const std::size_t d = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = fusionkit::circular_convolve(av.data().subspan(r * d, d), bv.data().subspan(r * d, d));
    std::copy(row.begin(), row.end(), out.values().begin() + r * d);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::circular_convolve, {ia, ib}, std::move(out), [ia, ib, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (auto [target, other] : {std::pair{ia, ib}, std::pair{ib, ia}}) {
      if (!t.needs_grad(target)) continue;
      const Tensor& ov = t.value(other);
      Tensor& gt = t.grad_buffer(target);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const auto row = circular_correlate(g.data().subspan(r * d, d), ov.data().subspan(r * d, d));
        for (std::size_t j = 0; j < d; ++j) gt(r, j) += row[j];
      }
    }
  });
}

}  // namespace ad

}  // namespace fusionkit
