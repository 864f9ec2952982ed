#include "fusionkit/tucker_block.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "fusionkit/factorized.hpp"

namespace fusionkit {

namespace {

// out[k] = sum_ij core(i, j, k) a[i] b[j]
std::vector<double> contract_core(const Tensor& core, std::span<const double> a, std::span<const double> b) {
  const std::size_t t1 = core.dim(0), t2 = core.dim(1), t3 = core.dim(2);
  std::vector<double> out(t3, 0.0);
  for (std::size_t i = 0; i < t1; ++i)
    for (std::size_t j = 0; j < t2; ++j) {
      const double ab = a[i] * b[j];
      for (std::size_t k = 0; k < t3; ++k) out[k] += core(i, j, k) * ab;
    }
  return out;
}

void require_shape(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

}  // namespace

Tensor orthonormal(std::size_t rows, std::size_t cols, Rng& rng) {
  const bool tall = rows > cols;
  const std::size_t big = tall ? rows : cols, small = tall ? cols : rows;
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Fix the sign ambiguity so the draw is a deterministic function of g.
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = tall ? q(i, j) : q(j, i);
  return out;
}

// ---------------------------------------------------------------------------
// Tucker

TuckerOp::TuckerOp(Tensor core, Tensor w_q, Tensor w_v, Tensor w_o)
    : core_("tucker.core", std::move(core)),
      w_q_("tucker.w_q", std::move(w_q)),
      w_v_("tucker.w_v", std::move(w_v)),
      w_o_("tucker.w_o", std::move(w_o)) {
  require_shape(core_.value, 3, "TuckerOp core");
  require_shape(w_q_.value, 2, "TuckerOp W_q");
  require_shape(w_v_.value, 2, "TuckerOp W_v");
  require_shape(w_o_.value, 2, "TuckerOp W_o");
  const auto& c = core_.value;
  if (w_q_.value.cols() != c.dim(0) || w_v_.value.cols() != c.dim(1) || w_o_.value.rows() != c.dim(2)) {
    throw ShapeError("TuckerOp: core " + shape_string(c.shape()) + " incompatible with W_q " +
                     shape_string(w_q_.value.shape()) + ", W_v " + shape_string(w_v_.value.shape()) +
                     ", W_o " + shape_string(w_o_.value.shape()));
  }
}

TuckerOp TuckerOp::random(std::size_t d_q, std::size_t d_v, std::size_t o, std::size_t t1, std::size_t t2,
                          std::size_t t3, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w_q = orthonormal(d_q, t1, rng);
  Tensor w_v = orthonormal(d_v, t2, rng);
  Tensor w_o = orthonormal(t3, o, rng);
  Tensor core = fan_in_uniform(t1 * t2, t3, t1 * t2, rng).reshaped({t1, t2, t3});
  return TuckerOp(std::move(core), std::move(w_q), std::move(w_v), std::move(w_o));
}

std::vector<double> TuckerOp::fuse(std::span<const double> q, std::span<const double> v) const {
  check_inputs(q, v);
  const auto h = contract_core(core_.value, vecmat(q, w_q_.value), vecmat(v, w_v_.value));
  return vecmat(h, w_o_.value);
}

ad::Var TuckerOp::forward(ad::Var q, ad::Var v, const ForwardContext&) {
  check_inputs(q, v);
  ad::Tape& tape = *q.tape();
  const auto& c = core_.value;
  ad::Var pq = ad::matmul(q, tape.param(w_q_));
  ad::Var pv = ad::matmul(v, tape.param(w_v_));
  ad::Var core = ad::reshape(tape.param(core_), {c.dim(0) * c.dim(1), c.dim(2)});
  ad::Var h = ad::matmul(ad::row_outer(pq, pv), core);
  return ad::matmul(h, tape.param(w_o_));
}

nlohmann::json TuckerOp::config() const {
  const auto& c = core_.value;
  return {{"kind", kind()},       {"left_dim", left_dim()},   {"right_dim", right_dim()},
          {"output_dim", output_dim()}, {"core_left", c.dim(0)}, {"core_right", c.dim(1)},
          {"core_out", c.dim(2)}};
}

Tensor TuckerOp::reconstruct() const {
  Tensor w = mode_n_product(core_.value, w_q_.value, 1);
  w = mode_n_product(w, w_v_.value, 2);
  return mode_n_product(w, transpose(w_o_.value), 3);
}

// ---------------------------------------------------------------------------
// BLOCK

BlockOp::BlockOp(std::vector<Tensor> cores, Tensor u1, Tensor u2, Tensor u3)
    : u1_("block.u1", std::move(u1)), u2_("block.u2", std::move(u2)), u3_("block.u3", std::move(u3)) {
  if (cores.empty()) throw ShapeError("BlockOp: at least one block is required");
  require_shape(u1_.value, 2, "BlockOp U1");
  require_shape(u2_.value, 2, "BlockOp U2");
  require_shape(u3_.value, 2, "BlockOp U3");
  const Shape block_shape = cores.front().shape();
  for (std::size_t r = 0; r < cores.size(); ++r) {
    require_shape(cores[r], 3, "BlockOp core");
    if (cores[r].shape() != block_shape) {
      throw ShapeError("BlockOp: core " + std::to_string(r) + " has shape " +
                       shape_string(cores[r].shape()) + ", expected " + shape_string(block_shape));
    }
    cores_.emplace_back("block.core" + std::to_string(r), std::move(cores[r]));
  }
  const std::size_t R = cores_.size();
  if (u1_.value.rows() != R * block_shape[0] || u2_.value.rows() != R * block_shape[1] ||
      u3_.value.cols() != R * block_shape[2]) {
    throw ShapeError("BlockOp: " + std::to_string(R) + " blocks of " + shape_string(block_shape) +
                     " incompatible with U1 " + shape_string(u1_.value.shape()) + ", U2 " +
                     shape_string(u2_.value.shape()) + ", U3 " + shape_string(u3_.value.shape()));
  }
}

BlockOp BlockOp::random(std::size_t m, std::size_t n, std::size_t o, std::size_t blocks, std::size_t r1,
                        std::size_t r2, std::size_t r3, std::uint64_t seed) {
  if (blocks == 0) throw ShapeError("BlockOp: at least one block is required");
  Rng rng(seed);
  Tensor u1({blocks * r1, m}), u2({blocks * r2, n}), u3({o, blocks * r3});
  for (std::size_t r = 0; r < blocks; ++r) {
    const Tensor a = orthonormal(r1, m, rng);
    const Tensor b = orthonormal(r2, n, rng);
    const Tensor c = orthonormal(o, r3, rng);
    for (std::size_t i = 0; i < r1; ++i)
      for (std::size_t j = 0; j < m; ++j) u1(r * r1 + i, j) = a(i, j);
    for (std::size_t i = 0; i < r2; ++i)
      for (std::size_t j = 0; j < n; ++j) u2(r * r2 + i, j) = b(i, j);
    for (std::size_t i = 0; i < o; ++i)
      for (std::size_t j = 0; j < r3; ++j) u3(i, r * r3 + j) = c(i, j);
  }
  std::vector<Tensor> cores;
  for (std::size_t r = 0; r < blocks; ++r) {
    cores.push_back(fan_in_uniform(r1 * r2, r3, r1 * r2, rng).reshaped({r1, r2, r3}));
  }
  return BlockOp(std::move(cores), std::move(u1), std::move(u2), std::move(u3));
}

std::vector<double> BlockOp::fuse(std::span<const double> x, std::span<const double> y) const {
  check_inputs(x, y);
  const std::size_t r1 = block_left(), r2 = block_right(), r3 = block_out();
  const auto xh = matvec(u1_.value, x);
  const auto yh = matvec(u2_.value, y);
  std::vector<double> zh;
  zh.reserve(blocks() * r3);
  for (std::size_t r = 0; r < blocks(); ++r) {
    const auto zr = contract_core(cores_[r].value, std::span(xh).subspan(r * r1, r1),
                                  std::span(yh).subspan(r * r2, r2));
    zh.insert(zh.end(), zr.begin(), zr.end());
  }
  return matvec(u3_.value, zh);
}

ad::Var BlockOp::forward(ad::Var x, ad::Var y, const ForwardContext&) {
  check_inputs(x, y);
  ad::Tape& tape = *x.tape();
  const std::size_t r1 = block_left(), r2 = block_right(), r3 = block_out();
  ad::Var xh = ad::matmul(x, ad::transpose(tape.param(u1_)));
  ad::Var yh = ad::matmul(y, ad::transpose(tape.param(u2_)));
  std::vector<ad::Var> parts;
  for (std::size_t r = 0; r < blocks(); ++r) {
    ad::Var outer = ad::row_outer(ad::slice_cols(xh, r * r1, (r + 1) * r1),
                                  ad::slice_cols(yh, r * r2, (r + 1) * r2));
    parts.push_back(ad::matmul(outer, ad::reshape(tape.param(cores_[r]), {r1 * r2, r3})));
  }
  ad::Var zh = parts.size() == 1 ? parts.front() : ad::concat_cols(parts);
  return ad::matmul(zh, ad::transpose(tape.param(u3_)));
}

ad::ParameterList BlockOp::parameters() {
  ad::ParameterList out;
  for (auto& c : cores_) out.push_back(&c);
  out.push_back(&u1_);
  out.push_back(&u2_);
  out.push_back(&u3_);
  return out;
}

nlohmann::json BlockOp::config() const {
  return {{"kind", kind()},          {"left_dim", left_dim()},       {"right_dim", right_dim()},
          {"output_dim", output_dim()}, {"blocks", blocks()},        {"block_left", block_left()},
          {"block_right", block_right()}, {"block_out", block_out()}};
}

std::vector<double> tucker_fuse(const TuckerOp& op, std::span<const double> q, std::span<const double> v) {
  return op.fuse(q, v);
}

std::vector<double> block_fuse(const BlockOp& op, std::span<const double> x, std::span<const double> y) {
  return op.fuse(x, y);
}

Tensor reconstruct_block_tensor(const BlockOp& op) {
  const std::size_t m = op.left_dim(), n = op.right_dim(), o = op.output_dim();
  if (m * n * o > kMaxReconstructEntries) {
    throw std::length_error("reconstruct_block_tensor: " + std::to_string(m * n * o) +
                            " entries exceeds the limit of " + std::to_string(kMaxReconstructEntries));
  }
  const std::size_t r1 = op.block_left(), r2 = op.block_right(), r3 = op.block_out();
  Tensor w({m, n, o});
  for (std::size_t r = 0; r < op.blocks(); ++r) {
    Tensor u1r({m, r1}), u2r({n, r2}), u3r({o, r3});
    for (std::size_t i = 0; i < r1; ++i)
      for (std::size_t a = 0; a < m; ++a) u1r(a, i) = op.u1()(r * r1 + i, a);
    for (std::size_t j = 0; j < r2; ++j)
      for (std::size_t b = 0; b < n; ++b) u2r(b, j) = op.u2()(r * r2 + j, b);
    for (std::size_t c = 0; c < o; ++c)
      for (std::size_t k = 0; k < r3; ++k) u3r(c, k) = op.u3()(c, r * r3 + k);
    Tensor term = mode_n_product(op.core(r), u1r, 1);
    term = mode_n_product(term, u2r, 2);
    term = mode_n_product(term, u3r, 3);
    w = w + term;
  }
  return w;
}

}  // namespace fusionkit
