// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance            run all criteria
//   acceptance --only N   run criterion N (9 and 10 share the compare runs)

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "fusionkit/cca.hpp"
#include "fusionkit/factorized.hpp"
#include "fusionkit/gradcheck.hpp"
#include "fusionkit/optim.hpp"
#include "fusionkit/qa/train.hpp"
#include "fusionkit/sketch.hpp"
#include "fusionkit/tucker_block.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
namespace qa = fusionkit::qa;
using fusionkit::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Eigen::MatrixXd eig(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
  return m;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1. mfb(k=1) == mlb(none); mfh(p=1, dropout 0) == mfb. 1e-12, < 1 s.
Outcome operator_equivalences() {
  std::mt19937_64 gen(101);
  double worst_mlb = 0.0, worst_mfh = 0.0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto mfb1 = fusionkit::MfbOp::random(7, 5, 4, 1, t);
    const fusionkit::MlbOp mlb(mfb1.x_factors(), mfb1.y_factors(), fusionkit::Activation::none);
    const auto x = oracle::random_vector(7, gen), y = oracle::random_vector(5, gen);
    worst_mlb = std::max(worst_mlb, oracle::max_abs_diff(fusionkit::mfb_fuse(mfb1, x, y), fusionkit::mlb_fuse(mlb, x, y)));

    const auto mfb = fusionkit::MfbOp::random(7, 5, 4, 3, 1000 + t);
    const fusionkit::MfhOp mfh({mfb}, 0.0);
    worst_mfh = std::max(worst_mfh, oracle::max_abs_diff(fusionkit::mfh_fuse(mfh, x, y), fusionkit::mfb_fuse(mfb, x, y)));
  }
  return {worst_mlb <= 1e-12 && worst_mfh <= 1e-12,
          "max |mfb(k=1) - mlb| " + fmt("%.2e", worst_mlb) + ", max |mfh(p=1) - mfb| " + fmt("%.2e", worst_mfh) +
              " (limit 1e-12, 100 instances)"};
}

// 2. mcb equals the induced pair-hash count sketch, 4x4, d = 8, 100 seeds, 1e-6.
Outcome mcb_identity() {
  std::mt19937_64 gen(102);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const fusionkit::McbOp op(seed, 4, 4, 8);
    const auto x = oracle::random_vector(4, gen), y = oracle::random_vector(4, gen);
    const auto& px = op.plan_x();
    const auto& py = op.plan_y();
    const auto ref = oracle::induced_outer_sketch({px.index_map().begin(), px.index_map().end()},
                                                  {px.sign_map().begin(), px.sign_map().end()},
                                                  {py.index_map().begin(), py.index_map().end()},
                                                  {py.sign_map().begin(), py.sign_map().end()}, 8, x, y);
    worst = std::max(worst, oracle::rel_error(fusionkit::mcb_fuse(op, x, y), ref));
  }
  return {worst <= 1e-6, "max relative error " + fmt("%.2e", worst) + " over 100 seeds (limit 1e-6)"};
}

// 3. Separate linearity of every bilinear op, 50 instances each, 1e-9.
Outcome bilinearity() {
  std::mt19937_64 gen(103);
  const std::size_t m = 6, n = 5, o = 4;
  std::map<std::string, double> worst;
  for (std::uint64_t t = 0; t < 50; ++t) {
    const Tensor w = oracle::random_tensor({m, n, o}, gen);
    const auto mlb = fusionkit::MlbOp::random(m, n, o, t, fusionkit::Activation::none);
    const auto mfb = fusionkit::MfbOp::random(m, n, o, 3, t);
    const auto tucker = fusionkit::TuckerOp::random(m, n, o, 3, 3, 3, t);
    const auto block = fusionkit::BlockOp::random(m, n, o, 2, 2, 2, 2, t);
    const fusionkit::McbOp mcb(t, m, n, 8);
    const std::map<std::string, std::function<oracle::Vec(const oracle::Vec&, const oracle::Vec&)>> ops = {
        {"full_bilinear", [&](const auto& x, const auto& y) { return fusionkit::full_bilinear(x, y, w); }},
        {"mlb", [&](const auto& x, const auto& y) { return fusionkit::mlb_fuse(mlb, x, y); }},
        {"mfb", [&](const auto& x, const auto& y) { return fusionkit::mfb_fuse(mfb, x, y); }},
        {"tucker", [&](const auto& x, const auto& y) { return fusionkit::tucker_fuse(tucker, x, y); }},
        {"block", [&](const auto& x, const auto& y) { return fusionkit::block_fuse(block, x, y); }},
        {"mcb", [&](const auto& x, const auto& y) { return fusionkit::mcb_fuse(mcb, x, y); }},
    };
    for (const auto& [name, f] : ops) worst[name] = std::max(worst[name], oracle::linearity_error(f, m, n, gen));
  }
  bool pass = true;
  std::string detail;
  for (const auto& [name, e] : worst) {
    pass &= e <= 1e-9;
    detail += (detail.empty() ? "" : ", ") + name + " " + fmt("%.1e", e);
  }
  return {pass, detail + " (limit 1e-9)"};
}

// 4. Mode-n ranks of reconstructed BLOCK tensors are at most R * R_n.
Outcome rank_bounds() {
  std::mt19937_64 gen(104);
  std::uniform_int_distribution<std::size_t> blocks(1, 3), rank(1, 3);
  std::size_t violations = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const std::size_t r = blocks(gen), r1 = rank(gen), r2 = rank(gen), r3 = rank(gen);
    const auto op = fusionkit::BlockOp::random(6, 6, 4, r, r1, r2, r3, t);
    const Tensor w = fusionkit::reconstruct_block_tensor(op);
    const std::size_t bound[] = {r * r1, r * r2, r * r3};
    for (std::size_t mode = 1; mode <= 3; ++mode) {
      const std::size_t k = oracle::jacobi_rank(fusionkit::matricize(w, mode).matrix);
      if (k > bound[mode - 1]) ++violations;
    }
  }
  return {violations == 0, std::to_string(violations) + " violations over 20 configs x 3 modes"};
}

// 5. cca_fit vs the generalized-eigen oracle, and invariance, both 1e-6.
Outcome cca_correctness() {
  const auto [x0, x1] = fusionkit::correlated_views(500, 5, 3, 1.0, 7);
  double oracle_err = 0.0, invariance_err = 0.0;
  for (double r : {0.0, 1e-4}) {
    const auto s = fusionkit::cca_fit(x0, x1, 5, r);
    const auto ref = oracle::generalized_eigen_cca(eig(x0), eig(x1), 5, r);
    for (std::size_t i = 0; i < 5; ++i) oracle_err = std::max(oracle_err, std::abs(s.correlations[i] - ref[i]));
  }
  std::mt19937_64 gen(105);
  const Tensor a = oracle::random_tensor({5, 5}, gen), b = oracle::random_tensor({5, 5}, gen);
  const auto base = fusionkit::cca_fit(x0, x1, 5, 0.0);
  const auto t0 = fusionkit::cca_fit(fusionkit::matmul(x0, a), x1, 5, 0.0);
  const auto t1 = fusionkit::cca_fit(x0, fusionkit::matmul(x1, b), 5, 0.0);
  for (std::size_t i = 0; i < 5; ++i) {
    invariance_err = std::max({invariance_err, std::abs(t0.correlations[i] - base.correlations[i]),
                               std::abs(t1.correlations[i] - base.correlations[i])});
  }
  return {oracle_err <= 1e-6 && invariance_err <= 1e-6,
          "oracle gap " + fmt("%.2e", oracle_err) + ", transform invariance gap " + fmt("%.2e", invariance_err) +
              " (limit 1e-6)"};
}

// 6. Linear DCCA reaches the linear CCA sum within 0.02 in <= 2000 full-batch steps.
Outcome dcca_convergence() {
  const auto [x0, x1] = fusionkit::correlated_views(500, 5, 3, 1.0, 7);
  const std::size_t c = 3;
  const auto lin = fusionkit::cca_fit(x0, x1, c);
  double target = 0.0;
  for (double r : lin.correlations) target += r;

  auto model = fusionkit::DccaModel::random(5, 5, fusionkit::Activation::none, 106);
  const auto params = model.parameters();
  // Collapsed start: encoder outputs are ~1e-6, so the ridge term dominates
  // and the correlations begin far below the optimum.
  for (auto* p : params)
    for (double& v : p->value.data()) v *= 1e-3;
  fusionkit::Optimizer opt({"adam", 1e-3});
  double first = 0.0, sum = 0.0;
  std::size_t steps = 0;
  for (; steps < 2000; ++steps) {
    fusionkit::Optimizer::zero_grad(params);
    sum = -fusionkit::dcca_objective(model, x0, x1, c);
    if (steps == 0) first = sum;
    if (target - sum <= 0.02) break;
    opt.step(params);
  }
  const double gap = target - sum;
  return {gap <= 0.02, "linear CCA sum " + fmt("%.6f", target) + ", DCCA sum " + fmt("%.6f", first) + " at step 0, " +
                           fmt("%.6f", sum) + " after " + std::to_string(steps) + " steps (gap " +
                           fmt("%.2e", gap) + ", limit 0.02)"};
}

// 7. grad_check of every fusion op at 1e-4 on <= 200 coordinates.
Outcome gradient_checks() {
  bool pass = true;
  std::string detail;
  for (const auto& kind : fusionkit::fusion_kinds()) {
    fusionkit::FusionSpec spec;
    spec.kind = kind;
    spec.left_dim = 16;
    spec.right_dim = 16;
    spec.output_dim = kind == "mlb" ? 15 : 32;
    spec.factors = 2;
    spec.units = 2;
    spec.core_left = spec.core_right = spec.core_out = 8;
    spec.blocks = 4;
    spec.block_left = spec.block_right = 4;
    spec.block_out = 8;
    spec.seed = 107;
    auto op = fusionkit::make_fusion(spec);
    const auto report = fusionkit::grad_check(*op, 108);
    std::size_t checked = 0;
    for (const auto& b : report.blocks) checked += b.checked;
    const bool ok = report.passed() && checked <= 200;
    pass &= ok;
    detail += (detail.empty() ? "" : ", ") + kind + " " + fmt("%.1e", report.max_rel_error()) + "/" +
              std::to_string(checked);
  }
  return {pass, "max rel error/coordinates: " + detail + " (limit 1e-4, 200)"};
}

qa::ComparisonResult run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing config " + path.string());
  return qa::run_comparison(nlohmann::json::parse(in).get<qa::ComparisonConfig>());
}

// 8. beta = 0: the best bilinear variant >= concat + 5 points; beta = 1: concat and
// that variant within 10 points of the text-only oracle.
Outcome separation() {
  const fs::path configs = fs::path(FUSIONKIT_SOURCE_DIR) / "configs";
  const auto r0 = run_config(configs / "separation_beta0.json");
  const auto r1 = run_config(configs / "separation_beta1.json");

  const auto* concat0 = r0.find("concat");
  double best = -1.0;
  std::string best_name;
  for (const auto& row : r0.rows) {
    if (row.variant == "concat" || !row.converged) continue;
    if (row.val_acc() > best) {
      best = row.val_acc();
      best_name = row.variant;
    }
  }
  const bool separated = concat0 && concat0->converged && best >= concat0->val_acc() + 0.05;

  const double text_oracle = r1.val_oracle.text_only;
  bool text_ok = true;
  std::string text_detail;
  for (const std::string& name : {std::string("concat"), best_name}) {
    const auto* row = r1.find(name);
    text_ok &= row && row->converged && row->val_acc() >= text_oracle - 0.10;
    text_detail += (text_detail.empty() ? "" : ", ") + name + " " + fmt("%.3f", row ? row->val_acc() : 0.0);
  }
  std::string detail = "beta=0: concat " + fmt("%.3f", concat0 ? concat0->val_acc() : 0.0) + ", best bilinear " +
                       best_name + " " + fmt("%.3f", best) + " (need +0.050); beta=1: text oracle " +
                       fmt("%.3f", text_oracle) + ", " + text_detail + " (need >= oracle - 0.100)";
  return {separated && text_ok, detail};
}

// 9 and 10: `compare --config table2_analog.json`, run twice through the CLI.
struct CompareRuns {
  bool ran = false;
  std::string csv[2];
  std::string md;
  int status[2] = {0, 0};
};

CompareRuns& compare_runs() {
  static CompareRuns runs;
  if (runs.ran) return runs;
  runs.ran = true;
  const fs::path config = fs::path(FUSIONKIT_SOURCE_DIR) / "configs" / "table2_analog.json";
  const fs::path dir = fs::temp_directory_path() / "fusionkit_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (int i = 0; i < 2; ++i) {
    const fs::path out = dir / ("run" + std::to_string(i)) / "table.csv";
    const std::string cmd = std::string("\"") + FUSIONKIT_CLI + "\" compare --config \"" + config.string() +
                            "\" --out \"" + out.string() + "\" > /dev/null";
    runs.status[i] = std::system(cmd.c_str());
    runs.csv[i] = read_file(out);
    if (i == 0) runs.md = read_file(dir / "run0" / "table.md");
  }
  return runs;
}

Outcome determinism() {
  const auto& r = compare_runs();
  const bool same = r.status[0] == 0 && r.status[1] == 0 && !r.csv[0].empty() && r.csv[0] == r.csv[1];
  return {same, std::to_string(r.csv[0].size()) + " CSV bytes, runs " + (same ? "identical" : "differ or failed")};
}

Outcome table2_analog() {
  const auto& r = compare_runs();
  const bool header = r.md.find("| Variant | Params | Budget deviation | Val accuracy | Offset vs concat |") !=
                      std::string::npos;
  const bool no_convergence = r.md.find("No Convergence") != std::string::npos;
  const bool csv_header = r.csv[0].rfind("variant,params,epoch,train_loss,val_acc,offset_vs_concat\n", 0) == 0;
  std::size_t rows = 0;
  for (char ch : r.csv[0]) rows += ch == '\n';
  return {r.status[0] == 0 && header && no_convergence && csv_header,
          std::to_string(rows > 0 ? rows - 1 : 0) + " variant rows, table header " + (header ? "ok" : "missing") +
              ", No Convergence row " + (no_convergence ? "present" : "missing")};
}

struct Criterion {
  int id;
  const char* name;
  double cpu_limit;  // seconds
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc == 3 && std::string(argv[1]) == "--only") only = std::atoi(argv[2]);

  const Criterion criteria[] = {
      {1, "operator equivalences", 1.0, operator_equivalences},
      {2, "MCB structural identity", 5.0, mcb_identity},
      {3, "bilinearity suite", 10.0, bilinearity},
      {4, "BLOCK rank bounds", 10.0, rank_bounds},
      {5, "CCA correctness", 5.0, cca_correctness},
      {6, "DCCA convergence", 60.0, dcca_convergence},
      {7, "gradient checks", 60.0, gradient_checks},
      {8, "synthetic separation", 600.0, separation},
      {9, "compare determinism", 0.0, determinism},
      {10, "Table 2 analog", 0.0, table2_analog},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const std::clock_t start = std::clock();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double cpu = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
    const bool in_time = c.cpu_limit == 0.0 || cpu < c.cpu_limit;
    if (!in_time) o.detail += "; over the " + fmt("%.0f", c.cpu_limit) + " s limit";
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("criterion %2d %s  %s: %s [%.2f s cpu]\n", c.id, pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), cpu);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
