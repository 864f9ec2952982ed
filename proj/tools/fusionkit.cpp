// fusionkit command-line driver.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fusionkit/checkpoint.hpp"
#include "fusionkit/gradcheck.hpp"
#include "fusionkit/qa/train.hpp"

namespace fs = std::filesystem;
namespace qa = fusionkit::qa;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("FUSIONKIT_SEED");
  if (!s || !*s) return std::nullopt;
  return std::stoull(s);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int gen_data(const fs::path& spec_path, const fs::path& out) {
  auto spec = read_json(spec_path).get<qa::SyntheticTaskSpec>();
  if (auto s = env_seed()) spec.seed = *s;
  const auto data = qa::generate_dataset(spec);
  qa::save_dataset(data, out);
  std::cout << "wrote " << data.train.size() << " train / " << data.val.size() << " val examples to " << out.string()
            << "\nval oracle accuracy: bilinear " << data.val_oracle.bilinear << ", text-only "
            << data.val_oracle.text_only << '\n';
  return 0;
}

// cfg: {"seed", "data": spec | "data_dir": path, "model": {...}, "train": {...}}
int train(const fs::path& cfg_path, const fs::path& out) {
  const json cfg = read_json(cfg_path);
  std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
  if (auto s = env_seed()) seed = *s;

  qa::Dataset data;
  if (cfg.contains("data_dir")) {
    data = qa::load_dataset(cfg.at("data_dir").get<std::string>());
  } else {
    auto spec = cfg.value("data", json::object()).get<qa::SyntheticTaskSpec>();
    if (env_seed()) spec.seed = seed;
    data = qa::generate_dataset(spec);
  }
  auto model_cfg = cfg.value("model", json::object()).get<qa::ModelConfig>();
  auto train_cfg = cfg.value("train", json::object()).get<qa::TrainConfig>();
  model_cfg.seed = fusionkit::derive_seed(seed, 100);
  train_cfg.seed = fusionkit::derive_seed(seed, 1);

  qa::QAModel model(model_cfg, data.spec);
  qa::ComparisonResult result;
  result.data = data.spec;
  result.val_oracle = data.val_oracle;
  qa::ComparisonRow row;
  row.variant = model_cfg.variant;
  row.params = model.parameter_count();
  int status = 0;
  try {
    row.history = qa::fit(model, data, train_cfg);
  } catch (const qa::TrainingDiverged& e) {
    row.converged = false;
    row.failure = e.what();
    std::cerr << "training diverged: " << e.what() << '\n';
    status = 2;
  }
  result.rows.push_back(row);

  std::ostringstream metrics;
  qa::write_metrics_csv(result, metrics);
  write_file(out / "metrics.csv", metrics.str());
  json described = model.describe();
  described["train"] = train_cfg;
  fusionkit::save_checkpoint(out / "checkpoint", described, model.parameters());
  if (row.converged) {
    std::cout << "params " << row.params << ", final val accuracy " << row.val_acc() << '\n';
  }
  return status;
}

int eval(const fs::path& checkpoint, const fs::path& data_dir) {
  const json described = fusionkit::read_checkpoint_config(checkpoint);
  const auto data = qa::load_dataset(data_dir);
  const auto dims = described.at("dims").get<qa::SyntheticTaskSpec>();
  if (dims.frames != data.spec.frames || dims.visual_dim != data.spec.visual_dim ||
      dims.text_dim != data.spec.text_dim) {
    throw std::runtime_error("dataset dimensions do not match the checkpoint");
  }
  qa::QAModel model(described.at("model").get<qa::ModelConfig>(), dims);
  fusionkit::load_checkpoint(checkpoint, model.parameters());
  const json report = {{"train_acc", qa::evaluate(model, data.train)},
                       {"val_acc", qa::evaluate(model, data.val)},
                       {"val_oracle", {{"bilinear", data.val_oracle.bilinear}, {"text_only", data.val_oracle.text_only}}}};
  std::cout << report.dump(2) << '\n';
  return 0;
}

int gradcheck(const std::string& kind, std::optional<fs::path> spec_path, std::uint64_t seed) {
  fusionkit::FusionSpec spec;
  if (spec_path) {
    spec = read_json(*spec_path).get<fusionkit::FusionSpec>();
  } else {
    spec.left_dim = 8;
    spec.right_dim = 6;
    spec.output_dim = kind == "mlb" ? 4 : 6;
    spec.core_left = spec.core_right = spec.core_out = 3;
    spec.blocks = 2;
    spec.block_left = spec.block_right = spec.block_out = 2;
    spec.factors = 3;
  }
  spec.kind = kind;
  if (auto s = env_seed()) seed = *s;
  spec.seed = seed;
  auto op = fusionkit::make_fusion(spec);
  const auto report = fusionkit::grad_check(*op, fusionkit::derive_seed(seed, 1));
  std::cout << json(report).dump(2) << '\n';
  return report.passed() ? 0 : 1;
}

int compare(const fs::path& cfg_path, const fs::path& out) {
  auto cfg = read_json(cfg_path).get<qa::ComparisonConfig>();
  if (auto s = env_seed()) qa::apply_seed(cfg, *s);
  const auto result = qa::run_comparison(cfg);
  std::ostringstream table, metrics, md;
  qa::write_table_csv(result, table);
  qa::write_metrics_csv(result, metrics);
  qa::write_table_markdown(result, md);
  fs::path md_path = out, metrics_path = out;
  md_path.replace_extension(".md");
  metrics_path.replace_filename(out.stem().string() + "_metrics.csv");
  write_file(out, table.str());
  write_file(md_path, md.str());
  write_file(metrics_path, metrics.str());
  std::cout << md.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilinear fusion toolkit"};
  app.require_subcommand(1);

  std::string spec, out, config, checkpoint, data, op, op_spec;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic QA dataset");
  gen->add_option("--spec", spec, "SyntheticTaskSpec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config, "Training config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check of a fusion op");
  gc->add_option("--op", op, "Fusion kind")->required()->check(CLI::IsMember(fusionkit::fusion_kinds()));
  gc->add_option("--spec", op_spec, "FusionSpec JSON overriding the default small dims")->check(CLI::ExistingFile);
  gc->add_option("--seed", seed, "Seed");

  auto* cmp = app.add_subcommand("compare", "Train every variant of a comparison config");
  cmp->add_option("--config", config, "Comparison config JSON")->required()->check(CLI::ExistingFile);
  cmp->add_option("--out", out, "Output CSV; table.md and metrics CSV are written next to it")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return gen_data(spec, out);
    if (*tr) return train(config, out);
    if (*ev) return eval(checkpoint, data);
    if (*gc) return gradcheck(op, op_spec.empty() ? std::nullopt : std::optional<fs::path>(op_spec), seed);
    if (*cmp) return compare(config, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
