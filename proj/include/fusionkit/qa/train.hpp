#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusionkit/optim.hpp"
#include "fusionkit/qa/model.hpp"

namespace fusionkit::qa {

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer{"adam", 3e-3};
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Raised when a forward pass produces NaN or Inf. Names the op kind of the
/// first offending node.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(ad::OpKind kind, std::size_t epoch, std::size_t batch);
  ad::OpKind kind() const noexcept { return kind_; }

 private:
  ad::OpKind kind_;
};

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean task loss over the epoch
  double coordination_loss = 0.0;
  double val_acc = 0.0;
};

/// What the epoch optimizes. `coordination` trains only the DCCA encoders on
/// the coordination loss (pretraining).
enum class Objective { task, coordination };

/// One pass over `examples` in a seeded shuffled order. Throws
/// TrainingDiverged on non-finite values.
EpochReport train_epoch(QAModel& model, const std::vector<QAExample>& examples, Optimizer& optimizer,
                        std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
                        Objective objective = Objective::task);

/// Fraction of examples whose argmax vote (lowest index on ties) is the label.
double evaluate(QAModel& model, const std::vector<QAExample>& examples, std::size_t batch_size = 128);

/// Trains for config.epochs epochs (plus DCCA pretraining epochs when the
/// model asks for them) and records validation accuracy after each.
std::vector<EpochReport> fit(QAModel& model, const Dataset& data, const TrainConfig& config);

struct VariantSpec {
  std::string name;
  ModelConfig model;
  std::optional<OptimizerConfig> optimizer;  // overrides the shared optimizer
  bool match_budget = true;
};

struct ComparisonConfig {
  std::uint64_t seed = 0;
  SyntheticTaskSpec data;
  TrainConfig train;
  std::string reference = "concat";  // variant whose parameter count sets the budget
  double budget_tolerance = 0.1;
  std::vector<VariantSpec> variants;
};

void to_json(nlohmann::json& j, const ComparisonConfig& c);
void from_json(const nlohmann::json& j, ComparisonConfig& c);

/// Overrides every seed in the config with `seed`; data and model seeds are
/// derived from it.
void apply_seed(ComparisonConfig& config, std::uint64_t seed);

struct ComparisonRow {
  std::string variant;
  std::size_t params = 0;
  std::size_t hidden = 0;
  double budget_deviation = 0.0;  // (params - budget) / budget
  bool within_budget = true;
  bool converged = true;
  std::string failure;
  std::vector<EpochReport> history;
  std::optional<double> offset_vs_concat;  // accuracy points

  double val_acc() const { return history.empty() ? 0.0 : history.back().val_acc; }
};

struct ComparisonResult {
  SyntheticTaskSpec data;
  OracleAccuracy val_oracle;
  std::size_t budget = 0;
  std::vector<ComparisonRow> rows;

  const ComparisonRow* find(const std::string& variant) const;
};

ComparisonResult run_comparison(const ComparisonConfig& config);
ComparisonResult run_comparison(const ComparisonConfig& config, const Dataset& data);

/// variant,params,epoch,train_loss,val_acc,offset_vs_concat; one row per
/// variant at its final epoch.
void write_table_csv(const ComparisonResult& result, std::ostream& out);
/// Same columns, one row per variant per epoch.
void write_metrics_csv(const ComparisonResult& result, std::ostream& out);
void write_table_markdown(const ComparisonResult& result, std::ostream& out);

}  // namespace fusionkit::qa
