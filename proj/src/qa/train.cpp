#include "fusionkit/qa/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace fusionkit::qa {

namespace {

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void check_finite(const ad::Tape& tape, std::size_t epoch, std::size_t batch) {
  if (const auto kind = tape.first_nonfinite()) throw TrainingDiverged(*kind, epoch, batch);
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"optimizer", c.optimizer}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.optimizer = j.contains("optimizer") ? j.at("optimizer").get<OptimizerConfig>() : d.optimizer;
  c.seed = j.value("seed", d.seed);
}

TrainingDiverged::TrainingDiverged(ad::OpKind kind, std::size_t epoch, std::size_t batch)
    : std::runtime_error("non-finite value first produced by a " + std::string(ad::op_name(kind)) +
                         " node (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")"),
      kind_(kind) {}

EpochReport train_epoch(QAModel& model, const std::vector<QAExample>& examples, Optimizer& optimizer,
                        std::size_t batch_size, std::uint64_t seed, std::size_t epoch, Objective objective) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  Rng rng(derive_seed(seed, epoch));
  const auto order = shuffled(examples.size(), rng);
  const auto all = model.parameters();
  const auto trained = objective == Objective::task ? all : model.coordination_parameters();
  const bool joint = model.config().variant == "dcca" && model.config().dcca_mode == "joint";
  const ForwardContext ctx{true, &rng};

  EpochReport report;
  report.epoch = epoch;
  std::size_t batches = 0;
  for (std::size_t start = 0, k = 0; start < order.size(); start += batch_size, ++k) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const Batch batch = make_batch(examples, std::span(order).subspan(start, end - start));
    Optimizer::zero_grad(all);
    ad::Tape tape;
    const ForwardResult r = model.forward(tape, batch, ctx);
    const ad::Var task = ad::cross_entropy(r.votes, batch.labels);
    ad::Var loss = task;
    if (objective == Objective::coordination) {
      if (!r.coordination) continue;
      loss = *r.coordination;
    } else if (joint && r.coordination) {
      loss = ad::add(task, ad::scale(*r.coordination, model.config().dcca_weight));
    }
    check_finite(tape, epoch, k);
    tape.backward(loss);
    optimizer.step(trained);
    report.train_loss += task.value()[0];
    if (r.coordination) report.coordination_loss += r.coordination->value()[0];
    ++batches;
  }
  if (batches > 0) {
    report.train_loss /= static_cast<double>(batches);
    report.coordination_loss /= static_cast<double>(batches);
  }
  return report;
}

double evaluate(QAModel& model, const std::vector<QAExample>& examples, std::size_t batch_size) {
  if (examples.empty()) return 0.0;
  std::vector<std::size_t> all(examples.size());
  std::iota(all.begin(), all.end(), 0);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < all.size(); start += batch_size) {
    const std::size_t end = std::min(all.size(), start + batch_size);
    const Batch batch = make_batch(examples, std::span(all).subspan(start, end - start));
    ad::Tape tape;
    const Tensor& votes = model.forward(tape, batch).votes.value();
    check_finite(tape, 0, start / batch_size);
    for (std::size_t b = 0; b < batch.size; ++b) {
      const std::span<const double> row(votes.data().data() + b * kAnswers, kAnswers);
      correct += argmax(row) == batch.labels[b];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

std::vector<EpochReport> fit(QAModel& model, const Dataset& data, const TrainConfig& config) {
  const auto& mc = model.config();
  if (mc.variant == "dcca" && mc.dcca_mode == "pretrain") {
    Optimizer pre(config.optimizer);
    for (std::size_t e = 1; e <= mc.dcca_pretrain_epochs; ++e) {
      train_epoch(model, data.train, pre, config.batch_size, derive_seed(config.seed, 1), e, Objective::coordination);
    }
  }
  Optimizer opt(config.optimizer);
  std::vector<EpochReport> history;
  for (std::size_t e = 1; e <= config.epochs; ++e) {
    EpochReport r = train_epoch(model, data.train, opt, config.batch_size, config.seed, e);
    r.val_acc = evaluate(model, data.val);
    history.push_back(r);
  }
  return history;
}

void to_json(nlohmann::json& j, const ComparisonConfig& c) {
  j = {{"seed", c.seed},
       {"data", c.data},
       {"train", c.train},
       {"reference", c.reference},
       {"budget_tolerance", c.budget_tolerance},
       {"variants", nlohmann::json::array()}};
  for (const auto& v : c.variants) {
    nlohmann::json vj = {{"name", v.name}, {"model", v.model}, {"match_budget", v.match_budget}};
    if (v.optimizer) vj["optimizer"] = *v.optimizer;
    j["variants"].push_back(vj);
  }
}

void from_json(const nlohmann::json& j, ComparisonConfig& c) {
  const ComparisonConfig d;
  c.seed = j.value("seed", d.seed);
  c.data = j.contains("data") ? j.at("data").get<SyntheticTaskSpec>() : d.data;
  c.train = j.contains("train") ? j.at("train").get<TrainConfig>() : d.train;
  c.reference = j.value("reference", d.reference);
  c.budget_tolerance = j.value("budget_tolerance", d.budget_tolerance);
  c.variants.clear();
  for (const auto& vj : j.at("variants")) {
    VariantSpec v;
    v.name = vj.at("name").get<std::string>();
    v.model = vj.contains("model") ? vj.at("model").get<ModelConfig>() : ModelConfig{};
    if (vj.contains("optimizer")) v.optimizer = vj.at("optimizer").get<OptimizerConfig>();
    v.match_budget = vj.value("match_budget", true);
    c.variants.push_back(std::move(v));
  }
}

void apply_seed(ComparisonConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.data.seed = seed;
  config.train.seed = seed;
}

const ComparisonRow* ComparisonResult::find(const std::string& variant) const {
  for (const auto& r : rows)
    if (r.variant == variant) return &r;
  return nullptr;
}

ComparisonResult run_comparison(const ComparisonConfig& config) {
  return run_comparison(config, generate_dataset(config.data));
}

ComparisonResult run_comparison(const ComparisonConfig& config, const Dataset& data) {
  ComparisonResult result;
  result.data = data.spec;
  result.val_oracle = data.val_oracle;

  std::vector<ModelConfig> models;
  for (std::size_t i = 0; i < config.variants.size(); ++i) {
    ModelConfig m = config.variants[i].model;
    m.seed = derive_seed(config.seed, 100 + i);
    models.push_back(m);
  }
  const VariantSpec* reference = nullptr;
  for (std::size_t i = 0; i < config.variants.size(); ++i) {
    if (config.variants[i].name == config.reference) {
      reference = &config.variants[i];
      result.budget = parameter_count(models[i], data.spec);
    }
  }
  if (!reference) throw std::invalid_argument("reference variant '" + config.reference + "' is not in the config");

  TrainConfig train = config.train;
  train.seed = derive_seed(config.seed, 1);
  for (std::size_t i = 0; i < config.variants.size(); ++i) {
    const VariantSpec& v = config.variants[i];
    ModelConfig m = models[i];
    if (&v != reference && v.match_budget) m.hidden = match_hidden(m, data.spec, result.budget);

    ComparisonRow row;
    row.variant = v.name;
    row.hidden = m.hidden;
    QAModel model(m, data.spec);
    row.params = model.parameter_count();
    row.budget_deviation =
        (static_cast<double>(row.params) - static_cast<double>(result.budget)) / static_cast<double>(result.budget);
    row.within_budget = std::abs(row.budget_deviation) <= config.budget_tolerance;

    TrainConfig t = train;
    if (v.optimizer) t.optimizer = *v.optimizer;
    try {
      row.history = fit(model, data, t);
    } catch (const TrainingDiverged& e) {
      row.converged = false;
      row.failure = e.what();
    }
    result.rows.push_back(std::move(row));
  }

  const ComparisonRow* ref = result.find(config.reference);
  if (ref && ref->converged) {
    for (auto& row : result.rows)
      if (row.converged) row.offset_vs_concat = 100.0 * (row.val_acc() - ref->val_acc());
  }
  return result;
}

namespace {

void write_row(std::ostream& out, const ComparisonRow& row, const EpochReport* epoch,
               const std::optional<double>& offset) {
  out << row.variant << ',' << row.params << ',';
  if (!row.converged && !epoch) {
    out << row.history.size() << ",nan,No Convergence,No Convergence\n";
    return;
  }
  out << epoch->epoch << ',' << format("%.6f", epoch->train_loss) << ',' << format("%.4f", epoch->val_acc) << ',';
  if (offset) out << format("%+.2f", *offset);
  out << '\n';
}

constexpr const char* kHeader = "variant,params,epoch,train_loss,val_acc,offset_vs_concat\n";

}  // namespace

void write_table_csv(const ComparisonResult& result, std::ostream& out) {
  out << kHeader;
  for (const auto& row : result.rows) {
    if (row.converged && !row.history.empty()) {
      write_row(out, row, &row.history.back(), row.offset_vs_concat);
    } else {
      write_row(out, row, nullptr, std::nullopt);
    }
  }
}

void write_metrics_csv(const ComparisonResult& result, std::ostream& out) {
  out << kHeader;
  for (const auto& row : result.rows) {
    for (const auto& e : row.history) write_row(out, row, &e, std::nullopt);
    if (!row.converged) write_row(out, row, nullptr, std::nullopt);
  }
}

void write_table_markdown(const ComparisonResult& result, std::ostream& out) {
  const auto& d = result.data;
  out << "# Fusion comparison\n\n"
      << "Synthetic task: beta = " << format("%.2f", d.beta) << ", " << d.n_train << " train / " << d.n_val
      << " val examples, seed " << d.seed << ".\n"
      << "Validation oracle accuracy: bilinear " << format("%.2f", 100.0 * result.val_oracle.bilinear)
      << ", text-only " << format("%.2f", 100.0 * result.val_oracle.text_only) << ".\n"
      << "Parameter budget: " << result.budget << ".\n\n"
      << "| Variant | Params | Budget deviation | Val accuracy | Offset vs concat |\n"
      << "|---|---:|---:|---:|---:|\n";
  for (const auto& row : result.rows) {
    out << "| " << row.variant << " | " << row.params << " | " << format("%+.1f%%", 100.0 * row.budget_deviation)
        << (row.within_budget ? "" : " (outside tolerance)") << " | ";
    if (!row.converged) {
      out << "No Convergence | No Convergence |\n";
      continue;
    }
    out << format("%.2f", 100.0 * row.val_acc()) << " | "
        << (row.offset_vs_concat ? format("%+.2f", *row.offset_vs_concat) : std::string()) << " |\n";
  }
  bool any_failure = false;
  for (const auto& row : result.rows) any_failure |= !row.converged;
  if (any_failure) {
    out << "\n";
    for (const auto& row : result.rows)
      if (!row.converged) out << "- " << row.variant << ": " << row.failure << "\n";
  }
}

}  // namespace fusionkit::qa
