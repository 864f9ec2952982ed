#pragma once

// Synthetic multiple-choice video QA with a planted cross-modal signal.
//
// Each example is a clip of T frames (visual features), T subtitle features,
// one question vector and five candidate answers. The correct answer is the
// argmax of
//
//   score_i = (1 - beta) * vbar^T W* a_i / sigma_v + beta * sbar . a_i / sigma_s + noise
//
// where vbar and sbar are the frame means of the visual and subtitle features
// and W* is a fixed random matrix. beta = 0 makes the task purely
// visual-by-answer bilinear; beta = 1 makes it decidable from text alone.
// The question is a distractor carried for the model interface.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "fusionkit/tensor.hpp"

namespace fusionkit::qa {

inline constexpr std::size_t kAnswers = 5;

struct SyntheticTaskSpec {
  std::uint64_t seed = 0;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t frames = 8;        // T
  std::size_t visual_dim = 16;   // d_c
  std::size_t text_dim = 16;     // d_s = d_q
  double beta = 0.0;
  double noise = 0.02;           // std of the additive score noise
  double jitter = 0.3;           // per-frame deviation from the clip latent
};

void to_json(nlohmann::json& j, const SyntheticTaskSpec& s);
void from_json(const nlohmann::json& j, SyntheticTaskSpec& s);

struct QAExample {
  Tensor video;     // T x d_c
  Tensor subtitle;  // T x d_s
  Tensor question;  // 1 x d_q
  Tensor answers;   // 5 x d_q
  int label = 0;
};

/// Accuracy of the two closed-form predictors on one split.
struct OracleAccuracy {
  double bilinear = 0.0;   // argmax vbar^T W* a_i
  double text_only = 0.0;  // argmax sbar . a_i
};

struct Dataset {
  SyntheticTaskSpec spec;
  Tensor planted;  // W*, d_c x d_q
  std::vector<QAExample> train;
  std::vector<QAExample> val;
  OracleAccuracy train_oracle;
  OracleAccuracy val_oracle;
};

Dataset generate_dataset(const SyntheticTaskSpec& spec);

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> v);

OracleAccuracy oracle_accuracy(const Tensor& planted, const std::vector<QAExample>& examples);

/// Writes manifest.json plus data.bin (little-endian float64). Output is
/// byte-identical for equal datasets.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace fusionkit::qa
