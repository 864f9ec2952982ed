#pragma once

// Multiple-choice QA models over the synthetic task.
//
// A stream (video or subtitle) is embedded frame by frame, matched against
// the question and each candidate answer, combined per frame, max-pooled over
// time and scored by a small MLP head shared across the five candidates.
// Stream votes are summed; the prediction is the argmax, lowest index on
// ties.
//
// Variants:
//   concat  per-frame [F; A_q; A_a; F*A_q; F*A_a]
//   blp     per-frame [fuse(F, A_q); fuse(F, A_a)] with any fusion kind
//   dcca    concat with a DCCA encoder pair on F and the text embeddings,
//           plus a coordination loss between F' and A_q'
//   dual    fuse(video [F*A_q; F*A_a], subtitle [F*A_q; F*A_a]) per frame,
//           or after pooling when pool_then_fuse is set

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusionkit/cca.hpp"
#include "fusionkit/fusion.hpp"
#include "fusionkit/qa/dataset.hpp"

namespace fusionkit::qa {

/// Attention of every context row over the query rows:
/// A[t] = sum_l softmax_l(F[t] . Q[l]) Q[l].
Tensor context_match(const Tensor& context, const Tensor& query);

struct ModelConfig {
  std::string variant = "concat";  // concat | blp | dcca | dual
  std::vector<std::string> streams = {"video", "subtitle"};
  std::size_t embed_dim = 16;
  std::size_t hidden = 80;
  bool no_question = false;
  FusionSpec fusion;  // blp and dual; left/right dims are filled in by the model
  bool pool_then_fuse = false;
  std::string dcca_mode = "joint";  // joint | pretrain
  double dcca_weight = 0.1;
  std::size_t dcca_components = 4;
  std::size_t dcca_pretrain_epochs = 3;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// B examples flattened into row blocks: frame rows are ordered (b, t),
/// answer rows (b, i).
struct Batch {
  std::size_t size = 0;
  std::size_t frames = 0;
  Tensor video;     // B*T x d_c
  Tensor subtitle;  // B*T x d_s
  Tensor question;  // B x d_q
  Tensor answers;   // B*5 x d_q
  std::vector<int> labels;
};

Batch make_batch(const std::vector<QAExample>& examples, std::span<const std::size_t> indices);

struct ForwardResult {
  ad::Var votes;  // B x 5
  /// Sum of the per-stream DCCA losses, dcca variant only.
  std::optional<ad::Var> coordination;
};

class QAModel {
 public:
  QAModel(ModelConfig config, const SyntheticTaskSpec& dims);
  QAModel(const QAModel&) = delete;
  QAModel& operator=(const QAModel&) = delete;
  ~QAModel();

  ForwardResult forward(ad::Tape& tape, const Batch& batch, const ForwardContext& ctx = {});

  /// Eval-mode votes for a single example.
  std::vector<double> votes(const QAExample& example);

  ad::ParameterList parameters();
  /// Parameters of the DCCA encoders only (empty for other variants).
  ad::ParameterList coordination_parameters();
  std::size_t parameter_count();

  const ModelConfig& config() const noexcept { return config_; }
  const SyntheticTaskSpec& dims() const noexcept { return dims_; }
  /// {"model": ..., "dims": ...}; enough to rebuild the model before loading
  /// a checkpoint.
  nlohmann::json describe() const;

 private:
  struct Embedding;
  struct Head;
  struct Stream;

  ModelConfig config_;
  SyntheticTaskSpec dims_;
  std::unique_ptr<Embedding> video_embed_;
  std::unique_ptr<Embedding> text_embed_;
  std::vector<std::unique_ptr<Stream>> streams_;
  std::unique_ptr<FusionOp> dual_fusion_;
  std::unique_ptr<Head> dual_head_;
};

/// Parameter count of `config` with the given head width.
std::size_t parameter_count(const ModelConfig& config, const SyntheticTaskSpec& dims);

/// Head width whose parameter count is closest to `target`.
std::size_t match_hidden(ModelConfig config, const SyntheticTaskSpec& dims, std::size_t target);

}  // namespace fusionkit::qa
