#include "fusionkit/qa/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fusionkit/checkpoint.hpp"
#include "fusionkit/random.hpp"

namespace fusionkit::qa {

namespace {

constexpr const char* kFormat = "fusionkit-qa-dataset";

Tensor normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

// Frames = clip latent + per-frame jitter.
Tensor clip(std::size_t frames, std::size_t dim, double jitter, Rng& rng) {
  const Tensor latent = normal_matrix(1, dim, 1.0, rng);
  Tensor out({frames, dim});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < dim; ++j) out(t, j) = latent[j] + jitter * rng.normal();
  return out;
}

std::vector<double> frame_mean(const Tensor& frames) {
  std::vector<double> m(frames.cols(), 0.0);
  for (std::size_t t = 0; t < frames.rows(); ++t)
    for (std::size_t j = 0; j < frames.cols(); ++j) m[j] += frames(t, j);
  for (double& v : m) v /= static_cast<double>(frames.rows());
  return m;
}

struct Terms {
  std::vector<double> bilinear;
  std::vector<double> text;
};

Terms score_terms(const Tensor& planted, const QAExample& ex) {
  const auto vbar = frame_mean(ex.video);
  const auto sbar = frame_mean(ex.subtitle);
  const std::size_t dc = planted.rows(), dq = planted.cols();
  Terms terms{std::vector<double>(kAnswers, 0.0), std::vector<double>(kAnswers, 0.0)};
  for (std::size_t i = 0; i < kAnswers; ++i) {
    for (std::size_t r = 0; r < dc; ++r)
      for (std::size_t c = 0; c < dq; ++c) terms.bilinear[i] += vbar[r] * planted(r, c) * ex.answers(i, c);
    for (std::size_t c = 0; c < dq; ++c) terms.text[i] += sbar[c] * ex.answers(i, c);
    terms.text[i] /= std::sqrt(static_cast<double>(dq));
  }
  return terms;
}

std::vector<QAExample> generate_split(const SyntheticTaskSpec& spec, const Tensor& planted, std::size_t count,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<QAExample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    QAExample ex;
    ex.video = clip(spec.frames, spec.visual_dim, spec.jitter, rng);
    ex.subtitle = clip(spec.frames, spec.text_dim, spec.jitter, rng);
    ex.question = normal_matrix(1, spec.text_dim, 1.0, rng);
    ex.answers = normal_matrix(kAnswers, spec.text_dim, 1.0, rng);
    const Terms terms = score_terms(planted, ex);
    std::vector<double> score(kAnswers);
    for (std::size_t i = 0; i < kAnswers; ++i) {
      score[i] = (1.0 - spec.beta) * terms.bilinear[i] + spec.beta * terms.text[i] + spec.noise * rng.normal();
    }
    ex.label = argmax(score);
    out.push_back(std::move(ex));
  }
  return out;
}

void validate(const SyntheticTaskSpec& s) {
  if (s.frames == 0 || s.visual_dim == 0 || s.text_dim == 0) {
    throw std::invalid_argument("dataset dimensions must be positive");
  }
  if (s.beta < 0.0 || s.beta > 1.0) throw std::invalid_argument("beta must lie in [0, 1]");
  if (s.noise < 0.0 || s.jitter < 0.0) throw std::invalid_argument("noise and jitter must be non-negative");
}

std::size_t record_size(const SyntheticTaskSpec& s) {
  return s.frames * (s.visual_dim + s.text_dim) + (1 + kAnswers) * s.text_dim;
}

void write_split(std::ostream& out, const std::vector<QAExample>& split) {
  for (const auto& ex : split) {
    write_f64_le(out, ex.video.values());
    write_f64_le(out, ex.subtitle.values());
    write_f64_le(out, ex.question.values());
    write_f64_le(out, ex.answers.values());
  }
}

std::vector<QAExample> read_split(std::istream& in, const SyntheticTaskSpec& s, const std::vector<int>& labels) {
  std::vector<QAExample> out;
  out.reserve(labels.size());
  for (int label : labels) {
    QAExample ex;
    ex.video = Tensor({s.frames, s.visual_dim}, read_f64_le(in, s.frames * s.visual_dim));
    ex.subtitle = Tensor({s.frames, s.text_dim}, read_f64_le(in, s.frames * s.text_dim));
    ex.question = Tensor({1, s.text_dim}, read_f64_le(in, s.text_dim));
    ex.answers = Tensor({kAnswers, s.text_dim}, read_f64_le(in, kAnswers * s.text_dim));
    ex.label = label;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<int> labels_of(const std::vector<QAExample>& split) {
  std::vector<int> labels;
  labels.reserve(split.size());
  for (const auto& ex : split) labels.push_back(ex.label);
  return labels;
}

nlohmann::json oracle_json(const OracleAccuracy& o) { return {{"bilinear", o.bilinear}, {"text_only", o.text_only}}; }

}  // namespace

void to_json(nlohmann::json& j, const SyntheticTaskSpec& s) {
  j = {{"seed", s.seed},         {"n_train", s.n_train},       {"n_val", s.n_val},
       {"frames", s.frames},     {"visual_dim", s.visual_dim}, {"text_dim", s.text_dim},
       {"beta", s.beta},         {"noise", s.noise},           {"jitter", s.jitter}};
}

void from_json(const nlohmann::json& j, SyntheticTaskSpec& s) {
  const SyntheticTaskSpec d;
  s.seed = j.value("seed", d.seed);
  s.n_train = j.value("n_train", d.n_train);
  s.n_val = j.value("n_val", d.n_val);
  s.frames = j.value("frames", d.frames);
  s.visual_dim = j.value("visual_dim", d.visual_dim);
  s.text_dim = j.value("text_dim", d.text_dim);
  s.beta = j.value("beta", d.beta);
  s.noise = j.value("noise", d.noise);
  s.jitter = j.value("jitter", d.jitter);
}

int argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

OracleAccuracy oracle_accuracy(const Tensor& planted, const std::vector<QAExample>& examples) {
  if (examples.empty()) return {};
  std::size_t bilinear = 0, text = 0;
  for (const auto& ex : examples) {
    const Terms terms = score_terms(planted, ex);
    bilinear += argmax(terms.bilinear) == ex.label;
    text += argmax(terms.text) == ex.label;
  }
  const double n = static_cast<double>(examples.size());
  return {static_cast<double>(bilinear) / n, static_cast<double>(text) / n};
}

Dataset generate_dataset(const SyntheticTaskSpec& spec) {
  validate(spec);
  Dataset data;
  data.spec = spec;
  Rng planted_rng(derive_seed(spec.seed, 0));
  // Entries scaled so vbar^T W* a has roughly unit variance for standard normal inputs.
  data.planted = normal_matrix(spec.visual_dim, spec.text_dim,
                               1.0 / std::sqrt(static_cast<double>(spec.visual_dim * spec.text_dim)), planted_rng);
  data.train = generate_split(spec, data.planted, spec.n_train, derive_seed(spec.seed, 1));
  data.val = generate_split(spec, data.planted, spec.n_val, derive_seed(spec.seed, 2));
  data.train_oracle = oracle_accuracy(data.planted, data.train);
  data.val_oracle = oracle_accuracy(data.planted, data.val);
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream blob(dir / "data.bin", std::ios::binary);
    if (!blob) throw std::runtime_error("cannot write " + (dir / "data.bin").string());
    write_f64_le(blob, data.planted.values());
    write_split(blob, data.train);
    write_split(blob, data.val);
  }
  const nlohmann::json manifest = {
      {"format", kFormat},
      {"version", 1},
      {"spec", data.spec},
      {"blob", "data.bin"},
      {"dtype", "float64-le"},
      {"layout", {{"planted", {data.spec.visual_dim, data.spec.text_dim}},
                  {"record", {"video", "subtitle", "question", "answers"}},
                  {"record_size", record_size(data.spec)}}},
      {"train_labels", labels_of(data.train)},
      {"val_labels", labels_of(data.val)},
      {"oracle", {{"train", oracle_json(data.train_oracle)}, {"val", oracle_json(data.val_oracle)}}},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open dataset manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != kFormat) throw std::runtime_error(dir.string() + " is not a fusionkit dataset");

  Dataset data;
  data.spec = manifest.at("spec").get<SyntheticTaskSpec>();
  const auto& s = data.spec;
  std::ifstream blob(dir / manifest.at("blob").get<std::string>(), std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open dataset blob in " + dir.string());
  data.planted = Tensor({s.visual_dim, s.text_dim}, read_f64_le(blob, s.visual_dim * s.text_dim));
  data.train = read_split(blob, s, manifest.at("train_labels").get<std::vector<int>>());
  data.val = read_split(blob, s, manifest.at("val_labels").get<std::vector<int>>());
  data.train_oracle = oracle_accuracy(data.planted, data.train);
  data.val_oracle = oracle_accuracy(data.planted, data.val);
  return data;
}

}  // namespace fusionkit::qa
