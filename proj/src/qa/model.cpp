#include "fusionkit/qa/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fusionkit/factorized.hpp"

namespace fusionkit::qa {

namespace {

// Grouped attention: context rows come in groups of `frames`, query rows in
// groups of `query_len`, and group g of the context only sees group g of the
// query.
ad::Var match(ad::Var context, ad::Var query, std::size_t frames, std::size_t query_len) {
  ad::Tape& tape = *context.tape();
  const Tensor& f = context.value();
  const Tensor& q = query.value();
  if (frames == 0 || query_len == 0 || f.rows() % frames != 0 || f.cols() != q.cols() ||
      q.rows() != (f.rows() / frames) * query_len) {
    throw ShapeError("context_match: context " + shape_string(f.shape()) + " and query " + shape_string(q.shape()) +
                     " do not form groups of " + std::to_string(frames) + " and " + std::to_string(query_len));
  }
  const std::size_t d = f.cols();
  Tensor out({f.rows(), d});
  std::vector<double> probs(f.rows() * query_len);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    const std::size_t q0 = (r / frames) * query_len;
    double* p = probs.data() + r * query_len;
    double top = -INFINITY;
    for (std::size_t l = 0; l < query_len; ++l) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += f(r, j) * q(q0 + l, j);
      p[l] = s;
      top = std::max(top, s);
    }
    double z = 0.0;
    for (std::size_t l = 0; l < query_len; ++l) z += (p[l] = std::exp(p[l] - top));
    for (std::size_t l = 0; l < query_len; ++l) {
      p[l] /= z;
      for (std::size_t j = 0; j < d; ++j) out(r, j) += p[l] * q(q0 + l, j);
    }
  }
  const std::size_t ic = context.id(), iq = query.id();
  return tape.record(
      ad::OpKind::context_match, {ic, iq}, std::move(out),
      [ic, iq, frames, query_len, d, probs = std::move(probs)](ad::Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& f = t.value(ic);
        const Tensor& q = t.value(iq);
        Tensor* gf = t.needs_grad(ic) ? &t.grad_buffer(ic) : nullptr;
        Tensor* gq = t.needs_grad(iq) ? &t.grad_buffer(iq) : nullptr;
        std::vector<double> ds(query_len);
        for (std::size_t r = 0; r < f.rows(); ++r) {
          const std::size_t q0 = (r / frames) * query_len;
          const double* p = probs.data() + r * query_len;
          double mean = 0.0;
          for (std::size_t l = 0; l < query_len; ++l) {
            double dp = 0.0;
            for (std::size_t j = 0; j < d; ++j) dp += g(r, j) * q(q0 + l, j);
            ds[l] = dp;
            mean += p[l] * dp;
          }
          for (std::size_t l = 0; l < query_len; ++l) {
            ds[l] = p[l] * (ds[l] - mean);
            for (std::size_t j = 0; j < d; ++j) {
              if (gq) (*gq)(q0 + l, j) += p[l] * g(r, j) + ds[l] * f(r, j);
              if (gf) (*gf)(r, j) += ds[l] * q(q0 + l, j);
            }
          }
        }
      });
}

void prefix_names(FusionOp& op, const std::string& prefix) {
  for (auto* p : op.parameters()) p->name = prefix + p->name;
}

ad::ParameterList concat_lists(std::initializer_list<ad::ParameterList> lists) {
  ad::ParameterList out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace

Tensor context_match(const Tensor& context, const Tensor& query) {
  ad::Tape tape;
  return match(tape.constant(context), tape.constant(query), context.rows(), query.rows()).value();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"variant", c.variant},
       {"streams", c.streams},
       {"embed_dim", c.embed_dim},
       {"hidden", c.hidden},
       {"no_question", c.no_question},
       {"fusion", c.fusion},
       {"pool_then_fuse", c.pool_then_fuse},
       {"dcca_mode", c.dcca_mode},
       {"dcca_weight", c.dcca_weight},
       {"dcca_components", c.dcca_components},
       {"dcca_pretrain_epochs", c.dcca_pretrain_epochs},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.variant = j.value("variant", d.variant);
  c.streams = j.value("streams", d.streams);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.hidden = j.value("hidden", d.hidden);
  c.no_question = j.value("no_question", d.no_question);
  c.fusion = j.contains("fusion") ? j.at("fusion").get<FusionSpec>() : d.fusion;
  c.pool_then_fuse = j.value("pool_then_fuse", d.pool_then_fuse);
  c.dcca_mode = j.value("dcca_mode", d.dcca_mode);
  c.dcca_weight = j.value("dcca_weight", d.dcca_weight);
  c.dcca_components = j.value("dcca_components", d.dcca_components);
  c.dcca_pretrain_epochs = j.value("dcca_pretrain_epochs", d.dcca_pretrain_epochs);
  c.seed = j.value("seed", d.seed);
}

Batch make_batch(const std::vector<QAExample>& examples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const QAExample& first = examples.at(indices[0]);
  const std::size_t T = first.video.rows(), dc = first.video.cols(), ds = first.subtitle.cols(),
                    dq = first.question.cols();
  Batch b;
  b.size = indices.size();
  b.frames = T;
  b.video = Tensor({b.size * T, dc});
  b.subtitle = Tensor({b.size * T, ds});
  b.question = Tensor({b.size, dq});
  b.answers = Tensor({b.size * kAnswers, dq});
  auto copy = [](const Tensor& src, Tensor& dst, std::size_t row) {
    if (src.cols() != dst.cols() || row + src.rows() > dst.rows()) {
      throw ShapeError("make_batch: example shapes differ");
    }
    std::copy(src.values().begin(), src.values().end(), dst.values().begin() + row * dst.cols());
  };
  for (std::size_t n = 0; n < b.size; ++n) {
    const QAExample& ex = examples.at(indices[n]);
    if (ex.video.rows() != T || ex.subtitle.rows() != T || ex.answers.rows() != kAnswers) {
      throw ShapeError("make_batch: example shapes differ");
    }
    copy(ex.video, b.video, n * T);
    copy(ex.subtitle, b.subtitle, n * T);
    copy(ex.question, b.question, n);
    copy(ex.answers, b.answers, n * kAnswers);
    b.labels.push_back(ex.label);
  }
  return b;
}

struct QAModel::Embedding {
  Embedding(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : w(name + ".w", fan_in_uniform(in, out, in, rng)), b(name + ".b", Tensor({1, out})) {}

  ad::Var forward(ad::Tape& tape, ad::Var x) { return ad::tanh(ad::add_row(ad::matmul(x, tape.param(w)), tape.param(b))); }
  ad::ParameterList parameters() { return {&w, &b}; }

  ad::Parameter w, b;
};

struct QAModel::Head {
  Head(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng)
      : w1(name + ".w1", fan_in_uniform(in, hidden, in, rng)),
        b1(name + ".b1", Tensor({1, hidden})),
        w2(name + ".w2", fan_in_uniform(hidden, 1, hidden, rng)),
        b2(name + ".b2", Tensor({1, 1})) {}

  // (B*5) x in -> B x 5
  ad::Var forward(ad::Tape& tape, ad::Var x, std::size_t batch) {
    ad::Var h = ad::relu(ad::add_row(ad::matmul(x, tape.param(w1)), tape.param(b1)));
    ad::Var v = ad::add_row(ad::matmul(h, tape.param(w2)), tape.param(b2));
    return ad::reshape(v, {batch, kAnswers});
  }
  ad::ParameterList parameters() { return {&w1, &b1, &w2, &b2}; }

  ad::Parameter w1, b1, w2, b2;
};

struct QAModel::Stream {
  std::string name;
  std::unique_ptr<FusionOp> fusion;
  std::optional<DccaModel> dcca;
  std::unique_ptr<Head> head;
};

QAModel::QAModel(ModelConfig config, const SyntheticTaskSpec& dims) : config_(std::move(config)), dims_(dims) {
  const auto& c = config_;
  const std::size_t h = c.embed_dim;
  if (h == 0 || c.hidden == 0) throw std::invalid_argument("embed_dim and hidden must be positive");
  if (c.variant != "concat" && c.variant != "blp" && c.variant != "dcca" && c.variant != "dual") {
    throw std::invalid_argument("unknown model variant '" + c.variant + "'");
  }
  if (c.streams.empty()) throw std::invalid_argument("at least one stream is required");
  for (std::size_t i = 0; i < c.streams.size(); ++i) {
    if (c.streams[i] != "video" && c.streams[i] != "subtitle") {
      throw std::invalid_argument("unknown stream '" + c.streams[i] + "'");
    }
    if (std::find(c.streams.begin(), c.streams.begin() + i, c.streams[i]) != c.streams.begin() + i) {
      throw std::invalid_argument("stream '" + c.streams[i] + "' listed twice");
    }
  }
  if (c.variant == "dual" && c.streams.size() != 2) {
    throw std::invalid_argument("the dual variant needs both the video and the subtitle stream");
  }
  if (c.variant == "dcca" && c.dcca_mode != "joint" && c.dcca_mode != "pretrain") {
    throw std::invalid_argument("dcca_mode must be 'joint' or 'pretrain'");
  }

  Rng rng(derive_seed(c.seed, 0));
  const bool uses_video = std::find(c.streams.begin(), c.streams.end(), "video") != c.streams.end();
  if (uses_video) video_embed_ = std::make_unique<Embedding>("embed.video", dims_.visual_dim, h, rng);
  text_embed_ = std::make_unique<Embedding>("embed.text", dims_.text_dim, h, rng);

  if (c.variant == "dual") {
    FusionSpec spec = c.fusion;
    spec.left_dim = spec.right_dim = 2 * h;
    spec.seed = derive_seed(c.seed, 1);
    dual_fusion_ = make_fusion(spec);
    prefix_names(*dual_fusion_, "dual.fusion.");
    dual_head_ = std::make_unique<Head>("dual.head", dual_fusion_->output_dim(), c.hidden, rng);
    return;
  }

  std::uint64_t salt = 2;
  for (const auto& name : c.streams) {
    auto s = std::make_unique<Stream>();
    s->name = name;
    std::size_t head_in = 5 * h;
    if (c.variant == "blp") {
      FusionSpec spec = c.fusion;
      spec.left_dim = spec.right_dim = h;
      spec.seed = derive_seed(c.seed, salt++);
      s->fusion = make_fusion(spec);
      prefix_names(*s->fusion, name + ".fusion.");
      head_in = 2 * s->fusion->output_dim();
    } else if (c.variant == "dcca") {
      s->dcca.emplace(DccaModel::random(h, h, Activation::tanh, derive_seed(c.seed, salt++), name + ".dcca"));
    }
    s->head = std::make_unique<Head>(name + ".head", head_in, c.hidden, rng);
    streams_.push_back(std::move(s));
  }
}

QAModel::~QAModel() = default;

ForwardResult QAModel::forward(ad::Tape& tape, const Batch& batch, const ForwardContext& ctx) {
  const std::size_t B = batch.size, T = batch.frames, h = config_.embed_dim;
  if (T != dims_.frames || batch.video.cols() != dims_.visual_dim || batch.question.cols() != dims_.text_dim) {
    throw ShapeError("batch does not match the model's input dimensions");
  }

  // Row (b, i, t) of the per-candidate blocks reads frame row (b, t).
  std::vector<std::size_t> repeat(B * kAnswers * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < kAnswers; ++i)
      for (std::size_t t = 0; t < T; ++t) repeat[(b * kAnswers + i) * T + t] = b * T + t;

  const ad::Var q_embed = text_embed_->forward(tape, tape.constant(batch.question));
  const ad::Var a_embed = text_embed_->forward(tape, tape.constant(batch.answers));

  struct Matched {
    ad::Var f, q, fc, qc, ac;  // frames, matched question, and their per-candidate copies
  };
  auto matched = [&](ad::Var f, ad::Var q, ad::Var a) {
    Matched m;
    m.f = f;
    m.q = config_.no_question ? tape.constant(Tensor({B * T, h})) : match(f, q, T, 1);
    m.fc = ad::gather_rows(f, repeat);
    m.qc = ad::gather_rows(m.q, repeat);
    m.ac = match(m.fc, a, T, 1);
    return m;
  };
  auto embed_stream = [&](const std::string& name) {
    if (name == "video") return video_embed_->forward(tape, tape.constant(batch.video));
    return text_embed_->forward(tape, tape.constant(batch.subtitle));
  };

  ForwardResult result;
  if (config_.variant == "dual") {
    std::vector<ad::Var> reps;
    for (const char* name : {"video", "subtitle"}) {
      const Matched m = matched(embed_stream(name), q_embed, a_embed);
      const ad::Var parts[] = {ad::mul(m.fc, m.qc), ad::mul(m.fc, m.ac)};
      reps.push_back(ad::concat_cols(parts));
    }
    ad::Var pooled;
    if (config_.pool_then_fuse) {
      pooled = dual_fusion_->forward(ad::max_pool_rows(reps[0], T), ad::max_pool_rows(reps[1], T), ctx);
    } else {
      pooled = ad::max_pool_rows(dual_fusion_->forward(reps[0], reps[1], ctx), T);
    }
    result.votes = dual_head_->forward(tape, pooled, B);
    return result;
  }

  for (auto& s : streams_) {
    ad::Var f = embed_stream(s->name), q = q_embed, a = a_embed;
    if (s->dcca) {
      f = s->dcca->encoder_v().forward(f);
      q = s->dcca->encoder_t().forward(q);
      a = s->dcca->encoder_t().forward(a);
    }
    const Matched m = matched(f, q, a);
    ad::Var features;
    if (s->fusion) {
      const ad::Var parts[] = {ad::gather_rows(s->fusion->forward(m.f, m.q, ctx), repeat),
                               s->fusion->forward(m.fc, m.ac, ctx)};
      features = ad::concat_cols(parts);
    } else {
      const ad::Var parts[] = {m.fc, m.qc, m.ac, ad::mul(m.fc, m.qc), ad::mul(m.fc, m.ac)};
      features = ad::concat_cols(parts);
    }
    const ad::Var votes = s->head->forward(tape, ad::max_pool_rows(features, T), B);
    result.votes = result.votes.valid() ? ad::add(result.votes, votes) : votes;

    if (s->dcca && B * T >= config_.dcca_components + 2) {
      const ad::Var loss = ad::dcca_loss(m.f, m.q, config_.dcca_components);
      result.coordination = result.coordination ? ad::add(*result.coordination, loss) : loss;
    }
  }
  return result;
}

std::vector<double> QAModel::votes(const QAExample& example) {
  const std::vector<QAExample> one = {example};
  const std::size_t index = 0;
  ad::Tape tape;
  const auto r = forward(tape, make_batch(one, {&index, 1}));
  return r.votes.value().values();
}

ad::ParameterList QAModel::parameters() {
  ad::ParameterList out;
  if (video_embed_) out = concat_lists({out, video_embed_->parameters()});
  out = concat_lists({out, text_embed_->parameters()});
  if (dual_fusion_) out = concat_lists({out, dual_fusion_->parameters(), dual_head_->parameters()});
  for (auto& s : streams_) {
    if (s->fusion) out = concat_lists({out, s->fusion->parameters()});
    if (s->dcca) out = concat_lists({out, s->dcca->parameters()});
    out = concat_lists({out, s->head->parameters()});
  }
  return out;
}

ad::ParameterList QAModel::coordination_parameters() {
  ad::ParameterList out;
  for (auto& s : streams_)
    if (s->dcca) out = concat_lists({out, s->dcca->parameters()});
  return out;
}

std::size_t QAModel::parameter_count() { return ad::parameter_count(parameters()); }

nlohmann::json QAModel::describe() const { return {{"model", config_}, {"dims", dims_}}; }

std::size_t parameter_count(const ModelConfig& config, const SyntheticTaskSpec& dims) {
  return QAModel(config, dims).parameter_count();
}

std::size_t match_hidden(ModelConfig config, const SyntheticTaskSpec& dims, std::size_t target) {
  config.hidden = 1;
  const auto c1 = static_cast<double>(parameter_count(config, dims));
  config.hidden = 2;
  const double slope = static_cast<double>(parameter_count(config, dims)) - c1;
  const double base = c1 - slope;
  const double h = std::round((static_cast<double>(target) - base) / slope);
  return h < 1.0 ? 1 : static_cast<std::size_t>(h);
}

}  // namespace fusionkit::qa
