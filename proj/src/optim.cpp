#include "fusionkit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fusionkit {

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = nlohmann::json{{"kind", c.kind}, {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  const OptimizerConfig d;
  c.kind = j.value("kind", d.kind);
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
}

Optimizer::Optimizer(OptimizerConfig config) : config_(std::move(config)) {
  if (config_.kind != "adam" && config_.kind != "sgd") {
    throw std::invalid_argument("unknown optimizer '" + config_.kind + "' (expected adam or sgd)");
  }
}

void Optimizer::zero_grad(const ad::ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

void Optimizer::step(const ad::ParameterList& params) {
  ++steps_;
  for (auto* p : params) {
    const auto& g = p->grad.values();
    if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
    auto& w = p->value.values();
    if (config_.kind == "sgd") {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config_.lr * g[i];
      continue;
    }
    auto& s = state_[p];
    if (s.t == 0) {
      s.m = Tensor::zeros(p->value.shape());
      s.v = Tensor::zeros(p->value.shape());
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * g[i];
      s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      w[i] -= config_.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + config_.eps);
    }
  }
}

}  // namespace fusionkit
