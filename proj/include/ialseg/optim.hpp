#pragma once

#include <cmath>
#include <map>
#include <string>

#include <json.hpp>

#include "ialseg/layers.hpp"

namespace ialseg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t decay_every = 10;  // epochs between learning-rate drops
  double decay_factor = 0.1;
  double l2 = 2e-4;
  std::size_t epochs = 30;
};

inline nlohmann::json to_json(const AdamConfig& c) {
  return {{"lr", c.lr},       {"beta1", c.beta1},       {"beta2", c.beta2},
          {"eps", c.eps},     {"decay_every", c.decay_every}, {"decay_factor", c.decay_factor},
          {"l2", c.l2},       {"epochs", c.epochs}};
}

inline AdamConfig adam_config_from_json(const nlohmann::json& j, AdamConfig c = {}) {
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("lr", c.lr);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("decay_every", c.decay_every);
    get("decay_factor", c.decay_factor);
    get("l2", c.l2);
    get("epochs", c.epochs);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed optimizer config: ") + e.what());
  }
  if (c.decay_every == 0) throw Error("optimizer config: decay_every must be positive");
  return c;
}

template <typename T>
struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::map<std::string, Tensor<T>> m, v;

  explicit AdamState(AdamConfig c = {}) : config(c) {}
};

/// Step learning-rate schedule: lr * decay_factor^floor(epoch / decay_every).
template <typename T>
double lr_at(std::size_t epoch, const AdamState<T>& state) {
  const auto& c = state.config;
  return c.lr * std::pow(c.decay_factor, static_cast<double>(epoch / c.decay_every));
}

/// One bias-corrected Adam update. Parameters flagged for decay see the
/// classic L2 term l2 * param added to their gradient.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr) {
  const auto& c = state.config;
  for (const auto& [name, p] : params)
    for (T g : p.grad.vec())
      if (!std::isfinite(static_cast<double>(g))) throw Error("non-finite gradient in parameter '" + name + "'");
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto [mit, fresh] = state.m.try_emplace(name, p.value.shape());
    auto& m = mit->second;
    auto& v = state.v.try_emplace(name, p.value.shape()).first->second;
    if (m.shape() != p.value.shape()) throw Error("optimizer state shape mismatch for '" + name + "'");
    const double l2 = p.decay ? c.l2 : 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]) + l2 * static_cast<double>(p.value[i]);
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
    }
  }
}

}  // namespace ialseg
