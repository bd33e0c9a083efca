#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ialseg/data.hpp"
#include "ialseg/loss.hpp"
#include "ialseg/metrics.hpp"
#include "ialseg/network.hpp"
#include "ialseg/optim.hpp"

namespace ialseg {

struct RunConfig {
  std::string dataset;                  // training dataset directory
  std::optional<std::string> hierarchy;  // overrides the dataset's own hierarchy
  NetworkConfig net;
  LossKind loss = LossKind::Ial;
  double a = 1.02;
  LossParams loss_params;
  AdamConfig optimizer;
  std::size_t batch_size = 8;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["dataset"] = c.dataset;
  j["hierarchy"] = c.hierarchy ? nlohmann::json(*c.hierarchy) : nlohmann::json(nullptr);
  j["net"] = to_json(c.net);
  j["loss"] = loss_kind_name(c.loss);
  j["a"] = c.a;
  j["lambda"] = c.loss_params.lambda;
  j["alpha"] = c.loss_params.alpha;
  j["optimizer"] = to_json(c.optimizer);
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
  j["out"] = c.out;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("hierarchy") && !j["hierarchy"].is_null()) c.hierarchy = j["hierarchy"].get<std::string>();
    if (j.contains("net")) c.net = network_config_from_json(j["net"]);
    if (j.contains("loss")) c.loss = parse_loss_kind(j["loss"].get<std::string>());
    if (j.contains("a")) c.a = j["a"].get<double>();
    if (j.contains("lambda")) c.loss_params.lambda = j["lambda"].get<double>();
    if (j.contains("alpha")) c.loss_params.alpha = j["alpha"].get<double>();
    if (j.contains("optimizer")) c.optimizer = adam_config_from_json(j["optimizer"]);
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed run config: ") + e.what());
  }
  return c;
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  std::vector<double> per_group;        // batch mean of I_1..I_G
  std::vector<double> dynamic_weights;  // batch mean of f_2..f_G
  double total = 0;                     // batch mean of the optimized loss
};

inline std::string loss_curve_header(std::size_t groups) {
  std::string s = "epoch,lr";
  for (std::size_t g = 1; g <= groups; ++g) s += ",I_" + std::to_string(g);
  for (std::size_t t = 2; t <= groups; ++t) s += ",f_" + std::to_string(t);
  return s + ",total\n";
}

inline std::string loss_curve_row(const EpochLog& e) {
  std::ostringstream os;
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    os << buf;
  };
  os << e.epoch;
  num(e.lr);
  for (double v : e.per_group) num(v);
  for (double v : e.dynamic_weights) num(v);
  num(e.total);
  os << '\n';
  return os.str();
}

/// splitmix64 finalizer, used to derive per-epoch shuffle seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Class weights from the pixel frequencies of the whole training set.
inline ClassWeights dataset_class_weights(const Dataset& d, double a) {
  const auto labels = d.label_maps();
  const auto f = class_frequencies(labels, d.hierarchy.num_classes(), d.hierarchy.ignore_id());
  return enet_weights(f, a);
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains `net` in place. Fully deterministic given the run config and the
/// network's initial parameters.
template <typename T>
std::vector<EpochLog> train(SegmentationNet<T>& net, const Dataset& data, const RunConfig& cfg,
                            const EpochCallback& on_epoch = {}) {
  if (!cfg.seed) throw Error("train: a seed is required");
  if (data.samples.empty()) throw Error("train: empty dataset");
  const auto& img = data.samples.front().image;
  if (img.h() != net.config().input_height() || img.w() != net.config().input_width())
    throw Error("train: dataset images are " + std::to_string(img.h()) + "x" + std::to_string(img.w()) +
                " but the network expects " + std::to_string(net.config().input_height()) + "x" +
                std::to_string(net.config().input_width()));
  if (data.hierarchy.num_classes() != net.config().num_classes)
    throw Error("train: hierarchy has " + std::to_string(data.hierarchy.num_classes()) +
                " classes, network predicts " + std::to_string(net.config().num_classes));
  const ClassWeights weights = dataset_class_weights(data, cfg.a);
  const std::size_t groups = data.hierarchy.num_groups();
  AdamState<T> state(cfg.optimizer);
  std::vector<EpochLog> log;
  for (std::size_t epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
    EpochLog e{epoch, lr_at(epoch, state), std::vector<double>(groups, 0.0),
               std::vector<double>(groups > 1 ? groups - 1 : 0, 0.0), 0.0};
    const auto plan = batches(data.samples.size(), cfg.batch_size, mix_seed(*cfg.seed, epoch));
    for (const auto& idx : plan) {
      auto [x, labels] = make_batch<T>(data, idx);
      net.params().zero_grad();
      const Tensor<T> logits = net.forward(x);
      const auto r = loss_and_gradient(logits, labels, data.hierarchy, weights, cfg.loss, cfg.loss_params);
      net.backward(r.grad);
      adam_step(net.params(), state, e.lr);
      for (std::size_t g = 0; g < groups; ++g) e.per_group[g] += r.breakdown.per_group[g];
      for (std::size_t t = 0; t < e.dynamic_weights.size(); ++t) e.dynamic_weights[t] += r.breakdown.dynamic_weights[t];
      e.total += r.breakdown.total;
    }
    const double inv = 1.0 / static_cast<double>(plan.size());
    for (auto& v : e.per_group) v *= inv;
    for (auto& v : e.dynamic_weights) v *= inv;
    e.total *= inv;
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return log;
}

template <typename T>
ConfusionMatrix evaluate(SegmentationNet<T>& net, const Dataset& data, std::size_t batch_size = 8) {
  ConfusionMatrix cm(data.hierarchy.num_classes());
  for (std::size_t i = 0; i < data.samples.size(); i += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t k = i; k < std::min(data.samples.size(), i + batch_size); ++k) idx.push_back(k);
    auto [x, labels] = make_batch<T>(data, idx);
    cm.accumulate(labels, argmax_labels(net.forward(x)), data.hierarchy.ignore_id());
  }
  return cm;
}

}  // namespace ialseg
