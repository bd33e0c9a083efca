#pragma once

// Central finite-difference checks of every analytic backward pass.
//
// The error measure of one check is max_i |a_i - n_i| / max_i max(|a_i|, |n_i|):
// the worst coordinate discrepancy relative to the gradient's own scale.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ialseg/hierarchy.hpp"
#include "ialseg/layers.hpp"
#include "ialseg/loss.hpp"
#include "ialseg/network.hpp"

namespace ialseg {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kGradTolerance = 1e-5;

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  std::size_t coords = 0;
  bool passed() const { return max_rel_error < kGradTolerance; }
};

inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  if (analytic.size() != numeric.size()) throw Error("max_rel_error: size mismatch");
  double worst = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return scale == 0 ? worst : worst / scale;
}

/// Central differences of `f` with respect to each coordinate, restoring values afterwards.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, const std::vector<double*>& coords,
                                            double h = kFdStep) {
  std::vector<double> g;
  g.reserve(coords.size());
  for (double* v : coords) {
    const double orig = *v;
    *v = orig + h;
    const double fp = f();
    *v = orig - h;
    const double fm = f();
    *v = orig;
    g.push_back((fp - fm) / (2 * h));
  }
  return g;
}

namespace gradcheck {

using Rng = std::mt19937_64;

inline void fill_uniform(Tensor<double>& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.vec()) v = d(rng);
}

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  fill_uniform(t, rng, lo, hi);
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Picks up to `limit` coordinates (all of them when limit is 0), in a seeded random order.
inline std::vector<std::size_t> pick(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (limit == 0 || limit >= n) return idx;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
  idx.resize(limit);
  return idx;
}

/// Checks a layer through the scalar objective <r, forward(x)> for a fixed random r.
/// `forward` reads x and the store's parameters; `backward` consumes dL/dy, fills
/// parameter gradients and returns dL/dx.
inline GradCheckResult check_layer(const std::string& name, Tensor<double>& x, ParamStore<double>* store,
                                   const std::function<Tensor<double>(const Tensor<double>&)>& forward,
                                   const std::function<Tensor<double>(const Tensor<double>&)>& backward, Rng& rng,
                                   std::size_t max_coords = 0) {
  const Tensor<double> y0 = forward(x);
  const Tensor<double> r = random_tensor(y0.shape(), rng);
  if (store) store->zero_grad();
  forward(x);
  const Tensor<double> dx = backward(r);

  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i : pick(x.size(), max_coords, rng)) {
    coords.push_back(&x[i]);
    analytic.push_back(dx[i]);
  }
  if (store)
    for (auto& [pname, p] : *store)
      for (std::size_t i : pick(p.value.size(), max_coords, rng)) {
        coords.push_back(&p.value[i]);
        analytic.push_back(p.grad[i]);
      }
  const auto numeric = numeric_gradient([&] { return dot(r, forward(x)); }, coords);
  return {name, max_rel_error(analytic, numeric), coords.size()};
}

/// Random hierarchy of `groups` non-empty groups over `classes` classes.
inline ImportanceHierarchy random_hierarchy(std::size_t classes, std::size_t groups, Rng& rng) {
  if (groups == 0 || groups > classes) throw Error("random_hierarchy: need 1 <= groups <= classes");
  std::vector<int> ids(classes);
  for (std::size_t i = 0; i < classes; ++i) ids[i] = static_cast<int>(i);
  for (std::size_t i = classes; i > 1; --i) std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng() % i)]);
  std::vector<std::vector<int>> gs(groups);
  for (std::size_t g = 0; g < groups; ++g) gs[g].push_back(ids[g]);
  for (std::size_t i = groups; i < classes; ++i) gs[static_cast<std::size_t>(rng() % groups)].push_back(ids[i]);
  std::vector<ClassDef> table;
  for (std::size_t i = 0; i < classes; ++i) table.push_back({static_cast<int>(i), "c" + std::to_string(i)});
  return ImportanceHierarchy(std::move(table), std::move(gs), 255);
}

struct LossInstance {
  Tensor<double> logits;
  LabelMap labels;
  ImportanceHierarchy hierarchy;
  ClassWeights weights;
};

/// Random logits in [-5, 5], labels drawn over all classes with ~5% ignored pixels.
inline LossInstance random_loss_instance(Rng& rng, std::size_t max_hw, std::size_t max_c, std::size_t groups) {
  const std::size_t h = 1 + rng() % max_hw, w = 1 + rng() % max_hw;
  const std::size_t c = std::max(groups, 2 + static_cast<std::size_t>(rng() % (max_c - 1)));
  ImportanceHierarchy hier = random_hierarchy(c, groups, rng);
  LabelMap lab(1, h, w, 0);
  for (auto& id : lab.ids) id = rng() % 20 == 0 ? 255 : static_cast<int>(rng() % c);
  std::vector<double> freqs(c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& f : freqs) f = u(rng);
  return {random_tensor(Shape{1, h, w, c}, rng, -5, 5), std::move(lab), std::move(hier), enet_weights(freqs)};
}

/// IAL with the dynamic weights frozen at their value for `frozen_at`.
inline double frozen_ial(const Tensor<double>& logits, const LossInstance& inst,
                         const std::vector<double>& coefficients) {
  const auto ranks = group_rank_map(inst.hierarchy, inst.labels);
  const auto ce = weighted_ce(softmax(logits), inst.labels, inst.weights, ranks, inst.hierarchy.num_groups());
  return compose_total(ce.per_group, coefficients);
}

inline GradCheckResult check_ial_gradient(Rng& rng, std::size_t trials = 100) {
  GradCheckResult res{"ial_gradient", 0, 0};
  const LossParams params{};
  for (std::size_t t = 0; t < trials; ++t) {
    LossInstance inst = random_loss_instance(rng, 8, 6, 3);
    const auto b = ial_loss(softmax(inst.logits), inst.labels, inst.hierarchy, inst.weights, params);
    const auto grad = ial_gradient(inst.logits, inst.labels, inst.hierarchy, inst.weights, params);
    std::vector<double*> coords;
    for (auto& v : inst.logits.vec()) coords.push_back(&v);
    const auto numeric = numeric_gradient([&] { return frozen_ial(inst.logits, inst, b.coefficients); }, coords);
    res.max_rel_error = std::max(res.max_rel_error, max_rel_error({grad.vec().begin(), grad.vec().end()}, numeric));
    res.coords += coords.size();
  }
  return res;
}

inline std::vector<GradCheckResult> check_layers(Rng& rng) {
  std::vector<GradCheckResult> out;

  for (auto [kh, kw, stride, dil] : std::vector<std::array<std::size_t, 4>>{{3, 3, 1, 1}, {3, 3, 2, 1}, {3, 1, 1, 2},
                                                                              {1, 3, 1, 3}, {1, 1, 1, 1}}) {
    ParamStore<double> store;
    Conv2d<double> conv(store, "conv", 3, 4, ConvGeom{kh, kw, stride, kh > 1 ? dil : 1, kw > 1 ? dil : 1}, rng);
    fill_uniform(conv.bias().value, rng, -1, 1);
    Tensor<double> x = random_tensor({2, 6, 7, 3}, rng);
    out.push_back(check_layer("conv2d " + std::to_string(kh) + "x" + std::to_string(kw) + " s" +
                                  std::to_string(stride) + " d" + std::to_string(dil),
                              x, &store, [&](const Tensor<double>& in) { return conv.forward(in); },
                              [&](const Tensor<double>& dy) { return conv.backward(dy); }, rng));
  }
  {
    ParamStore<double> store;
    Downsampler<double> ds(store, "down", 3, 8, rng);
    Tensor<double> x = random_tensor({2, 6, 8, 3}, rng);
    out.push_back(check_layer("downsampler", x, &store, [&](const Tensor<double>& in) { return ds.forward(in); },
                              [&](const Tensor<double>& dy) { return ds.backward(dy); }, rng));
  }
  {
    ParamStore<double> store;
    NonBottleneck1D<double> nb(store, "nb", 4, 2, rng);
    Tensor<double> x = random_tensor({1, 7, 6, 4}, rng);
    out.push_back(check_layer("non_bottleneck_1d", x, &store, [&](const Tensor<double>& in) { return nb.forward(in); },
                              [&](const Tensor<double>& dy) { return nb.backward(dy); }, rng));
  }
  {
    ParamStore<double> store;
    PyramidPooling<double> ppm(store, "ppm", 6, {1, 2, 4}, rng);
    Tensor<double> x = random_tensor({2, 8, 9, 6}, rng);
    out.push_back(check_layer("pyramid_pooling", x, &store, [&](const Tensor<double>& in) { return ppm.forward(in); },
                              [&](const Tensor<double>& dy) { return ppm.backward(dy); }, rng));
  }
  for (auto [oh, ow] : std::vector<std::pair<std::size_t, std::size_t>>{{11, 14}, {3, 2}}) {
    BilinearResize<double> rs;
    Tensor<double> x = random_tensor({2, 5, 6, 3}, rng);
    out.push_back(check_layer("bilinear_resize to " + std::to_string(oh) + "x" + std::to_string(ow), x, nullptr,
                              [&, oh = oh, ow = ow](const Tensor<double>& in) { return rs.forward(in, oh, ow); },
                              [&](const Tensor<double>& dy) { return rs.backward(dy); }, rng));
  }
  {
    ParamStore<double> store;
    AttentionFusion<double> af(store, "fusion", 3, 4, 5, rng);
    fill_uniform(af.gate().bias().value, rng, -1, 1);
    Tensor<double> xs = random_tensor({2, 4, 5, 3}, rng);
    Tensor<double> xc = random_tensor({2, 4, 5, 4}, rng);
    // Both inputs travel through one tensor so the generic probe perturbs them together.
    Tensor<double> x = concat_channels(xs, xc);
    out.push_back(check_layer(
        "attention_fusion", x, &store,
        [&](const Tensor<double>& in) {
          auto [s, c] = split_channels(in, 3);
          return af.forward(s, c);
        },
        [&](const Tensor<double>& dy) {
          auto [ds, dc] = af.backward(dy);
          return concat_channels(ds, dc);
        },
        rng));
  }
  {
    Tensor<double> x = random_tensor({2, 3, 4, 5}, rng, -3, 3);
    Tensor<double> p;
    out.push_back(check_layer("softmax", x, nullptr,
                              [&](const Tensor<double>& in) { return p = softmax(in); },
                              [&](const Tensor<double>& dy) { return softmax_backward(p, dy); }, rng));
  }
  return out;
}

inline NetworkConfig toy_network_config(NetVariant v) {
  NetworkConfig c;
  c.variant = v;
  c.height = 16;
  c.width = 16;
  c.large_height = 32;
  c.large_width = 32;
  c.num_classes = 4;
  c.channels = {4, 8};
  c.dilations = {1, 2};
  c.bins = {1, 2, 4};
  c.spatial_channels = {4, 6, 8};
  c.fusion_channels = 6;
  return c;
}

/// Whole-network check on toy inputs; `spot` random coordinates per parameter tensor.
inline GradCheckResult check_network(NetVariant v, Rng& rng, std::size_t spot = 50) {
  const NetworkConfig cfg = toy_network_config(v);
  auto net = make_network<double>(cfg, rng());
  for (auto& [name, p] : net->params())
    if (p.value.rank() == 1) fill_uniform(p.value, rng, -0.1, 0.1);
  Tensor<double> x = random_tensor({1, cfg.input_height(), cfg.input_width(), 3}, rng, 0, 1);
  // Spot-check `spot` coordinates drawn over all parameters and the input jointly.
  const Tensor<double> y0 = net->forward(x);
  const Tensor<double> r = random_tensor(y0.shape(), rng);
  net->params().zero_grad();
  net->forward(x);
  const Tensor<double> dx = net->backward(r);
  std::vector<std::pair<double*, double>> all;
  for (std::size_t i = 0; i < x.size(); ++i) all.emplace_back(&x[i], dx[i]);
  for (auto& [name, p] : net->params())
    for (std::size_t i = 0; i < p.value.size(); ++i) all.emplace_back(&p.value[i], p.grad[i]);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i : pick(all.size(), spot, rng)) {
    coords.push_back(all[i].first);
    analytic.push_back(all[i].second);
  }
  const auto numeric = numeric_gradient([&] { return dot(r, net->forward(x)); }, coords);
  return {std::string(net_variant_name(v)) + "_pspnet (" + std::to_string(spot) + " spot coords)",
          max_rel_error(analytic, numeric), coords.size()};
}

}  // namespace gradcheck

/// The full suite: the loss gradient over random instances, every layer op, both networks.
inline std::vector<GradCheckResult> run_grad_check_suite(std::uint64_t seed, std::size_t loss_trials = 100) {
  gradcheck::Rng rng(seed);
  std::vector<GradCheckResult> out;
  out.push_back(gradcheck::check_ial_gradient(rng, loss_trials));
  for (auto& r : gradcheck::check_layers(rng)) out.push_back(std::move(r));
  out.push_back(gradcheck::check_network(NetVariant::Erf, rng));
  out.push_back(gradcheck::check_network(NetVariant::BiErf, rng));
  return out;
}

}  // namespace ialseg
