#pragma once

// Frequency-weighted cross-entropy and the importance-aware loss (IAL).
//
// For a batch with group ranks r(i) and true classes y(i), the per-group terms are
//
//   I_g = -(1/N) * sum_{i : r(i) = g} w[y(i)] * log p_i[y(i)]
//
// with N the number of scored (non-ignored) pixels. The dynamic weight f_t for
// t = 2..G measures how far the true-class probability sits from importance
// matrix M_{t-1}:
//
//   f_t = (1/N_t) * sum_{i : M(i) != X} (M(i) + lambda) * (p_i[y(i)] - M(i))^2
//
// where N_t counts pixels of rank >= t-1. The total loss chains the weights:
//
//   IAL = sum_g [prod_{t=2..g} (f_t + alpha)] * I_g
//
// Gradients treat every f_t as a constant.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ialseg/hierarchy.hpp"
#include "ialseg/ops.hpp"
#include "ialseg/tensor.hpp"

namespace ialseg {

inline constexpr double kLogClamp = 1e-12;

struct ClassWeights {
  std::vector<double> omega;
  double a = 1.02;
};

struct LossParams {
  double alpha = 1.0;
  double lambda = 0.5;
};

struct LossBreakdown {
  double total = 0;
  std::vector<double> per_group;        // I_1..I_G
  std::vector<double> dynamic_weights;  // f_2..f_G
  std::vector<double> coefficients;     // composed weight of each I_g
  double alpha = 1.0;
  double lambda = 0.5;
};

struct WeightedCe {
  double total = 0;
  std::vector<double> per_group;
};

/// Pixel share of every class over a whole dataset, ignored pixels excluded.
inline std::vector<double> class_frequencies(std::span<const LabelMap> dataset, std::size_t num_classes,
                                             std::optional<int> ignore_id = std::nullopt) {
  std::vector<std::uint64_t> counts(num_classes, 0);
  std::uint64_t total = 0;
  for (const auto& lm : dataset)
    for (int id : lm.ids) {
      if (ignore_id && id == *ignore_id) continue;
      if (id < 0 || static_cast<std::size_t>(id) >= num_classes)
        throw Error("class_frequencies: unknown class id " + std::to_string(id));
      ++counts[static_cast<std::size_t>(id)];
      ++total;
    }
  if (total == 0) throw Error("class_frequencies: dataset has no scored pixels");
  std::vector<double> f(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) f[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
  return f;
}

/// w_c = 1 / ln(a + f_c).
inline ClassWeights enet_weights(std::span<const double> freqs, double a = 1.02) {
  if (!(a > 1.0)) throw Error("enet_weights: a must exceed 1, got " + std::to_string(a));
  ClassWeights w{{}, a};
  w.omega.reserve(freqs.size());
  for (double f : freqs) {
    if (!(f >= 0.0 && f <= 1.0)) throw Error("enet_weights: frequency " + std::to_string(f) + " outside [0,1]");
    w.omega.push_back(1.0 / std::log(a + f));
  }
  return w;
}

namespace detail {
template <typename T>
std::size_t check_loss_inputs(const Tensor<T>& prob, const LabelMap& labels, std::size_t num_classes) {
  if (prob.rank() == 0 || prob.shape().back() != num_classes)
    throw Error("loss: probability tensor " + shape_str(prob.shape()) + " does not have " +
                std::to_string(num_classes) + " channels");
  if (prob.size() / num_classes != labels.pixels())
    throw Error("loss: " + std::to_string(prob.size() / num_classes) + " prediction pixels vs " +
                std::to_string(labels.pixels()) + " labels");
  return labels.pixels();
}

inline std::size_t scored_pixels(const GroupRankMap& ranks) {
  return static_cast<std::size_t>(std::count_if(ranks.ranks.begin(), ranks.ranks.end(), [](int r) { return r > 0; }));
}
}  // namespace detail

/// Frequency-weighted cross-entropy split by group rank.
template <typename T>
WeightedCe weighted_ce(const Tensor<T>& prob, const LabelMap& labels, const ClassWeights& weights,
                       const GroupRankMap& ranks, std::size_t num_groups) {
  const std::size_t c = weights.omega.size();
  const std::size_t pixels = detail::check_loss_inputs(prob, labels, c);
  if (ranks.ranks.size() != pixels) throw Error("weighted_ce: rank map does not match labels");
  std::vector<double> sums(num_groups, 0.0);
  for (std::size_t i = 0; i < pixels; ++i) {
    const int r = ranks.ranks[i];
    if (r == 0) continue;
    const auto y = static_cast<std::size_t>(labels.ids[i]);
    const double p = std::max(static_cast<double>(prob[i * c + y]), kLogClamp);
    sums[static_cast<std::size_t>(r - 1)] -= weights.omega[y] * std::log(p);
  }
  WeightedCe out{0.0, std::vector<double>(num_groups, 0.0)};
  const std::size_t n = detail::scored_pixels(ranks);
  if (n == 0) return out;
  for (std::size_t g = 0; g < num_groups; ++g) {
    out.per_group[g] = sums[g] / static_cast<double>(n);
    out.total += out.per_group[g];
  }
  return out;
}

/// Dynamic importance weight over matrix `tri`, which was rasterized from M_m.
/// The normalizer counts pixels of rank >= m; an empty normalizer yields 0.
template <typename T>
double dynamic_weight(const Tensor<T>& prob, const LabelMap& labels, const TriStateMap& tri, const GroupRankMap& ranks,
                      int m, double lambda = 0.5) {
  const std::size_t c = prob.rank() ? prob.shape().back() : 0;
  const std::size_t pixels = detail::check_loss_inputs(prob, labels, c);
  if (tri.cells.size() != pixels || ranks.ranks.size() != pixels)
    throw Error("dynamic_weight: matrix or rank map does not match labels");
  double sum = 0.0;
  std::size_t norm = 0;
  for (std::size_t i = 0; i < pixels; ++i) {
    if (ranks.ranks[i] >= m) ++norm;
    if (tri.cells[i] == CellValue::DontCare) continue;
    const double mv = tri.cells[i] == CellValue::One ? 1.0 : 0.0;
    const double pc = static_cast<double>(prob[i * c + static_cast<std::size_t>(labels.ids[i])]);
    const double d = pc - mv;
    sum += (mv + lambda) * d * d;
  }
  return norm == 0 ? 0.0 : sum / static_cast<double>(norm);
}

/// Chained coefficients prod_{t=2..g} (f_t + alpha) for g = 1..G.
inline std::vector<double> compose_coefficients(std::span<const double> dynamic_weights, double alpha) {
  std::vector<double> coef(dynamic_weights.size() + 1, 1.0);
  for (std::size_t t = 0; t < dynamic_weights.size(); ++t) coef[t + 1] = coef[t] * (dynamic_weights[t] + alpha);
  return coef;
}

inline double compose_total(std::span<const double> per_group, std::span<const double> coefficients) {
  double total = 0.0;
  for (std::size_t g = 0; g < per_group.size(); ++g) total += coefficients[g] * per_group[g];
  return total;
}

/// f_2..f_G for a batch; empty for single-group hierarchies.
template <typename T>
std::vector<double> dynamic_weights(const Tensor<T>& prob, const LabelMap& labels, const ImportanceHierarchy& h,
                                    const GroupRankMap& ranks, double lambda) {
  std::vector<double> f;
  if (h.num_groups() < 2) return f;
  for (const auto& spec : build_matrix_specs(h))
    f.push_back(dynamic_weight(prob, labels, rasterize_matrix(spec, h, labels), ranks, spec.index, lambda));
  return f;
}

template <typename T>
LossBreakdown ial_loss(const Tensor<T>& prob, const LabelMap& labels, const ImportanceHierarchy& h,
                       const ClassWeights& weights, const LossParams& params = {}) {
  if (weights.omega.size() != h.num_classes()) throw Error("ial_loss: weight table does not match class count");
  const GroupRankMap ranks = group_rank_map(h, labels);
  LossBreakdown out;
  out.alpha = params.alpha;
  out.lambda = params.lambda;
  out.per_group = weighted_ce(prob, labels, weights, ranks, h.num_groups()).per_group;
  out.dynamic_weights = dynamic_weights(prob, labels, h, ranks, params.lambda);
  out.coefficients = compose_coefficients(out.dynamic_weights, params.alpha);
  out.total = compose_total(out.per_group, out.coefficients);
  return out;
}

/// Gradient of sum_g coef[g] * I_g with respect to the logits, coefficients held fixed.
template <typename T>
Tensor<T> weighted_ce_gradient(const Tensor<T>& prob, const LabelMap& labels, const ClassWeights& weights,
                               const GroupRankMap& ranks, std::span<const double> coefficients) {
  const std::size_t c = weights.omega.size();
  const std::size_t pixels = detail::check_loss_inputs(prob, labels, c);
  Tensor<T> grad(prob.shape());
  const std::size_t n = detail::scored_pixels(ranks);
  if (n == 0) return grad;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < pixels; ++i) {
    const int r = ranks.ranks[i];
    if (r == 0) continue;
    const auto y = static_cast<std::size_t>(labels.ids[i]);
    const T scale = static_cast<T>(coefficients[static_cast<std::size_t>(r - 1)] * weights.omega[y] * inv_n);
    for (std::size_t k = 0; k < c; ++k) grad[i * c + k] = scale * prob[i * c + k];
    grad[i * c + y] -= scale;
  }
  return grad;
}

template <typename T>
Tensor<T> ial_gradient(const Tensor<T>& logits, const LabelMap& labels, const ImportanceHierarchy& h,
                       const ClassWeights& weights, const LossParams& params = {}) {
  const Tensor<T> prob = softmax(logits);
  const LossBreakdown b = ial_loss(prob, labels, h, weights, params);
  return weighted_ce_gradient(prob, labels, weights, group_rank_map(h, labels), b.coefficients);
}

enum class LossKind { WeightedCe, Ial };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "wce") return LossKind::WeightedCe;
  if (s == "ial") return LossKind::Ial;
  throw Error("unknown loss '" + s + "' (expected wce or ial)");
}

inline const char* loss_kind_name(LossKind k) { return k == LossKind::Ial ? "ial" : "wce"; }

template <typename T>
struct LossResult {
  LossBreakdown breakdown;
  Tensor<T> grad;
};

/// Loss value and logit gradient for one training batch. Under weighted CE the
/// dynamic weights are still reported but every group coefficient is 1.
template <typename T>
LossResult<T> loss_and_gradient(const Tensor<T>& logits, const LabelMap& labels, const ImportanceHierarchy& h,
                                const ClassWeights& weights, LossKind kind, const LossParams& params) {
  const Tensor<T> prob = softmax(logits);
  LossResult<T> r{ial_loss(prob, labels, h, weights, params), {}};
  if (kind == LossKind::WeightedCe) {
    std::fill(r.breakdown.coefficients.begin(), r.breakdown.coefficients.end(), 1.0);
    r.breakdown.total = compose_total(r.breakdown.per_group, r.breakdown.coefficients);
  }
  r.grad = weighted_ce_gradient(prob, labels, weights, group_rank_map(h, labels), r.breakdown.coefficients);
  return r;
}

}  // namespace ialseg
