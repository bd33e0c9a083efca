#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ialseg/hierarchy.hpp"
#include "ialseg/tensor.hpp"

namespace ialseg {

/// counts(g, p): scored pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0) : c_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const noexcept { return c_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_.at(truth * c_ + pred); }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_.at(truth * c_ + pred); }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

  /// Adds one count per pixel; pixels whose ground truth is `ignore_id` are skipped.
  void accumulate(const LabelMap& labels, const LabelMap& predictions, std::optional<int> ignore_id = std::nullopt) {
    if (labels.ids.size() != predictions.ids.size()) throw Error("confusion matrix: label/prediction size mismatch");
    for (std::size_t i = 0; i < labels.ids.size(); ++i) {
      const int g = labels.ids[i], p = predictions.ids[i];
      if (ignore_id && g == *ignore_id) continue;
      if (g < 0 || static_cast<std::size_t>(g) >= c_ || p < 0 || static_cast<std::size_t>(p) >= c_)
        throw Error("confusion matrix: class id out of range at pixel " + std::to_string(i));
      ++counts_[static_cast<std::size_t>(g) * c_ + static_cast<std::size_t>(p)];
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.c_ != c_) throw Error("confusion matrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t c_;
  std::vector<std::uint64_t> counts_;
};

/// Per-pixel argmax over the last dimension; ties go to the lowest class id.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores) {
  if (scores.rank() != 4) throw Error("argmax_labels: expected N x H x W x C scores");
  const std::size_t c = scores.c();
  LabelMap out(scores.n(), scores.h(), scores.w(), 0);
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    const T* row = scores.data() + i * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (row[k] > row[best]) best = k;
    out.ids[i] = static_cast<int>(best);
  }
  return out;
}

using Metric = std::optional<double>;

struct ClassMetrics {
  Metric precision, recall, iou;
};

/// precision = TP/(TP+FP), recall = TP/(TP+FN), IoU = TP/(TP+FP+FN); empty when the denominator is 0.
inline std::vector<ClassMetrics> class_metrics(const ConfusionMatrix& cm) {
  const std::size_t c = cm.num_classes();
  std::vector<ClassMetrics> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t tp = cm(k, k), fp = 0, fn = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += cm(j, k);
      fn += cm(k, j);
    }
    auto ratio = [](std::uint64_t num, std::uint64_t den) -> Metric {
      if (den == 0) return std::nullopt;
      return static_cast<double>(num) / static_cast<double>(den);
    };
    out[k] = {ratio(tp, tp + fp), ratio(tp, tp + fn), ratio(tp, tp + fp + fn)};
  }
  return out;
}

struct MetricMeans {
  Metric precision, recall, iou;
};

struct GroupReport {
  ImportanceHierarchy hierarchy;
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  std::vector<MetricMeans> per_group;  // index rank-1
  MetricMeans overall;
  // This report minus the baseline, when a baseline was given.
  std::optional<std::vector<MetricMeans>> group_deltas;
  std::optional<MetricMeans> overall_delta;
};

namespace detail {
inline Metric mean_of(const std::vector<Metric>& v) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& m : v)
    if (m) {
      s += *m;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

inline MetricMeans means_over(const std::vector<ClassMetrics>& cls, const std::vector<int>& members) {
  std::vector<Metric> p, r, u;
  for (int id : members) {
    const auto& m = cls.at(static_cast<std::size_t>(id));
    p.push_back(m.precision);
    r.push_back(m.recall);
    u.push_back(m.iou);
  }
  return {mean_of(p), mean_of(r), mean_of(u)};
}

inline Metric diff(const Metric& a, const Metric& b) {
  if (!a || !b) return std::nullopt;
  return *a - *b;
}

inline MetricMeans diff(const MetricMeans& a, const MetricMeans& b) {
  return {diff(a.precision, b.precision), diff(a.recall, b.recall), diff(a.iou, b.iou)};
}
}  // namespace detail

/// Group means exclude classes whose metric is undefined.
inline GroupReport group_report(const ConfusionMatrix& cm, const ImportanceHierarchy& h,
                                const GroupReport* baseline = nullptr) {
  if (cm.num_classes() != h.num_classes()) throw Error("group_report: confusion matrix does not match hierarchy");
  GroupReport r{h, cm, class_metrics(cm), {}, {}, std::nullopt, std::nullopt};
  for (const auto& members : h.groups()) r.per_group.push_back(detail::means_over(r.per_class, members));
  std::vector<int> all(h.num_classes());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  r.overall = detail::means_over(r.per_class, all);
  if (baseline) {
    if (baseline->per_group.size() != r.per_group.size()) throw Error("group_report: baseline has a different hierarchy");
    std::vector<MetricMeans> d;
    for (std::size_t g = 0; g < r.per_group.size(); ++g) d.push_back(detail::diff(r.per_group[g], baseline->per_group[g]));
    r.group_deltas = std::move(d);
    r.overall_delta = detail::diff(r.overall, baseline->overall);
  }
  return r;
}

namespace detail {
inline nlohmann::json metric_json(const Metric& m) { return m ? nlohmann::json(*m) : nlohmann::json(nullptr); }

inline nlohmann::json means_json(const MetricMeans& m) {
  return {{"precision", metric_json(m.precision)}, {"recall", metric_json(m.recall)}, {"iou", metric_json(m.iou)}};
}

inline std::string metric_csv(const Metric& m) {
  if (!m) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *m);
  return buf;
}
}  // namespace detail

inline nlohmann::json report_to_json(const GroupReport& r, const std::string& run_id = "") {
  nlohmann::json j;
  j["run_id"] = run_id;
  j["hierarchy"] = hierarchy_to_json(r.hierarchy);
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    classes.push_back({{"id", k},
                       {"name", r.hierarchy.classes()[k].name},
                       {"group", r.hierarchy.rank_of(static_cast<int>(k))},
                       {"precision", detail::metric_json(m.precision)},
                       {"recall", detail::metric_json(m.recall)},
                       {"iou", detail::metric_json(m.iou)}});
  }
  j["classes"] = std::move(classes);
  nlohmann::json groups = nlohmann::json::array();
  for (std::size_t g = 0; g < r.per_group.size(); ++g) {
    auto gj = detail::means_json(r.per_group[g]);
    gj["group"] = g + 1;
    gj["classes"] = r.hierarchy.groups()[g];
    groups.push_back(std::move(gj));
  }
  j["groups"] = std::move(groups);
  j["overall"] = detail::means_json(r.overall);
  if (r.group_deltas) {
    nlohmann::json d = nlohmann::json::array();
    for (std::size_t g = 0; g < r.group_deltas->size(); ++g) {
      auto gj = detail::means_json((*r.group_deltas)[g]);
      gj["group"] = g + 1;
      d.push_back(std::move(gj));
    }
    j["deltas"] = {{"groups", std::move(d)}, {"overall", detail::means_json(*r.overall_delta)}};
  }
  const std::size_t c = r.confusion.num_classes();
  nlohmann::json cm = nlohmann::json::array();
  for (std::size_t g = 0; g < c; ++g) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < c; ++p) row.push_back(r.confusion(g, p));
    cm.push_back(std::move(row));
  }
  j["confusion"] = std::move(cm);
  return j;
}

/// Rebuilds a report from its JSON form via the stored hierarchy and confusion matrix.
inline GroupReport report_from_json(const nlohmann::json& j) {
  try {
    ImportanceHierarchy h = hierarchy_from_json(j.at("hierarchy"));
    const auto rows = j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
    ConfusionMatrix cm(h.num_classes());
    if (rows.size() != h.num_classes()) throw Error("report confusion matrix does not match its hierarchy");
    for (std::size_t g = 0; g < rows.size(); ++g) {
      if (rows[g].size() != h.num_classes()) throw Error("report confusion matrix is not square");
      for (std::size_t p = 0; p < rows[g].size(); ++p) cm(g, p) = rows[g][p];
    }
    return group_report(cm, h);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
}

inline std::string report_to_csv(const GroupReport& r) {
  std::ostringstream os;
  os << "class,name,group,precision,recall,iou\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    os << k << ',' << r.hierarchy.classes()[k].name << ',' << r.hierarchy.rank_of(static_cast<int>(k)) << ','
       << detail::metric_csv(m.precision) << ',' << detail::metric_csv(m.recall) << ',' << detail::metric_csv(m.iou)
       << '\n';
  }
  return os.str();
}

/// One line per group, e.g. "G3 recall: +4.4 points, precision: -2.1 points, IoU: +0.3 points".
inline std::vector<std::string> verdict_lines(const GroupReport& delta_report) {
  std::vector<std::string> lines;
  if (!delta_report.group_deltas) return lines;
  auto pts = [](const Metric& m) {
    if (!m) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f points", *m * 100.0);
    return std::string(buf);
  };
  for (std::size_t g = delta_report.group_deltas->size(); g-- > 0;) {
    const auto& d = (*delta_report.group_deltas)[g];
    lines.push_back("G" + std::to_string(g + 1) + " recall: " + pts(d.recall) + ", precision: " + pts(d.precision) +
                    ", IoU: " + pts(d.iou));
  }
  return lines;
}

}  // namespace ialseg
