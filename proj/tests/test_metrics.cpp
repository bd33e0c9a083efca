#include <random>

#include <gtest/gtest.h>

#include "ialseg/data.hpp"
#include "ialseg/metrics.hpp"

namespace ialseg {
namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t g = 0; g < rows.size(); ++g)
    for (std::size_t p = 0; p < rows.size(); ++p) cm(g, p) = rows[g][p];
  return cm;
}

ImportanceHierarchy two_classes(int groups) {
  std::vector<ClassDef> cls{{0, "a"}, {1, "b"}};
  if (groups == 1) return ImportanceHierarchy(cls, {{0, 1}});
  return ImportanceHierarchy(cls, {{0}, {1}});
}

TEST(Confusion, Accumulate) {
  LabelMap truth(1, 2, 2, std::vector<int>{0, 1, 1, 2});
  ConfusionMatrix cm(3);
  cm.accumulate(truth, truth);
  EXPECT_EQ(cm, from_rows({{1, 0, 0}, {0, 2, 0}, {0, 0, 1}}));
  ConfusionMatrix off(3);
  off.accumulate(LabelMap(1, 2, 2, 1), LabelMap(1, 2, 2, 2));
  EXPECT_EQ(off, from_rows({{0, 0, 0}, {0, 0, 4}, {0, 0, 0}}));
  ConfusionMatrix ab = cm, ba = off;
  ab += off;
  ba += cm;
  EXPECT_EQ(ab, ba);
  EXPECT_EQ(ab.total(), 8u);
}

TEST(Confusion, IgnoredPixelsSkippedAndBadIdsRejected) {
  ConfusionMatrix cm(2);
  cm.accumulate(LabelMap(1, 1, 3, std::vector<int>{0, 255, 1}), LabelMap(1, 1, 3, std::vector<int>{0, 1, 0}), 255);
  EXPECT_EQ(cm.total(), 2u);
  EXPECT_THROW(cm.accumulate(LabelMap(1, 1, 1, 5), LabelMap(1, 1, 1, 0)), Error);
}

TEST(Confusion, PartitionAdditivity) {
  std::mt19937_64 rng(1);
  std::vector<LabelMap> truth, pred;
  for (int i = 0; i < 10; ++i) {
    LabelMap t(1, 4, 5, 0), p(1, 4, 5, 0);
    for (auto& v : t.ids) v = static_cast<int>(rng() % 4);
    for (auto& v : p.ids) v = static_cast<int>(rng() % 4);
    truth.push_back(t);
    pred.push_back(p);
  }
  ConfusionMatrix whole(4), left(4), right(4);
  for (int i = 0; i < 10; ++i) {
    whole.accumulate(truth[static_cast<std::size_t>(i)], pred[static_cast<std::size_t>(i)]);
    (i % 3 ? left : right).accumulate(truth[static_cast<std::size_t>(i)], pred[static_cast<std::size_t>(i)]);
  }
  left += right;
  EXPECT_EQ(left, whole);
  EXPECT_EQ(whole.total(), 200u);
}

TEST(Argmax, TiesGoToLowestId) {
  Tensor<double> s(Shape{1, 1, 3, 3}, std::vector<double>{1, 1, 0, 0, 2, 2, 5, 1, 5});
  EXPECT_EQ(argmax_labels(s).ids, (std::vector<int>{0, 1, 0}));
}

TEST(ClassMetrics, HandExample) {
  const auto m = class_metrics(from_rows({{3, 1}, {2, 4}}));
  EXPECT_DOUBLE_EQ(*m[0].precision, 3.0 / 5);
  EXPECT_DOUBLE_EQ(*m[0].recall, 3.0 / 4);
  EXPECT_DOUBLE_EQ(*m[0].iou, 3.0 / 6);
  EXPECT_DOUBLE_EQ(*m[1].precision, 4.0 / 5);
  EXPECT_DOUBLE_EQ(*m[1].recall, 4.0 / 6);
  EXPECT_DOUBLE_EQ(*m[1].iou, 4.0 / 7);
}

TEST(ClassMetrics, DiagonalIsPerfectAndAbsentIsUndefined) {
  const auto m = class_metrics(from_rows({{5, 0, 0}, {0, 2, 0}, {0, 0, 0}}));
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(*m[static_cast<std::size_t>(k)].precision, 1.0);
    EXPECT_EQ(*m[static_cast<std::size_t>(k)].recall, 1.0);
    EXPECT_EQ(*m[static_cast<std::size_t>(k)].iou, 1.0);
  }
  EXPECT_FALSE(m[2].precision);
  EXPECT_FALSE(m[2].recall);
  EXPECT_FALSE(m[2].iou);
}

TEST(ClassMetrics, IouBoundedByPrecisionAndRecall) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionMatrix cm(5);
    for (std::size_t g = 0; g < 5; ++g)
      for (std::size_t p = 0; p < 5; ++p) cm(g, p) = rng() % 4 ? rng() % 50 : 0;
    for (const auto& m : class_metrics(cm)) {
      if (m.iou) {
        EXPECT_LE(*m.iou, *m.precision);
        EXPECT_LE(*m.iou, *m.recall);
        EXPECT_GE(*m.iou, 0.0);
      }
    }
  }
}

TEST(GroupReport, HandComputedGroupMeans) {
  // classes 0..5; groups {0,1}, {2,3}, {4,5}; class 5 absent everywhere
  const auto cm = from_rows({{8, 2, 0, 0, 0, 0},
                             {0, 4, 0, 0, 0, 0},
                             {0, 0, 3, 1, 0, 0},
                             {0, 0, 1, 3, 0, 0},
                             {0, 0, 0, 0, 1, 0},
                             {0, 0, 0, 0, 0, 0}});
  std::vector<ClassDef> cls;
  for (int i = 0; i < 6; ++i) cls.push_back({i, "c" + std::to_string(i)});
  ImportanceHierarchy h(cls, {{0, 1}, {2, 3}, {4, 5}});
  const auto r = group_report(cm, h);
  // class 0: p 1, r 0.8, iou 0.8; class 1: p 4/6, r 1, iou 4/6
  EXPECT_DOUBLE_EQ(*r.per_group[0].precision, (1.0 + 4.0 / 6) / 2);
  EXPECT_DOUBLE_EQ(*r.per_group[0].recall, (0.8 + 1.0) / 2);
  EXPECT_DOUBLE_EQ(*r.per_group[0].iou, (0.8 + 4.0 / 6) / 2);
  EXPECT_DOUBLE_EQ(*r.per_group[1].recall, 0.75);
  EXPECT_DOUBLE_EQ(*r.per_group[1].iou, 0.6);
  // class 5 excluded from the mean rather than counted as 0 or 1
  EXPECT_DOUBLE_EQ(*r.per_group[2].recall, 1.0);
  EXPECT_DOUBLE_EQ(*r.overall.recall, (0.8 + 1.0 + 0.75 + 0.75 + 1.0) / 5);
}

TEST(GroupReport, SelfDeltaIsZeroAndSingleGroupIsOverall) {
  const auto cm = from_rows({{3, 1}, {2, 4}});
  const auto base = group_report(cm, two_classes(2));
  const auto d = group_report(cm, two_classes(2), &base);
  for (const auto& g : *d.group_deltas) {
    EXPECT_EQ(*g.precision, 0.0);
    EXPECT_EQ(*g.recall, 0.0);
    EXPECT_EQ(*g.iou, 0.0);
  }
  const auto single = group_report(cm, two_classes(1));
  EXPECT_EQ(*single.per_group[0].iou, *single.overall.iou);
  EXPECT_EQ(*single.per_group[0].recall, *single.overall.recall);
}

TEST(GroupReport, MeanIouInvariantUnderRelabeling) {
  const auto cm = from_rows({{5, 1, 2}, {0, 7, 3}, {4, 0, 9}});
  const std::vector<std::size_t> perm{2, 0, 1};
  ConfusionMatrix pc(3);
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t p = 0; p < 3; ++p) pc(perm[g], perm[p]) = cm(g, p);
  std::vector<ClassDef> cls{{0, "a"}, {1, "b"}, {2, "c"}};
  ImportanceHierarchy h(cls, {{0, 1, 2}});
  EXPECT_NEAR(*group_report(cm, h).overall.iou, *group_report(pc, h).overall.iou, 1e-15);
}

TEST(Reports, JsonAndCsv) {
  const auto cm = from_rows({{3, 1}, {2, 4}});
  const auto base = group_report(from_rows({{4, 0}, {3, 3}}), two_classes(2));
  const auto r = group_report(cm, two_classes(2), &base);
  const auto j = report_to_json(r, "run7");
  EXPECT_EQ(j["run_id"], "run7");
  EXPECT_EQ(j["groups"].size(), 2u);
  EXPECT_TRUE(j.contains("deltas"));
  const auto back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.confusion, cm);
  EXPECT_EQ(back.hierarchy, r.hierarchy);
  EXPECT_EQ(report_to_csv(back), report_to_csv(r));
  EXPECT_EQ(report_to_csv(r),
            "class,name,group,precision,recall,iou\n"
            "0,a,1,0.600000,0.750000,0.500000\n"
            "1,b,2,0.800000,0.666667,0.571429\n");
  EXPECT_THROW(report_from_json(nlohmann::json{{"confusion", 1}}), Error);
}

TEST(Reports, VerdictLines) {
  const auto base = group_report(from_rows({{4, 0}, {3, 3}}), two_classes(2));
  const auto r = group_report(from_rows({{3, 1}, {2, 4}}), two_classes(2), &base);
  const auto lines = verdict_lines(r);
  ASSERT_EQ(lines.size(), 2u);
  // group 2 recall 4/6 vs 3/6, precision 4/5 vs 1, IoU 4/7 vs 3/6
  EXPECT_EQ(lines[0], "G2 recall: +16.7 points, precision: -20.0 points, IoU: +7.1 points");
  EXPECT_EQ(lines[1].substr(0, 3), "G1 ");
}

}  // namespace
}  // namespace ialseg
