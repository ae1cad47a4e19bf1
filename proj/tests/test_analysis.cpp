#include <gtest/gtest.h>

#include "crowdlabel/analysis.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace crowdlabel;
using crowdlabel::testing::make_annotation;
using crowdlabel::testing::resp;
using crowdlabel::testing::toy_table;

TEST(Confusion, IdentityAndConstantPredictor) {
  auto t = toy_table(2);
  auto id = confusion_matrix({{0, 0}, {1, 1}, {1, 1}}, t, Level::kClass);
  EXPECT_DOUBLE_EQ(id.value(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(id.value(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(id.value(0, 1), 0.0);
  auto zero = confusion_matrix({{0, 0}, {1, 0}}, t, Level::kClass);
  EXPECT_DOUBLE_EQ(zero.value(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(zero.value(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(zero.value(1, 1), 0.0);
  auto empty = confusion_matrix({{0, 0}}, t, Level::kClass);
  EXPECT_EQ(empty.empty_rows(), std::vector<std::size_t>{1});
  EXPECT_DOUBLE_EQ(empty.row_mass(1), 0.0);
}

TEST(Confusion, HumansWithMainEqualDatasetLabel) {
  auto t = toy_table(3);
  AnnotationMap anns{{"a", make_annotation("a", 0, {0, 2})}, {"b", make_annotation("b", 1, {1})}};
  auto m = confusion_matrix(human_main_decisions(anns, {"a", "b"}), t, Level::kClass);
  EXPECT_DOUBLE_EQ(m.value(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.value(1, 1), 1.0);
}

TEST(Confusion, SuperclassAggregationAndScopes) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto f = oracle::random_metric_fixture(s);
    auto d = model_decisions(f.preds, f.index, f.images);
    for (auto scope : {Scope::kFull, Scope::kIntra, Scope::kInter}) {
      auto cls = confusion_matrix(d, f.table, Level::kClass, scope);
      auto sup = confusion_matrix(d, f.table, Level::kSuperclass, scope);
      auto agg = aggregate_to_superclass(cls, f.table);
      for (std::size_t r = 0; r < sup.size; ++r)
        for (std::size_t c = 0; c < sup.size; ++c) ASSERT_NEAR(sup.value(r, c), agg.value(r, c), 1e-9);
    }
    auto full = confusion_matrix(d, f.table, Level::kClass, Scope::kFull);
    auto intra = confusion_matrix(d, f.table, Level::kClass, Scope::kIntra);
    auto inter = confusion_matrix(d, f.table, Level::kClass, Scope::kInter);
    for (std::size_t r = 0; r < full.size; ++r) {
      ASSERT_NEAR(full.row_mass(r), intra.row_mass(r) + inter.row_mass(r), 1e-12);
      for (std::size_t c = 0; c < full.size; ++c)
        ASSERT_NEAR(full.value(r, c), intra.value(r, c) + inter.value(r, c), 1e-12);
    }
  }
}

TEST(Confusion, SfArgmaxDecisions) {
  DatasetIndex index;
  index.add("a", 0);
  index.add("b", 1);
  SelectionFrequencyTable sft;
  sft.add("a", 0, 3, 9);
  sft.add("a", 1, 6, 9);
  sft.add("b", 1, 5, 9);
  sft.add("b", 0, 5, 9);
  auto d = human_sf_argmax_decisions(sft, index, {"a", "b", "c"});
  EXPECT_EQ(d, (Decisions{{0, 1}, {1, 0}}));
}

TEST(Cooccurrence, Fixtures) {
  auto t = toy_table(3, {"A", "A", "B"});
  AnnotationMap single{{"a", make_annotation("a", 0, {0})}, {"b", make_annotation("b", 1, {1})}};
  auto z = cooccurrence_matrix(single, t, Level::kClass);
  EXPECT_TRUE(z.coordinates().empty());

  AnnotationMap anns;
  for (int i = 0; i < 10; ++i) {
    auto id = "i" + std::to_string(i);
    anns.emplace(id, make_annotation(id, 0, i < 4 ? std::vector<ClassId>{0, 2} : std::vector<ClassId>{0}));
  }
  auto m = cooccurrence_matrix(anns, t, Level::kClass);
  EXPECT_DOUBLE_EQ(m.value(0, 2), 0.4);
  auto sup = cooccurrence_matrix(anns, t, Level::kSuperclass);
  EXPECT_DOUBLE_EQ(sup.value(0, 1), 0.4);
  auto top = top_cooccurring(m, 5);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].other, 2);

  AnnotationMap all;
  for (int i = 0; i < 3; ++i) {
    auto id = "x" + std::to_string(i);
    all.emplace(id, make_annotation(id, 1, {1, 2}));
  }
  EXPECT_DOUBLE_EQ(cooccurrence_matrix(all, t, Level::kClass).value(1, 2), 1.0);
}

TEST(Ambiguous, MinOfCrossMeans) {
  DatasetIndex index;
  index.add("i1", 1);
  index.add("i2", 1);
  index.add("j1", 2);
  index.add("k1", 3);
  SelectionFrequencyTable sft;
  sft.add("i1", 2, 9, 10);
  sft.add("i2", 2, 7, 10);  // mean 0.8
  sft.add("j1", 1, 6, 10);  // mean 0.6
  sft.add("k1", 1, 10, 10); // 3 -> 1 only: never cross-shown the other way
  sft.add("i1", 4, 10, 10);
  sft.add("j1", 5, 10, 10);
  auto pairs = ambiguous_pairs(sft, index, 10);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].first, 1);
  EXPECT_EQ(pairs[0].second, 2);
  EXPECT_DOUBLE_EQ(pairs[0].score, 0.6);

  // symmetric: relabeling swaps the directions, score unchanged
  DatasetIndex swapped;
  swapped.add("i1", 2);
  swapped.add("i2", 2);
  swapped.add("j1", 1);
  SelectionFrequencyTable sft2;
  sft2.add("i1", 1, 9, 10);
  sft2.add("i2", 1, 7, 10);
  sft2.add("j1", 2, 6, 10);
  EXPECT_DOUBLE_EQ(ambiguous_pairs(sft2, swapped, 10).at(0).score, 0.6);
}

TEST(SfAccuracy, RowsAndCorrelation) {
  auto t = toy_table(4);
  DatasetIndex index;
  SelectionFrequencyTable sft;
  std::map<ImageId, std::vector<ClassId>> ranked;
  index.add("a", 0), sft.add("a", 0, 10, 10), ranked["a"] = {0, 1, 2, 3};
  index.add("b", 1), sft.add("b", 1, 5, 10), ranked["b"] = {1, 0, 2, 3};
  index.add("c", 1), sft.add("c", 1, 10, 10), ranked["c"] = {0, 1, 2, 3};
  auto p = crowdlabel::testing::make_predictions("m", ranked);
  auto rows = sf_accuracy_table(sft, p, index, t);
  EXPECT_DOUBLE_EQ(*rows[0].mean_sf, 1.0);
  EXPECT_DOUBLE_EQ(*rows[0].accuracy, 1.0);
  EXPECT_DOUBLE_EQ(*rows[1].mean_sf, 0.75);
  EXPECT_DOUBLE_EQ(*rows[1].accuracy, 0.5);
  EXPECT_FALSE(rows[2].accuracy.has_value());

  // monotone fixture: ranks agree exactly
  EXPECT_DOUBLE_EQ(*spearman({0.1, 0.4, 0.5, 0.9}, {0.2, 0.3, 0.8, 0.85}), 1.0);
  EXPECT_DOUBLE_EQ(*spearman({1, 2, 3}, {3, 2, 1}), -1.0);
  // average ranks on ties: x ranks (1.5,1.5,3), y ranks (1,2,3) -> r = sqrt(3)/2
  EXPECT_NEAR(*spearman({1, 1, 2}, {1, 2, 3}), std::sqrt(3.0) / 2.0, 1e-12);
}

TEST(Mislabeled, BothLists) {
  DatasetIndex index;
  index.add("a", 0);
  index.add("b", 1);
  index.add("c", 2);
  SelectionFrequencyTable sft;
  sft.add("a", 0, 0, 9);
  sft.add("a", 3, 9, 9);
  sft.add("b", 1, 3, 9);
  std::vector<ClassifyResponse> rs{resp({4}, 4, "w1", "c-b"), resp({4, 5}, 4, "w2", "c-b"), resp({2}, 2, "w1", "c-c")};
  rs[0].image = rs[1].image = "b";
  rs[2].image = "c";
  auto rep = mislabeled_report(sft, index, rs);
  ASSERT_EQ(rep.sf_zero.size(), 1u);
  EXPECT_EQ(rep.sf_zero[0].image, "a");
  ASSERT_EQ(rep.never_selected.size(), 1u);
  EXPECT_EQ(rep.never_selected[0].image, "b");
  EXPECT_EQ(rep.never_selected[0].selected, 4);
}
