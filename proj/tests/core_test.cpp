#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "ttm/core.hpp"

namespace ttm {
namespace {

GroupedDataset two_by_two() {
  GroupedDataset d{{2, 2}, {}};
  d.groups.push_back({"g0", {"a0", "a1"}, {"c0", "c1"}, Matching::identity(2)});
  d.groups.push_back({"g1", {"b0", "b1"}, {"d0", "d1"}, Matching({1, 0})});
  return d;
}

EmbeddingTable table_for(const GroupedDataset& d) {
  EmbeddingTable t(2);
  const std::vector<double> v{1.0, 0.0};
  for (const auto& g : d.groups) {
    for (const auto& id : g.image_ids) t.add(id, v);
    for (const auto& id : g.caption_ids) t.add(id, v);
  }
  return t;
}

TEST(GroupShape, Invariants) {
  EXPECT_TRUE((GroupShape{2, 2}).valid());
  EXPECT_TRUE((GroupShape{1, 4}).valid());
  EXPECT_FALSE((GroupShape{3, 2}).valid());
  EXPECT_FALSE((GroupShape{0, 2}).valid());
  EXPECT_THROW(make_shape(3, 2), Error);
}

TEST(SimilarityMatrix, RejectsNonFiniteAndWrongSize) {
  EXPECT_THROW(SimilarityMatrix({2, 2}, {1.0, 2.0, 3.0}), Error);
  EXPECT_THROW(SimilarityMatrix({1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), Error);
  EXPECT_THROW(SimilarityMatrix({1, 2}, {1.0, std::numeric_limits<double>::infinity()}), Error);
  const SimilarityMatrix s{{0.9, 0.1}, {0.2, 0.8}};
  EXPECT_EQ(s.rows(), 2u);
  EXPECT_DOUBLE_EQ(s(1, 0), 0.2);
}

TEST(Matching, InjectivityAndRange) {
  EXPECT_FALSE(Matching({0, 1}).check({2, 2}).has_value());
  EXPECT_EQ(*Matching({0, 0}).check({2, 2}), "non-injective matching");
  EXPECT_TRUE(Matching({0, 4}).check({2, 4}).has_value());
  EXPECT_TRUE(Matching({0}).check({2, 2}).has_value());
}

TEST(Matching, ComposeWithInverseIsIdentity) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(8);
    std::vector<std::size_t> a(k);
    std::iota(a.begin(), a.end(), 0);
    rng.shuffle(a);
    const Matching pi(a);
    EXPECT_TRUE(compose(pi, pi.inverse()).is_identity());
    EXPECT_TRUE(compose(pi.inverse(), pi).is_identity());
  }
}

TEST(ValidateDataset, WellFormed) {
  const auto d = two_by_two();
  EXPECT_FALSE(validate_dataset(d, table_for(d)).has_value());
}

TEST(ValidateDataset, DuplicateCaptionId) {
  auto d = two_by_two();
  const auto table = table_for(d);
  d.groups[0].caption_ids[1] = "c0";
  const auto v = validate_dataset(d, table);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->kind, ViolationKind::kDuplicateId);
  EXPECT_NE(v->message.find("duplicate id"), std::string::npos);
}

TEST(ValidateDataset, NonInjectiveGroundTruth) {
  auto d = two_by_two();
  d.groups[0].ground_truth = Matching({0, 0});
  const auto v = validate_dataset(d, table_for(d));
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->kind, ViolationKind::kNonInjectiveMatching);
  EXPECT_NE(v->message.find("non-injective matching"), std::string::npos);
}

TEST(ValidateDataset, ShapeMismatchAndUnresolvable) {
  auto d = two_by_two();
  auto table = table_for(d);
  d.groups[1].caption_ids.push_back("d2");
  auto v = validate_dataset(d, table);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->kind, ViolationKind::kShapeMismatch);

  d = two_by_two();
  d.groups[1].image_ids[0] = "missing";
  v = validate_dataset(d, table);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->kind, ViolationKind::kUnresolvableId);
  EXPECT_NE(v->message.find("missing"), std::string::npos);
}

TEST(ValidateDataset, ScoreStoreChecks) {
  const auto d = two_by_two();
  ScoreStore store;
  store.emplace("g0", SimilarityMatrix{{1, 0}, {0, 1}});
  auto v = validate_dataset(d, store);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->kind, ViolationKind::kUnresolvableId);
  store.emplace("g1", SimilarityMatrix{{1, 0, 0}});
  v = validate_dataset(d, store);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->kind, ViolationKind::kShapeMismatch);
}

TEST(EmbeddingTable, RejectsBadRows) {
  EmbeddingTable t(3);
  const std::vector<double> ok{1, 2, 3};
  t.add("x", ok);
  EXPECT_THROW(t.add("x", ok), Error);
  const std::vector<double> short_row{1, 2};
  EXPECT_THROW(t.add("y", short_row), Error);
  const std::vector<double> nan_row{1, std::nan(""), 3};
  EXPECT_THROW(t.add("z", nan_row), Error);
  EXPECT_EQ(t["x"][2], 3.0);
  EXPECT_THROW(t.index_of("nope"), Error);
}

TEST(FlatDataset, Validation) {
  FlatDataset f{{"a", "b"}, {"x"}, std::nullopt};
  EXPECT_TRUE(validate_flat(f).has_value());
  f.caption_ids = {"x", "y"};
  f.ground_truth = Matching({1, 1});
  ASSERT_TRUE(validate_flat(f).has_value());
  EXPECT_EQ(validate_flat(f)->kind, ViolationKind::kNonInjectiveMatching);
  f.ground_truth = Matching({1, 0});
  EXPECT_FALSE(validate_flat(f).has_value());
}

}  // namespace
}  // namespace ttm
