#include <gtest/gtest.h>

#include "spacevlm/analysis.hpp"
#include "spacevlm/synth.hpp"
#include "test_support.hpp"

using namespace spacevlm;
using spacevlm::testing::TempDir;

namespace {

constexpr double kDirX = 0.944616803216341594;
constexpr double kDirY = 0.328175402919443949;

TextEmbedder plane_text() {
  return [](const std::string& c) {
    if (c == "A photo of a cat") return UnitVector::normalize({1.0, 0.0});
    if (c == "A photo of a dog") return UnitVector::normalize({0.0, 1.0});
    throw Error(ErrorCode::UnresolvableCaption, c);
  };
}

EmbeddingStore labeled(std::vector<std::string> labels) {
  std::vector<StoreItem> items;
  std::vector<float> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    items.push_back({"i" + std::to_string(i), {labels[i]}, {}});
    rows.insert(rows.end(), {1.0f, static_cast<float>(i)});
  }
  return EmbeddingStore::create(2, items, rows);
}

}  // namespace

TEST(ThresholdGrid, InclusiveAndValidated) {
  const auto g = threshold_grid(0.90, 0.95, 6);
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g.front(), 0.90);
  EXPECT_EQ(g.back(), 0.95);
  EXPECT_NEAR(g[1], 0.91, 1e-15);
  EXPECT_THROW(threshold_grid(0.9, 0.95, 1), Error);
  EXPECT_THROW(threshold_grid(0.95, 0.9, 3), Error);
  EXPECT_THROW(threshold_grid(0.5, 1.0, 3), Error);
}

TEST(ThresholdSweep, ConstantMetricHasNoDrop) {
  const auto r = threshold_sweep([](double) { return 0.75; }, 0.9, 0.95, 6);
  EXPECT_EQ(r.max_drop, 0.0);
  EXPECT_EQ(r.relative_drop(), 0.0);
  EXPECT_EQ(r.argmax_t, 0.9);
}

TEST(ThresholdSweep, DropAndArgmax) {
  const auto r = threshold_sweep([](double t) { return 1.0 - std::abs(t - 0.92); }, 0.90, 0.95, 6);
  EXPECT_NEAR(r.argmax_t, 0.92, 1e-12);
  EXPECT_NEAR(r.max_drop, 0.03, 1e-12);
  EXPECT_NEAR(r.relative_drop(), 0.03, 1e-12);
  EXPECT_EQ(sweep_csv(r).substr(0, 26), "t,metric\n0.900000,0.980000");
}

TEST(ThresholdSweep, DeterministicOnPlantedBench) {
  BenchmarkSpec spec;
  spec.mcq_per_template = 30;
  const auto b = build_benchmark(spec);
  StoreTextEmbedder embed(b.text);
  const auto r1 = threshold_sweep(b.mcq, b.scenes, embed, 0.90, 0.95, 6, EvalConfig{});
  const auto r2 = threshold_sweep(b.mcq, b.scenes, embed, 0.90, 0.95, 6, EvalConfig{});
  EXPECT_EQ(r1.metric_per_t, r2.metric_per_t);
  EXPECT_EQ(to_json(r1).dump(), to_json(r2).dump());
  EXPECT_THROW(threshold_sweep(b.mcq, b.scenes, embed, 0.9, 0.95, 6, EvalConfig{},
                               SweepMetric::RecallNegated),
               Error);
}

TEST(Entropy, ClosedForms) {
  EXPECT_EQ(label_entropy_bits({"a", "a", "a", "a", "a"}), 0.0);
  EXPECT_NEAR(label_entropy_bits({"a", "b", "c", "d", "e"}), std::log2(5.0), 1e-15);
  EXPECT_NEAR(label_entropy_bits({"a", "a", "b", "b", "c"}), 1.52192809488736235, 1e-14);
}

TEST(Entropy, UsesFirstLabelAndTopK) {
  std::vector<StoreItem> items{{"x", {"cat", "dog"}, {}}, {"y", {"dog"}, {}}, {"z", {"cat"}, {}}};
  const auto store = EmbeddingStore::create(2, items, {1, 0, 0, 1, 1, 1});
  const auto r = topk_entropy({{"q", {"x", "z", "y"}}}, store, 2);
  ASSERT_EQ(r.per_query.size(), 1u);
  EXPECT_EQ(r.per_query[0].top_k_labels, (std::vector<std::string>{"cat", "cat"}));
  EXPECT_EQ(r.mean_entropy, 0.0);
  const auto r3 = topk_entropy({{"q", {"x", "z", "y"}}, {"p", {"x"}}}, store, 3);
  EXPECT_NEAR(r3.per_query[0].entropy_bits, -(2.0 / 3) * std::log2(2.0 / 3) - (1.0 / 3) * std::log2(1.0 / 3), 1e-15);
  EXPECT_NEAR(r3.mean_entropy, r3.per_query[0].entropy_bits / 2, 1e-15);
}

TEST(Entropy, UnlabeledItem) {
  const auto store = EmbeddingStore::create(2, {{"x", {}, {}}}, {1, 0});
  try {
    topk_entropy({{"q", {"x"}}}, store, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnlabeledItem);
  }
}

TEST(Entropy, BoundedByLogK) {
  const auto store = labeled({"a", "b", "c", "d", "e", "f", "g"});
  const auto r = entropy_for_captions({"A photo of a cat"}, store, plane_text(), EvalConfig{}, 5);
  EXPECT_LE(r.mean_entropy, std::log2(5.0) + 1e-12);
  EXPECT_EQ(r.per_query[0].top_k_labels.size(), 5u);
}

TEST(ExportQuery, NegationFreeEqualsPlainEmbedding) {
  TempDir dir("export");
  export_query_vector("A photo of a dog", plane_text(), EvalConfig{}, dir / "q.svec", dir / "q.json");
  const auto s = read_store(dir / "q.svec", dir / "q.json");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.row(0)[0], 0.0f);
  EXPECT_EQ(s.row(0)[1], 1.0f);
  EXPECT_EQ(s.item(0).caption, "A photo of a dog");
}

TEST(ExportQuery, ButNotMatchesDirection) {
  TempDir dir("export");
  EvalConfig cfg;
  cfg.threshold_t = 0.9;
  export_query_vector("A photo of a cat but not a dog", plane_text(), cfg, dir / "q.svec", dir / "q.json");
  const auto s = read_store(dir / "q.svec", dir / "q.json");
  EXPECT_NEAR(s.row(0)[0], kDirX, 1e-7);
  EXPECT_NEAR(s.row(0)[1], kDirY, 1e-7);
}

TEST(ExportQuery, UnresolvableWritesNothing) {
  TempDir dir("export");
  EXPECT_THROW(export_query_vector("A photo of a cat but not a horse", plane_text(), EvalConfig{},
                                   dir / "q.svec", dir / "q.json"),
               Error);
  EXPECT_FALSE(std::filesystem::exists(dir / "q.svec"));
  EXPECT_FALSE(std::filesystem::exists(dir / "q.json"));
}
