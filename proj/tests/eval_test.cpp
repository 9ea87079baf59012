#include <gtest/gtest.h>

#include <random>

#include "spacevlm/eval.hpp"
#include "test_support.hpp"

using namespace spacevlm;
using spacevlm::testing::random_unit;
using spacevlm::testing::TempDir;

namespace {

constexpr double kDirX = 0.944616803216341594;
constexpr double kDirY = 0.328175402919443949;

void expect_code(ErrorCode code, auto&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

TextEmbedder table(std::map<std::string, UnitVector> m) {
  return [m = std::move(m)](const std::string& c) {
    auto it = m.find(c);
    if (it == m.end()) throw Error(ErrorCode::UnresolvableCaption, c);
    return it->second;
  };
}

UnitVector v(std::initializer_list<double> xs) { return UnitVector::normalize(xs); }

EmbeddingStore store_of(std::vector<std::pair<std::string, UnitVector>> rows) {
  std::vector<StoreItem> items;
  std::vector<UnitVector> vecs;
  for (auto& [id, vec] : rows) {
    items.push_back({id, {}, std::nullopt});
    vecs.push_back(vec);
  }
  return EmbeddingStore::from_vectors(std::move(items), vecs);
}

}  // namespace

TEST(BuildQuery, NoCueIsPassthrough) {
  const auto e = v({0.3, -0.2, 0.9});
  const auto q = build_query("A photo of a cat", table({{"A photo of a cat", e}}), 0.9);
  EXPECT_EQ(q.direction(), e);
  EXPECT_FALSE(q.negated_embedding());
}

TEST(BuildQuery, ButNotUsesNegationDirection) {
  const auto q = build_query("A photo of a cat but not a dog",
                             table({{"A photo of a cat", v({1, 0})}, {"A photo of a dog", v({0, 1})}}),
                             0.9);
  EXPECT_NEAR(q.direction()[0], kDirX, 1e-12);
  EXPECT_NEAR(q.direction()[1], kDirY, 1e-12);
}

TEST(BuildQuery, IdenticalPartsAreIndistinguishable) {
  const auto e = v({1, 2, 3});
  expect_code(ErrorCode::ConceptsIndistinguishable, [&] {
    build_query("A photo of a cat but not a dog",
                table({{"A photo of a cat", e}, {"A photo of a dog", e}}), 0.9);
  });
}

TEST(BuildQuery, MissingEmbeddingIsUnresolvable) {
  expect_code(ErrorCode::UnresolvableCaption,
              [&] { build_query("A photo of a cat", table({}), 0.9); });
}

TEST(StoreTextEmbedder, CaptionThenId) {
  std::vector<StoreItem> items{{"t0", {}, "A photo of a cat"}, {"t1", {}, std::nullopt}};
  const auto s = EmbeddingStore::create(2, items, {1.f, 0.f, 0.f, 1.f});
  StoreTextEmbedder embed(s);
  EXPECT_EQ(embed("A photo of a cat").vec(), (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(embed("t1").vec(), (std::vector<double>{0.0, 1.0}));
  expect_code(ErrorCode::UnresolvableCaption, [&] { embed("nothing"); });
}

TEST(Rank, NegatedQueryPrefersAffirmativeItem) {
  const auto s = store_of({{"n", v({0, 1})}, {"a", v({1, 0})}});
  const auto q = NegationQuery::negated(v({1, 0}), v({0, 1}), 0.9);
  const auto r = rank(q, s);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].id, "a");
  EXPECT_NEAR(r[0].score, kDirX, 1e-6);
  EXPECT_NEAR(r[1].score, kDirY, 1e-6);
}

TEST(Rank, TiesBrokenById) {
  const auto s = store_of({{"b", v({1, 1})}, {"a", v({1, 1})}, {"c", v({0, 1})}});
  const auto r = rank(NegationQuery::affirmative(v({1, 1})), s);
  EXPECT_EQ(r[0].id, "a");
  EXPECT_EQ(r[1].id, "b");
  EXPECT_EQ(r[2].id, "c");
}

TEST(Rank, EmptyCorpus) {
  const auto s = EmbeddingStore::create(2, {}, {});
  EXPECT_TRUE(rank(NegationQuery::affirmative(v({1, 0})), s).empty());
}

TEST(Rank, DimensionMismatch) {
  const auto s = store_of({{"a", v({1, 0})}});
  expect_code(ErrorCode::DimensionMismatch,
              [&] { rank(NegationQuery::affirmative(v({1, 0, 0})), s); });
}

TEST(Rank, PermutationAndThreadInvariance) {
  std::mt19937_64 rng(5);
  std::vector<std::pair<std::string, UnitVector>> rows;
  for (int i = 0; i < 9000; ++i) {
    // Quantized vectors make exact ties common.
    auto u = random_unit(rng, 4);
    std::vector<double> q(4);
    for (int d = 0; d < 4; ++d) q[d] = std::round(u[d] * 2.0);
    if (q == std::vector<double>(4, 0.0)) q[0] = 1.0;
    rows.emplace_back("id" + std::to_string(i), UnitVector::normalize(q));
  }
  const auto query = NegationQuery::affirmative(random_unit(rng, 4));
  const auto s1 = store_of(rows);
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto s2 = store_of(rows);
  const auto r1 = rank(query, s1);
  const auto r2 = rank(query, s2, 4);
  ASSERT_EQ(r1.size(), r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) {
    ASSERT_EQ(r1[i].id, r2[i].id);
    ASSERT_EQ(r1[i].score, r2[i].score);
  }
  const auto top = rank_top(query, s2, 50, 3);
  for (std::size_t i = 0; i < top.size(); ++i) EXPECT_EQ(top[i].id, r1[i].id);
}

TEST(Recall, Basics) {
  const std::vector<std::string> ranking{"a", "b", "c", "d", "e", "f", "g"};
  EXPECT_EQ(recall_at_k(ranking, {"a"}, 1), 1);
  EXPECT_EQ(recall_at_k(ranking, {"f"}, 5), 0);
  EXPECT_EQ(recall_at_k(ranking, {"f"}, 10), 1);
  EXPECT_THROW(recall_at_k(ranking, {"f"}, 0), Error);
}

TEST(McqSelect, NegatedCandidateWinsOnFishOnlyImage) {
  const auto fish = v({1, 0, 0}), coral = v({0, 1, 0});
  const auto image = fish;
  std::vector<NegationQuery> cands{
      NegationQuery::affirmative(v({1, 1, 0})),  // fish and coral, plain embedding
      NegationQuery::negated(fish, coral, 0.9),
  };
  EXPECT_NEAR(score(image, cands[0]), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(score(image, cands[1]), kDirX, 1e-12);
  EXPECT_EQ(mcq_select(image, cands), 1u);
}

TEST(McqSelect, TiesPickFirstAndScalingChangesNothing) {
  const auto d = v({0.2, 0.7, 0.1});
  std::vector<NegationQuery> same{NegationQuery::affirmative(d), NegationQuery::affirmative(d),
                                  NegationQuery::affirmative(d)};
  EXPECT_EQ(mcq_select(v({1, 0, 0}), same), 0u);
  expect_code(ErrorCode::InvalidArgument, [&] {
    mcq_select(v({1, 0, 0}), std::vector<NegationQuery>{NegationQuery::affirmative(d)});
  });
}

TEST(McqSelect, BinaryItemPicksAffirmative) {
  const auto finding = v({1, 0, 0.2});
  const auto image = v({1, 0.05, 0.2});
  std::vector<NegationQuery> cands{NegationQuery::affirmative(finding),
                                   NegationQuery::negated(v({0, 0, 1}), finding, 0.9)};
  EXPECT_EQ(mcq_select(image, cands), 0u);
}

TEST(TaskIo, RoundTripAndErrors) {
  TempDir dir("tasks");
  std::vector<RetrievalQuery> tasks{{"q0", "A photo of a cat", {"i1", "i2"}, false},
                                    {"q1", "A photo of a cat but not a dog", {"i1"}, true}};
  write_file_atomic(dir / "r.jsonl", retrieval_tasks_text(tasks));
  EXPECT_EQ(read_retrieval_tasks(dir / "r.jsonl"), tasks);

  std::vector<McqItem> items{{"img", {{"x", Template::Affirmation}, {"y", Template::Hybrid}}, 1}};
  write_file_atomic(dir / "m.jsonl", mcq_tasks_text(items));
  EXPECT_EQ(read_mcq_tasks(dir / "m.jsonl"), items);

  write_file_atomic(dir / "bad.jsonl", R"({"query_id":"q","caption":"c","relevant_ids":[],"is_negated":false})");
  expect_code(ErrorCode::TaskFormat, [&] { read_retrieval_tasks(dir / "bad.jsonl"); });
  write_file_atomic(dir / "bad.jsonl", R"({"image_id":"i","candidates":[{"text":"a","template":"affirmation"},{"text":"b","template":"odd"}],"answer":0})");
  expect_code(ErrorCode::TaskFormat, [&] { read_mcq_tasks(dir / "bad.jsonl"); });
  write_file_atomic(dir / "bad.jsonl", R"({"image_id":"i","candidates":[{"text":"a","template":"affirmation"},{"text":"b","template":"negation"}],"answer":2})");
  expect_code(ErrorCode::TaskFormat, [&] { read_mcq_tasks(dir / "bad.jsonl"); });
  write_file_atomic(dir / "bad.jsonl", "{oops");
  expect_code(ErrorCode::TaskFormat, [&] { read_mcq_tasks(dir / "bad.jsonl"); });
}

namespace {

struct Fixture {
  EmbeddingStore images = EmbeddingStore::create(2, {}, {});
  TextEmbedder embed;
};

// Three images on the plane; captions map to axis directions.
Fixture small_world() {
  Fixture f;
  f.images = store_of({{"cat", v({1, 0})}, {"dog", v({0, 1})}, {"both", v({1, 1})}});
  f.embed = table({{"A photo of a cat", v({1, 0})},
                   {"A photo of a dog", v({0, 1})},
                   {"This is a photo", v({1, 1})}});
  return f;
}

}  // namespace

TEST(RetrievalEval, BucketsAndMeans) {
  auto f = small_world();
  std::vector<RetrievalQuery> tasks{
      {"q0", "A photo of a cat", {"cat"}, false},
      {"q1", "A photo of a dog", {"cat"}, false},
      {"q2", "A photo of a cat but not a dog", {"cat"}, true},
  };
  EvalConfig cfg;
  cfg.k_list = {1, 2};
  cfg.per_query = true;
  const auto r = run_retrieval_eval(tasks, f.images, f.embed, cfg);
  EXPECT_EQ(r.affirmative.count, 2u);
  EXPECT_EQ(r.negated.count, 1u);
  EXPECT_DOUBLE_EQ(r.affirmative.recall(1), 0.5);
  EXPECT_DOUBLE_EQ(r.negated.recall(1), 1.0);
  const auto j = report_json(r);
  EXPECT_EQ(j["recall_at_k"]["affirmative"]["1"], 0.5);
  EXPECT_EQ(j["config"]["threshold_t"], 0.92);
  EXPECT_EQ(j["config"]["variant"], "slerp-center");
  ASSERT_EQ(j["per_query"].size(), 3u);
  EXPECT_EQ(j["per_query"][2]["top_ids"][0], "cat");
}

TEST(RetrievalEval, EmptyTaskList) {
  auto f = small_world();
  const auto j = report_json(run_retrieval_eval({}, f.images, f.embed, EvalConfig{}));
  EXPECT_EQ(j["counts"]["affirmative"], 0);
  EXPECT_EQ(j["counts"]["negated"], 0);
  EXPECT_TRUE(j["recall_at_k"].empty());
}

TEST(RetrievalEval, UnknownRelevantId) {
  auto f = small_world();
  expect_code(ErrorCode::UnknownId, [&] {
    run_retrieval_eval({{"q", "A photo of a cat", {"zebra"}, false}}, f.images, f.embed, {});
  });
}

TEST(RetrievalEval, AffirmativeReportsMatchPlain) {
  std::mt19937_64 rng(11);
  std::vector<std::pair<std::string, UnitVector>> rows;
  std::map<std::string, UnitVector> text;
  std::vector<RetrievalQuery> tasks;
  for (int i = 0; i < 200; ++i) rows.emplace_back("img" + std::to_string(i), random_unit(rng, 16));
  for (int i = 0; i < 60; ++i) {
    const std::string cap = "A photo of thing " + std::to_string(i);
    text.emplace(cap, random_unit(rng, 16));
    tasks.push_back({"q" + std::to_string(i), cap, {"img" + std::to_string(rng() % 200)}, false});
  }
  const auto images = store_of(rows);
  EvalConfig on, off;
  on.per_query = off.per_query = true;
  off.scorer = Scorer::Plain;
  const auto a = report_results_json(run_retrieval_eval(tasks, images, table(text), on));
  const auto b = report_results_json(run_retrieval_eval(tasks, images, table(text), off));
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(RetrievalEval, RecallMonotoneInK) {
  std::mt19937_64 rng(3);
  std::vector<std::pair<std::string, UnitVector>> rows;
  std::map<std::string, UnitVector> text;
  std::vector<RetrievalQuery> tasks;
  for (int i = 0; i < 100; ++i) rows.emplace_back("img" + std::to_string(i), random_unit(rng, 8));
  for (int i = 0; i < 40; ++i) {
    const std::string cap = "A photo of thing " + std::to_string(i);
    text.emplace(cap, random_unit(rng, 8));
    tasks.push_back({"q" + std::to_string(i), cap,
                     {"img" + std::to_string(rng() % 100), "img" + std::to_string(rng() % 100)},
                     false});
  }
  EvalConfig cfg;
  cfg.k_list = {1, 2, 3, 5, 10, 20, 50};
  const auto r = run_retrieval_eval(tasks, store_of(rows), table(text), cfg);
  for (std::size_t i = 1; i < cfg.k_list.size(); ++i) {
    EXPECT_LE(r.affirmative.recall(cfg.k_list[i - 1]), r.affirmative.recall(cfg.k_list[i]));
  }
}

TEST(McqEval, IdenticalCandidatesPickIndexZero) {
  auto f = small_world();
  std::vector<McqItem> items;
  for (std::size_t a = 0; a < 4; ++a) {
    items.push_back({"cat",
                     {{"A photo of a dog", Template::Negation},
                      {"A photo of a dog", Template::Negation},
                      {"A photo of a dog", Template::Negation},
                      {"A photo of a dog", Template::Negation}},
                     a});
  }
  const auto r = run_mcq_eval(items, f.images, f.embed, {});
  EXPECT_DOUBLE_EQ(r.negation.accuracy(), 0.25);
}

TEST(McqEval, BinaryItemsGiveTwoBuckets) {
  auto f = small_world();
  std::vector<McqItem> items{
      {"cat", {{"A photo of a cat", Template::Affirmation}, {"Not a photo of a cat", Template::Negation}}, 0},
      {"dog", {{"A photo of a cat", Template::Affirmation}, {"Not a photo of a cat", Template::Negation}}, 1},
  };
  const auto r = run_mcq_eval(items, f.images, f.embed, {});
  const auto j = report_json(r);
  const auto& acc = j["mcq_accuracy"];
  EXPECT_EQ(acc.size(), 3u);  // two buckets plus the average
  EXPECT_TRUE(acc.contains("affirmation"));
  EXPECT_TRUE(acc.contains("negation"));
  EXPECT_FALSE(acc.contains("hybrid"));
  EXPECT_EQ(acc["average"], 1.0);
}

TEST(Report, RoundsAtSerializationOnly) {
  EvalReport r;
  r.kind = EvalReport::Kind::Mcq;
  r.affirmation = {3, 1};
  r.negation = {3, 2};
  EXPECT_DOUBLE_EQ(*r.mcq_average(), 0.5);
  const auto j = report_json(r);
  EXPECT_EQ(j["mcq_accuracy"]["affirmation"], 0.3333);
  EXPECT_EQ(j["mcq_accuracy"]["negation"], 0.6667);
  EXPECT_EQ(j["mcq_accuracy"]["average"], 0.5);
}
