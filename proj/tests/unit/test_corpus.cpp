#include <gtest/gtest.h>

#include <fstream>

#include "support/oracles.hpp"

using namespace nicekit;

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream(p) << content;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidValue;
}

}  // namespace

TEST(LoadPool, ThreeRows) {
  fixture::TempDir dir;
  write_file(dir / "pool.jsonl",
             R"({"id":"a","input":"x","output":"positive","embedding":[1,0]}
{"id":"b","input":"y","output":"negative","embedding":[0,1]}

{"id":"c","input":"z","output":"positive","embedding":[1,1]}
)");
  auto pool = load_pool(dir / "pool.jsonl");
  EXPECT_EQ(pool.size(), 3u);
  EXPECT_EQ(pool.dimension(), 2u);
  EXPECT_EQ(pool[1].id, "b");
  EXPECT_EQ(pool.index_of("c"), 2u);
}

TEST(LoadPool, MissingOutputNamesRow) {
  fixture::TempDir dir;
  write_file(dir / "pool.jsonl", "{\"id\":\"a\",\"input\":\"x\",\"output\":\"o\"}\n{\"id\":\"b\",\"input\":\"y\"}\n");
  try {
    load_pool(dir / "pool.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingField);
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(LoadPool, DimensionMismatch) {
  fixture::TempDir dir;
  write_file(dir / "pool.jsonl",
             R"({"id":"a","input":"x","output":"o","embedding":[1,2,3,4]}
{"id":"b","input":"y","output":"o","embedding":[1,2,3,4,5]}
)");
  EXPECT_EQ(code_of([&] { load_pool(dir / "pool.jsonl"); }), ErrorCode::kDimensionMismatch);
}

TEST(LoadPool, ExpectedDimension) {
  fixture::TempDir dir;
  write_file(dir / "pool.jsonl", R"({"id":"a","input":"x","output":"o","embedding":[1,2]})"
                                 "\n");
  EXPECT_EQ(code_of([&] { load_pool(dir / "pool.jsonl", 3); }), ErrorCode::kDimensionMismatch);
}

TEST(LoadPool, DuplicateId) {
  fixture::TempDir dir;
  write_file(dir / "pool.jsonl", "{\"id\":\"a\",\"input\":\"x\",\"output\":\"o\"}\n{\"id\":\"a\",\"input\":\"y\",\"output\":\"o\"}\n");
  EXPECT_EQ(code_of([&] { load_pool(dir / "pool.jsonl"); }), ErrorCode::kDuplicateId);
}

TEST(LoadPool, UnreadableAndMalformed) {
  fixture::TempDir dir;
  EXPECT_EQ(code_of([&] { load_pool(dir / "absent.jsonl"); }), ErrorCode::kUnreadableFile);
  write_file(dir / "bad.jsonl", "{not json\n");
  EXPECT_TRUE(is_validation_error(code_of([&] { load_pool(dir / "bad.jsonl"); })));
}

TEST(LoadPool, RoundTrip) {
  fixture::TempDir dir;
  Rng rng(3);
  auto pool = fixture::labelled_pool(20, 5, rng);
  save_pool(pool, dir / "pool.jsonl");
  EXPECT_EQ(load_pool(dir / "pool.jsonl"), pool);
}

TEST(LoadQueries, FiftyRows) {
  fixture::TempDir dir;
  std::ofstream out(dir / "q.jsonl");
  for (int i = 0; i < 50; ++i) out << Json{{"id", "q" + std::to_string(i)}, {"input", "x"}, {"gold", "y"}}.dump() << '\n';
  out.close();
  EXPECT_EQ(load_queries(dir / "q.jsonl").size(), 50u);
}

TEST(LoadQueries, EmptyFileWarns) {
  fixture::TempDir dir;
  write_file(dir / "q.jsonl", "");
  std::vector<std::string> warnings;
  auto prev = log::set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  auto qs = load_queries(dir / "q.jsonl");
  log::set_warning_sink(prev);
  EXPECT_TRUE(qs.empty());
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(LoadQueries, DuplicateId) {
  fixture::TempDir dir;
  write_file(dir / "q.jsonl", "{\"id\":\"a\",\"input\":\"x\",\"gold\":\"o\"}\n{\"id\":\"a\",\"input\":\"y\",\"gold\":\"o\"}\n");
  EXPECT_EQ(code_of([&] { load_queries(dir / "q.jsonl"); }), ErrorCode::kDuplicateId);
}

TEST(TaskSpec, ValidationRules) {
  TaskSpec t = fixture::sentiment_task();
  EXPECT_NO_THROW(t.validate());
  t.label_space.reset();
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::kInvalidValue);
  t = fixture::generation_task();
  t.k_shots = 0;
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::kInvalidValue);
  t.k_shots = 4;
  t.num_bins = 1;
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::kInvalidValue);
}

TEST(TaskSpec, JsonRoundTrip) {
  auto t = fixture::sentiment_task();
  t.k_shots = 8;
  EXPECT_EQ(task_spec_from_json(to_json(t)), t);
  Json j = to_json(t);
  j.erase("k_shots");
  EXPECT_EQ(code_of([&] { task_spec_from_json(j); }), ErrorCode::kMissingField);
}

TEST(PoolLabels, OutsideSpace) {
  std::vector<Example> ex = {{"a", "x", "positive", std::nullopt}, {"b", "y", "meh", std::nullopt}};
  CandidatePool pool(ex);
  EXPECT_EQ(code_of([&] { validate_pool_labels(pool, fixture::sentiment_task()); }),
            ErrorCode::kLabelOutsideSpace);
  EXPECT_NO_THROW(validate_pool_labels(pool, fixture::generation_task()));
}

TEST(SampleQueries, DeterministicAndClamped) {
  Rng rng(1);
  auto qs = fixture::labelled_queries(100, 2, rng);
  auto a = sample_queries(qs, 50, 7), b = sample_queries(qs, 50, 7);
  ASSERT_EQ(a.size(), 50u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.queries[i].id, b.queries[i].id);
  EXPECT_NE(sample_queries(qs, 50, 8).queries[0].id + sample_queries(qs, 50, 8).queries[1].id,
            a.queries[0].id + a.queries[1].id);

  auto all = sample_queries(qs, 100, 3);
  std::set<std::string> ids;
  for (const auto& q : all.queries) ids.insert(q.id);
  EXPECT_EQ(ids.size(), 100u);
  EXPECT_EQ(sample_queries(qs, 500, 3).size(), 100u);
  EXPECT_EQ(code_of([&] { sample_queries(qs, 0, 3); }), ErrorCode::kInvalidValue);
}

TEST(SampleQueries, PropertyDistinctSubset) {
  Rng gen(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + gen.uniform_index(40), m = 1 + gen.uniform_index(50);
    auto qs = fixture::labelled_queries(n, 1, gen);
    auto s = sample_queries(qs, m, gen.next());
    EXPECT_EQ(s.size(), std::min(n, m));
    std::set<std::string> ids;
    for (const auto& q : s.queries) {
      EXPECT_TRUE(ids.insert(q.id).second);
      EXPECT_NE(std::find_if(qs.queries.begin(), qs.queries.end(), [&](const Query& x) { return x.id == q.id; }),
                qs.queries.end());
    }
  }
}
