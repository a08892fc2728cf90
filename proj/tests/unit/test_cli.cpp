#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "nicekit/cli.hpp"
#include "support/oracles.hpp"

using namespace nicekit;

namespace {

const std::string kAssets = NICEKIT_ASSET_DIR;

struct Bundle {
  fixture::TempDir dir;
  std::string task, pool, queries, flat, spike;

  explicit Bundle(std::size_t pool_size = 120) {
    Rng rng(8);
    save_pool(fixture::labelled_pool(pool_size, 6, rng), dir / "pool.jsonl");
    save_queries(fixture::labelled_queries(12, 6, rng), dir / "queries.jsonl");
    std::ofstream(dir / "task.json") << to_json(fixture::sentiment_task()).dump();
    std::ofstream(dir / "flat.json") << to_json(MockOracle::flat(10, 0.7, 1)).dump();
    MockOracle s = MockOracle::flat(10, 0.05, 1);
    s.per_bin_success[0] = 0.9;
    std::ofstream(dir / "spike.json") << to_json(s).dump();
    task = (dir / "task.json").string();
    pool = (dir / "pool.jsonl").string();
    queries = (dir / "queries.jsonl").string();
    flat = (dir / "flat.json").string();
    spike = (dir / "spike.json").string();
  }

  std::vector<std::string> base(const std::string& cmd) const {
    return {cmd, "--task", task, "--pool", pool, "--queries", queries, "--queries-n", "12", "--samples", "4",
            "--seed", "5"};
  }
};

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, ValidateSummary) {
  Bundle b;
  auto r = run(b.base("validate"));
  ASSERT_EQ(r.code, 0) << r.err;
  Json summary = Json::parse(r.out);
  EXPECT_EQ(summary["pool_size"], 120);
  EXPECT_EQ(summary["bins_feasible"], true);
  EXPECT_EQ(summary["min_bin_size"], 12);
}

TEST(Cli, ValidateInfeasibleBins) {
  Bundle b(30);
  auto r = run(b.base("validate"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(Json::parse(r.out)["bins_feasible"], false);
  EXPECT_EQ(Json::parse(r.err)["error"], "BinTooSmall");
}

TEST(Cli, ValidationErrorsExitOne) {
  Bundle b;
  auto missing = run({"validate", "--task", b.task, "--pool", (b.dir / "nope.jsonl").string(), "--queries", b.queries});
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(Json::parse(missing.err)["error"], "UnreadableFile");
  EXPECT_EQ(run(b.base("validate") + std::vector<std::string>{"--low-threshold", "0.9"}).code, 1);
  EXPECT_EQ(run(b.base("validate") + std::vector<std::string>{"--instruction-kind", "td-r", "--instructions",
                                                              kAssets + "/instructions/mtop.json"})
                .code,
            1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"validate", "--bogus"}).code, 1);
}

TEST(Cli, HelpExitsZero) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("nice"), std::string::npos);
}

TEST(Cli, BinsWritesPartitions) {
  Bundle b;
  const auto out = (b.dir / "run").string();
  auto r = run(b.base("bins") + std::vector<std::string>{"--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(b.dir / "run" / "bins.jsonl");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    Json j = Json::parse(line);
    EXPECT_EQ(j["bins"].size(), 10u);
    EXPECT_TRUE(j.contains("config_hash"));
    ++rows;
  }
  EXPECT_EQ(rows, 12u);
}

TEST(Cli, NiceFlatIsOptimizeInstructionAndCachedRerunIsFree) {
  Bundle b;
  const auto out = (b.dir / "run").string(), cache = (b.dir / "cache").string();
  auto args = b.base("nice") + std::vector<std::string>{"--backend", "mock", "--mock-oracle", b.flat, "--out", out,
                                                        "--cache", cache};
  auto first = run(args);
  ASSERT_EQ(first.code, 0) << first.err;
  const auto report_path = b.dir / "run" / "nice-ni-gold.json";
  const auto report1 = slurp(report_path);
  const auto outcomes1 = slurp(b.dir / "run" / "outcomes-ni-gold.jsonl");
  EXPECT_EQ(Json::parse(report1)["verdict"], "optimize_instruction");

  auto second = run(args);
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(slurp(report_path), report1);
  EXPECT_EQ(slurp(b.dir / "run" / "outcomes-ni-gold.jsonl"), outcomes1);
  EXPECT_NE(second.out.find("backend calls: 0"), std::string::npos) << second.out;
  Json stats = Json::parse(slurp(b.dir / "run" / "run-stats-ni-gold.json"));
  EXPECT_EQ(stats["backend_calls"], 0);
  EXPECT_EQ(stats["cache"]["misses"], 0);
}

TEST(Cli, RunDirectoryRejectsDifferentConfig) {
  Bundle b;
  const auto out = (b.dir / "run").string();
  ASSERT_EQ(run(b.base("bins") + std::vector<std::string>{"--out", out}).code, 0);
  auto other = b.base("bins") + std::vector<std::string>{"--out", out};
  other[other.size() - 3] = "6";  // --seed 6
  auto r = run(other);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(Json::parse(r.err)["error"], "ConfigMismatch");
}

TEST(Cli, RunDirectoryPinsBackendOnFirstModelCall) {
  Bundle b;
  const auto out = (b.dir / "run").string();
  ASSERT_EQ(run(b.base("bins") + std::vector<std::string>{"--out", out}).code, 0);
  auto flat = run(b.base("nice") + std::vector<std::string>{"--mock-oracle", b.flat, "--out", out});
  ASSERT_EQ(flat.code, 0) << flat.err;
  auto spike = run(b.base("nice") + std::vector<std::string>{"--mock-oracle", b.spike, "--out", out});
  EXPECT_EQ(spike.code, 1);
  EXPECT_EQ(Json::parse(spike.err)["error"], "ConfigMismatch");
  EXPECT_EQ(run(b.base("bins") + std::vector<std::string>{"--out", out}).code, 0);
}

TEST(Cli, LockedRunDirectory) {
  Bundle b;
  const auto out = b.dir / "run";
  std::filesystem::create_directories(out);
  cli::RunLock held(out);
  auto r = run(b.base("bins") + std::vector<std::string>{"--out", out.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(Json::parse(r.err)["error"], "Locked");
}

TEST(Cli, ReportRendersAndRefusesMixedConfigs) {
  Bundle b;
  const auto run1 = (b.dir / "r1").string(), run2 = (b.dir / "r2").string();
  auto nice = [&](const std::string& out, const std::string& seed, const std::string& kind) {
    auto args = b.base("nice") + std::vector<std::string>{"--backend",          "mock",     "--mock-oracle",
                                                          b.spike,              "--out",    out,
                                                          "--instruction-kind", kind,       "--instructions",
                                                          kAssets + "/instructions/sst2.json"};
    args[12] = seed;
    return run(args);
  };
  ASSERT_EQ(nice(run1, "5", "ni").code, 0);
  ASSERT_EQ(nice(run1, "5", "td-lm").code, 0);
  ASSERT_EQ(nice(run2, "6", "ni").code, 0);

  auto table = run({"report", run1});
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_NE(table.out.find("TD_LM"), std::string::npos);
  EXPECT_NE(table.out.find("optimize_ice"), std::string::npos);

  auto mixed = run({"report", run1, (b.dir / "r2" / "nice-ni-gold.json").string()});
  EXPECT_EQ(mixed.code, 1);
  EXPECT_EQ(Json::parse(mixed.err)["error"], "ConfigMismatch");
}

TEST(Cli, SelectEvalPerturb) {
  Bundle b;
  const auto out = (b.dir / "run").string();
  for (const std::string sel : {"random", "topk", "bm25", "dpp"}) {
    auto r = run(b.base("select") + std::vector<std::string>{"--selector", sel, "--out", out});
    ASSERT_EQ(r.code, 0) << sel << r.err;
  }
  std::ifstream in(b.dir / "run" / "demos-bm25.jsonl");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(Json::parse(line)["demo_set"]["demos"].size(), 4u);

  auto eval_sel = run(b.base("eval") + std::vector<std::string>{"--selector", "topk", "--backend", "mock",
                                                                "--mock-oracle", b.flat, "--out", out});
  ASSERT_EQ(eval_sel.code, 0) << eval_sel.err;
  auto eval_stored =
      run(b.base("eval") + std::vector<std::string>{"--demos", (b.dir / "run" / "demos-random.jsonl").string(),
                                                    "--backend", "mock", "--mock-oracle", b.flat, "--out",
                                                    (b.dir / "run-td").string(), "--instruction-kind", "td", "--instructions",
                                                    kAssets + "/instructions/sst2.json"});
  ASSERT_EQ(eval_stored.code, 0) << eval_stored.err;
  Json ev = Json::parse(slurp(b.dir / "run-td" / "eval-stored-TD-gold.json"));
  EXPECT_EQ(ev["per_query"].size(), 12u);
  EXPECT_GE(ev["mean_score"].get<double>(), 0.0);

  auto pert = run(b.base("perturb") + std::vector<std::string>{"--label-mode", "random", "--out", out});
  ASSERT_EQ(pert.code, 0) << pert.err;
  std::ifstream pin(b.dir / "run" / "perturbed-random.jsonl");
  while (std::getline(pin, line))
    for (const auto& d : Json::parse(line)["demos"])
      EXPECT_TRUE(d["output"] == "positive" || d["output"] == "negative");

  auto report = run({"report", out});
  ASSERT_EQ(report.code, 0) << report.err;
  EXPECT_NE(report.out.find("top_k_dense"), std::string::npos);
  auto stored = run({"report", (b.dir / "run-td").string()});
  ASSERT_EQ(stored.code, 0) << stored.err;
  EXPECT_NE(stored.out.find("stored"), std::string::npos);
}

TEST(Cli, InducedSchemaLabelMap) {
  Bundle b;
  const auto out = (b.dir / "run").string();
  auto r = run(b.base("perturb") + std::vector<std::string>{"--label-map", kAssets + "/label_maps/sst2_induced.jsonl",
                                                            "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(b.dir / "run" / "perturbed-gold.jsonl");
  std::string line;
  while (std::getline(in, line))
    for (const auto& d : Json::parse(line)["demos"])
      EXPECT_TRUE(d["output"] == "POSITIVE" || d["output"] == "negative");
}

TEST(Cli, MissingEmbeddingsNeedAProvider) {
  Bundle b;
  std::vector<Example> ex;
  for (int i = 0; i < 20; ++i) ex.push_back({"e" + std::to_string(i), "text " + std::to_string(i), "positive", std::nullopt});
  save_pool(CandidatePool(ex), b.dir / "bare.jsonl");
  auto args = b.base("validate");
  args[4] = (b.dir / "bare.jsonl").string();
  auto r = run(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(Json::parse(r.err)["error"], "MissingEmbedding");

  std::vector<std::string> texts;
  std::vector<Vector> vecs;
  Rng rng(1);
  for (const auto& e : ex) {
    texts.push_back(e.input_text);
    vecs.push_back(fixture::random_vector(rng, 6));
  }
  write_sidecar(b.dir / "side.jsonl", texts, vecs);
  auto with_sidecar = args + std::vector<std::string>{"--embeddings", (b.dir / "side.jsonl").string(), "--bins", "4"};
  // Queries carry their own vectors; only the pool needs the sidecar.
  auto ok = run(with_sidecar);
  EXPECT_EQ(ok.code, 0) << ok.err;
}
