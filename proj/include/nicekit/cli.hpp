#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "nicekit/corpus.hpp"
#include "nicekit/error.hpp"
#include "nicekit/hash.hpp"
#include "nicekit/http.hpp"
#include "nicekit/metrics.hpp"
#include "nicekit/model.hpp"
#include "nicekit/nice.hpp"
#include "nicekit/prompting.hpp"
#include "nicekit/selectors.hpp"
#include "nicekit/similarity.hpp"

namespace nicekit::cli {

namespace fs = std::filesystem;

struct Options {
  std::string task, pool, queries;
  std::string instruction_kind = "ni";
  std::string instructions;  // fragment asset
  std::string label_map;
  std::string backend = "mock";
  std::string mock_oracle;
  std::string remote_url, model, token_env = "NICEKIT_API_KEY";
  double temperature = 0.0;
  int max_tokens = 256;
  double timeout_s = 60.0;
  std::string embeddings, embed_url;
  std::size_t embed_dim = 0;
  std::size_t bins = 0, k = 0;  // 0: take from the task spec
  std::size_t samples = 10, queries_n = 50;
  std::string label_mode = "gold";
  std::uint64_t seed = 0;
  std::string cache, out;
  double low = 0.4, high = 0.85;
  std::size_t max_inflight = 4;
  std::string selector = "random";
  double dpp_scale = 1.0;
  std::string demos;
  std::vector<std::string> inputs;
};

// ---------------------------------------------------------------------------
// File helpers

inline std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kUnreadableFile, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

inline void write_atomic(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw Error(ErrorCode::kCacheIo, "cannot write " + tmp.string());
    out << content;
    if (!out) throw Error(ErrorCode::kCacheIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kCacheIo, "cannot rename into " + path.string() + ": " + ec.message());
}

inline void write_json(const fs::path& path, const Json& j) { write_atomic(path, j.dump(2) + "\n"); }

inline void write_jsonl(const fs::path& path, const std::vector<Json>& rows) {
  std::string content;
  for (const auto& r : rows) content += r.dump() + "\n";
  write_atomic(path, content);
}

inline Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kUnreadableFile, "cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidValue, path.string() + ": " + e.what());
  }
}

/// Exclusive advisory lock on <dir>/.nicekit.lock, released on destruction.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) {
    const auto path = dir / ".nicekit.lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::kCacheIo, "cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error(ErrorCode::kLocked, "another process holds " + path.string());
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

 private:
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// Inputs

struct Bundle {
  TaskSpec task;
  CandidatePool pool;
  QuerySet queries;
  Instruction instruction;
  EstimatorConfig estimator;
  Thresholds thresholds;
  Json run_config;
  std::string config_hash;
  Json backend;
  std::string backend_hash;
};

inline Json backend_json(const Options& o) {
  if (o.backend == "mock") {
    if (o.mock_oracle.empty()) return {{"type", "mock"}};
    return {{"type", "mock"}, {"oracle", read_json_file(o.mock_oracle)}};
  }
  return {{"type", "remote"},
          {"base_url", o.remote_url},
          {"model", o.model},
          {"temperature", o.temperature},
          {"max_tokens", o.max_tokens}};
}

inline std::unique_ptr<Backend> make_backend(const Options& o) {
  if (o.backend == "mock") {
    if (o.mock_oracle.empty()) throw Error(ErrorCode::kMissingField, "--backend mock needs --mock-oracle");
    return std::make_unique<MockBackend>(mock_oracle_from_json(read_json_file(o.mock_oracle)));
  }
  if (o.backend == "remote") {
    RemoteConfig rc;
    rc.base_url = o.remote_url;
    rc.model_name = o.model;
    rc.temperature = o.temperature;
    rc.max_tokens = o.max_tokens;
    rc.timeout = std::chrono::milliseconds(static_cast<long long>(o.timeout_s * 1000.0));
    rc.token_env = o.token_env;
    rc.max_inflight = o.max_inflight;
    return std::make_unique<RemoteBackend>(rc, std::make_shared<HttplibTransport>());
  }
  throw Error(ErrorCode::kInvalidValue, "unknown backend '" + o.backend + "'");
}

inline std::unique_ptr<Embedder> make_embedder(const Options& o) {
  if (!o.embeddings.empty()) return std::make_unique<SidecarEmbedder>(o.embeddings);
  if (!o.embed_url.empty()) {
    RemoteEmbedderConfig ec;
    ec.url = o.embed_url;
    ec.token_env = o.token_env;
    ec.dimension = o.embed_dim;
    return std::make_unique<RemoteEmbedder>(ec, std::make_shared<HttplibTransport>());
  }
  return nullptr;
}

inline bool queries_embedded(const QuerySet& qs) {
  for (const auto& q : qs.queries)
    if (!q.embedding) return false;
  return true;
}

inline void require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorCode::kMissingField, std::string("missing ") + flag);
  if (!fs::exists(value)) throw Error(ErrorCode::kUnreadableFile, std::string(flag) + ": no such file " + value);
}

inline Bundle load_bundle(const Options& o, bool need_embeddings) {
  require_path(o.task, "--task");
  require_path(o.pool, "--pool");
  require_path(o.queries, "--queries");
  Bundle b;
  b.task = load_task_spec(o.task);
  b.pool = load_pool(o.pool);
  b.queries = load_queries(o.queries);
  if (!o.label_map.empty()) {
    auto relabeled = relabel_task(b.task, b.pool, b.queries, load_label_map(o.label_map));
    b.task = std::move(relabeled.task);
    b.pool = std::move(relabeled.pool);
    b.queries = std::move(relabeled.queries);
  }
  validate_pool_labels(b.pool, b.task);

  if (need_embeddings && (!b.pool.all_embedded() || !queries_embedded(b.queries))) {
    auto embedder = make_embedder(o);
    if (!embedder)
      throw Error(ErrorCode::kMissingEmbedding, "records lack embeddings; pass --embeddings or --embed-url");
    b.pool = resolve_embeddings(b.pool, *embedder);
    b.queries = resolve_embeddings(b.queries, *embedder);
  }

  const auto kind = parse_instruction_kind(o.instruction_kind);
  InstructionFragments fragments;
  if (kind != InstructionKind::kNone) {
    require_path(o.instructions, "--instructions");
    fragments = load_instruction_fragments(o.instructions);
  }
  b.instruction = build_instruction(b.task, kind, fragments);

  b.estimator = EstimatorConfig::for_task(b.task);
  if (o.bins) b.estimator.num_bins = o.bins;
  if (o.k) b.estimator.k_shots = o.k;
  b.estimator.samples_per_bin = o.samples;
  b.estimator.num_queries = o.queries_n;
  b.estimator.seed = o.seed;
  b.estimator.label_mode = parse_label_mode(o.label_mode);
  b.estimator.max_inflight = o.max_inflight;
  b.estimator.validate(b.task);
  b.thresholds = {o.low, o.high};
  b.thresholds.validate();

  // Instruction kind, label mode and selector vary per artifact inside one
  // run directory, so they are recorded on the artifact rather than hashed.
  b.run_config = {
      {"task", to_json(b.task)},
      {"pool_sha256", file_sha256(o.pool)},
      {"queries_sha256", file_sha256(o.queries)},
      {"instructions_sha256", o.instructions.empty() ? Json(nullptr) : Json(file_sha256(o.instructions))},
      {"label_map_sha256", o.label_map.empty() ? Json(nullptr) : Json(file_sha256(o.label_map))},
      {"embeddings", o.embeddings.empty() ? (o.embed_url.empty() ? Json(nullptr) : Json(o.embed_url))
                                          : Json(file_sha256(o.embeddings))},
      {"estimator",
       {{"num_queries", b.estimator.num_queries},
        {"samples_per_bin", b.estimator.samples_per_bin},
        {"k_shots", b.estimator.k_shots},
        {"num_bins", b.estimator.num_bins}}},
      {"thresholds", {{"low", o.low}, {"high", o.high}}},
      {"seed", o.seed}};
  b.config_hash = sha256_hex(b.run_config.dump());
  b.backend = backend_json(o);
  b.backend_hash = sha256_hex(b.backend.dump());
  return b;
}

/// Creates the run directory, takes its lock and pins its config hash.
/// The backend is pinned by the first command that calls a model.
inline std::unique_ptr<RunLock> open_run_dir(const Options& o, const Bundle& b, bool uses_backend = false) {
  if (o.out.empty()) throw Error(ErrorCode::kMissingField, "missing --out");
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw Error(ErrorCode::kCacheIo, "cannot create " + o.out + ": " + ec.message());
  auto lock = std::make_unique<RunLock>(o.out);
  const fs::path manifest = fs::path(o.out) / "run.json";
  Json m = fs::exists(manifest) ? read_json_file(manifest)
                                 : Json{{"config_hash", b.config_hash}, {"run_config", b.run_config}};
  const auto existing = m.value("config_hash", std::string{});
  if (existing != b.config_hash)
    throw Error(ErrorCode::kConfigMismatch, o.out + " belongs to config " + existing + ", this run is " +
                                                b.config_hash);
  const bool pinned = m.contains("backend_hash");
  if (uses_backend && pinned && m["backend_hash"] != b.backend_hash)
    throw Error(ErrorCode::kConfigMismatch, o.out + " was run with backend " + m["backend"].dump());
  if (!fs::exists(manifest) || (uses_backend && !pinned)) {
    if (uses_backend) {
      m["backend"] = b.backend;
      m["backend_hash"] = b.backend_hash;
    }
    write_json(manifest, m);
  }
  return lock;
}

inline std::string artifact_suffix(const Options& o) {
  return parse_instruction_kind(o.instruction_kind) == InstructionKind::kNone
             ? "ni"
             : to_string(parse_instruction_kind(o.instruction_kind));
}

inline DemoSet select_for(const Options& o, const Bundle& b, const Query& q, const Bm25Index* bm25) {
  const std::size_t k = b.estimator.k_shots;
  switch (parse_demo_source(o.selector)) {
    case DemoSource::kRandom:
      return select_random(b.pool, k, derive_seed(o.seed, {string_key("select"), string_key(q.id)}));
    case DemoSource::kTopKDense:
      return select_top_k(b.pool, q, k);
    case DemoSource::kBm25:
      return select_bm25(*bm25, b.pool.size(), q, k);
    case DemoSource::kDpp:
      return select_dpp(b.pool, q, k, o.dpp_scale);
    case DemoSource::kBinSample:
      break;
  }
  throw Error(ErrorCode::kInvalidValue, "selector '" + o.selector + "' is not available here");
}

inline bool selector_needs_embeddings(const std::string& s) {
  const auto src = parse_demo_source(s);
  return src == DemoSource::kTopKDense || src == DemoSource::kDpp;
}

inline std::vector<DemoSet> select_all(const Options& o, const Bundle& b, const QuerySet& qs) {
  std::optional<Bm25Index> index;
  if (parse_demo_source(o.selector) == DemoSource::kBm25) index.emplace(b.pool);
  std::vector<DemoSet> out;
  for (const auto& q : qs.queries) out.push_back(select_for(o, b, q, index ? &*index : nullptr));
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_validate(const Options& o, std::ostream& out) {
  Bundle b = load_bundle(o, true);
  const auto sizes = bin_sizes(b.pool.size(), b.estimator.num_bins);
  const std::size_t min_bin = b.pool.size() >= b.estimator.num_bins ? sizes.back() : 0;
  const bool feasible = min_bin >= b.estimator.k_shots;
  Json summary = {{"task", b.task.name},
                  {"pool_size", b.pool.size()},
                  {"queries", b.queries.size()},
                  {"dimension", b.pool.dimension() ? Json(*b.pool.dimension()) : Json(nullptr)},
                  {"num_bins", b.estimator.num_bins},
                  {"k_shots", b.estimator.k_shots},
                  {"min_bin_size", min_bin},
                  {"bins_feasible", feasible},
                  {"instruction_kind", to_string(b.instruction.kind)},
                  {"config_hash", b.config_hash}};
  out << summary.dump(2) << '\n';
  if (!feasible)
    throw Error(ErrorCode::kBinTooSmall, "smallest bin holds " + std::to_string(min_bin) + " < k=" +
                                             std::to_string(b.estimator.k_shots));
  return 0;
}

inline int cmd_bins(const Options& o, std::ostream& out) {
  Bundle b = load_bundle(o, true);
  auto lock = open_run_dir(o, b);
  const auto qs = sample_queries(b.queries, b.estimator.num_queries, o.seed);
  std::vector<Json> rows;
  for (const auto& q : qs.queries) {
    Json j = to_json(partition_bins(b.pool, q, b.estimator.num_bins));
    j["config_hash"] = b.config_hash;
    j["seed"] = o.seed;
    rows.push_back(std::move(j));
  }
  const auto path = fs::path(o.out) / "bins.jsonl";
  write_jsonl(path, rows);
  out << "wrote " << rows.size() << " partitions to " << path.string() << '\n';
  return 0;
}

inline Json cache_stats_json(const std::optional<ResponseCache>& cache) {
  if (!cache) return nullptr;
  const auto s = cache->stats();
  return {{"hits", s.hits}, {"misses", s.misses}, {"corrupt", s.corrupt}};
}

inline int cmd_nice(const Options& o, std::ostream& out) {
  Bundle b = load_bundle(o, true);
  auto lock = open_run_dir(o, b, true);
  auto backend = make_backend(o);
  std::optional<ResponseCache> cache;
  if (!o.cache.empty()) cache.emplace(o.cache);
  RunContext ctx{backend.get(), cache ? &*cache : nullptr};

  NiceRun run = run_nice(b.task, b.instruction, b.pool, b.queries, b.estimator, ctx, b.thresholds);
  run.report.provenance["run_config_hash"] = b.config_hash;
  Json report = to_json(run.report);
  report["artifact"] = "nice";
  report["config_hash"] = b.config_hash;
  report["backend_hash"] = b.backend_hash;

  const std::string tag = artifact_suffix(o) + "-" + o.label_mode;
  write_json(fs::path(o.out) / ("nice-" + tag + ".json"), report);

  std::vector<Json> rows;
  for (std::size_t bi = 0; bi < run.matrix.raw.size(); ++bi)
    for (std::size_t qi = 0; qi < run.matrix.query_ids.size(); ++qi)
      rows.push_back({{"bin", run.matrix.bins[bi] + 1},
                      {"query_id", run.matrix.query_ids[qi]},
                      {"scores", run.matrix.raw[bi][qi]},
                      {"config_hash", b.config_hash}});
  write_jsonl(fs::path(o.out) / ("outcomes-" + tag + ".jsonl"), rows);

  Json stats = {{"backend_calls", backend->calls()}, {"cache", cache_stats_json(cache)},
                {"config_hash", b.config_hash}, {"finished", utc_timestamp()}};
  write_json(fs::path(o.out) / ("run-stats-" + tag + ".json"), stats);

  out << render_table(run.report);
  out << "backend calls: " << backend->calls() << '\n';
  return 0;
}

inline int cmd_select(const Options& o, std::ostream& out) {
  Bundle b = load_bundle(o, selector_needs_embeddings(o.selector));
  auto lock = open_run_dir(o, b);
  const auto qs = sample_queries(b.queries, b.estimator.num_queries, o.seed);
  const auto sets = select_all(o, b, qs);
  std::vector<Json> rows;
  for (std::size_t i = 0; i < sets.size(); ++i)
    rows.push_back({{"query_id", qs.queries[i].id},
                    {"demo_set", to_json(sets[i])},
                    {"seed", o.seed},
                    {"config_hash", b.config_hash}});
  const auto path = fs::path(o.out) / ("demos-" + to_string(parse_demo_source(o.selector)) + ".jsonl");
  write_jsonl(path, rows);
  out << "wrote " << rows.size() << " demo sets to " << path.string() << '\n';
  return 0;
}

/// Demo sets keyed by query id from a `select` artifact.
inline std::unordered_map<std::string, DemoSet> load_demo_sets(const std::string& path) {
  std::unordered_map<std::string, DemoSet> out;
  detail::for_each_record(path, [&](std::size_t row, const Json& obj) {
    DemoSet s;
    const auto id = detail::require_string(obj, "query_id", row);
    const auto& ds = obj.at("demo_set");
    s.demos = ds.at("demos").get<std::vector<std::string>>();
    s.source = parse_demo_source(ds.value("source", std::string("random")));
    s.seed = ds.value("seed", std::uint64_t{0});
    out[id] = std::move(s);
  });
  return out;
}

inline std::vector<DemoSet> demo_sets_for(const Options& o, const Bundle& b, const QuerySet& qs) {
  if (o.demos.empty()) return select_all(o, b, qs);
  auto stored = load_demo_sets(o.demos);
  std::vector<DemoSet> out;
  for (const auto& q : qs.queries) {
    auto it = stored.find(q.id);
    if (it == stored.end()) throw Error(ErrorCode::kMissingField, o.demos + ": no demo set for query '" + q.id + "'");
    out.push_back(it->second);
  }
  return out;
}

inline Json demos_json(const std::vector<Demo>& demos) {
  Json arr = Json::array();
  for (const auto& d : demos) arr.push_back({{"id", d.id}, {"input", d.input}, {"output", d.output}});
  return arr;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  Bundle b = load_bundle(o, o.demos.empty() && selector_needs_embeddings(o.selector));
  auto lock = open_run_dir(o, b, true);
  auto backend = make_backend(o);
  std::optional<ResponseCache> cache;
  if (!o.cache.empty()) cache.emplace(o.cache);

  const auto qs = sample_queries(b.queries, b.estimator.num_queries, o.seed);
  const auto sets = demo_sets_for(o, b, qs);
  const auto mode = b.estimator.label_mode;
  Json per_query = Json::array();
  double total = 0.0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const Query& q = qs.queries[i];
    auto demos = perturb_labels(materialize(b.pool, sets[i]), b.task, mode,
                                derive_seed(o.seed, {string_key("eval_perturb"), string_key(q.id)}));
    const auto prompt = assemble_prompt(b.instruction, demos, q.input_text, b.estimator.prompt_template);
    // Selector-driven prompts carry no bin; the mock oracle sees bin 0.
    const CompletionMeta meta{q.id, 0, 0, b.instruction.kind, q.gold_output};
    const auto response = cache ? cached_complete(*cache, *backend, prompt, meta) : backend->complete(prompt, meta);
    const auto result = score_prediction(b.task, response, q.gold_output);
    total += result.score;
    per_query.push_back({{"query_id", q.id},
                         {"score", result.score},
                         {"unparseable", result.unparseable},
                         {"prediction", response},
                         {"demos", sets[i].demos}});
  }
  const double mean = qs.empty() ? 0.0 : total / static_cast<double>(qs.size());
  const std::string selector = o.demos.empty() ? to_string(parse_demo_source(o.selector)) : "stored";
  Json artifact = {{"artifact", "eval"},
                   {"task", b.task.name},
                   {"measure", to_string(b.task.measure)},
                   {"selector", selector},
                   {"instruction_kind", to_string(b.instruction.kind)},
                   {"label_mode", to_string(mode)},
                   {"mean_score", mean},
                   {"num_queries", qs.size()},
                   {"seed", o.seed},
                   {"per_query", per_query},
                   {"config_hash", b.config_hash},
                   {"backend_hash", b.backend_hash}};
  const auto path =
      fs::path(o.out) / ("eval-" + selector + "-" + artifact_suffix(o) + "-" + o.label_mode + ".json");
  write_json(path, artifact);
  out << "task " << b.task.name << "  selector " << selector << "  instruction " << to_string(b.instruction.kind)
      << "  mean " << to_string(b.task.measure) << " " << std::fixed << std::setprecision(4) << mean << '\n';
  return 0;
}

inline int cmd_perturb(const Options& o, std::ostream& out) {
  Bundle b = load_bundle(o, o.demos.empty() && selector_needs_embeddings(o.selector));
  auto lock = open_run_dir(o, b);
  const auto qs = sample_queries(b.queries, b.estimator.num_queries, o.seed);
  const auto sets = demo_sets_for(o, b, qs);
  std::vector<Json> rows;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const auto& q = qs.queries[i];
    auto demos = perturb_labels(materialize(b.pool, sets[i]), b.task, b.estimator.label_mode,
                                derive_seed(o.seed, {string_key("eval_perturb"), string_key(q.id)}));
    rows.push_back({{"query_id", q.id},
                    {"label_mode", to_string(b.estimator.label_mode)},
                    {"demos", demos_json(demos)},
                    {"seed", o.seed},
                    {"config_hash", b.config_hash}});
  }
  const auto path = fs::path(o.out) / ("perturbed-" + o.label_mode + ".jsonl");
  write_jsonl(path, rows);
  out << "wrote " << rows.size() << " perturbed demo sets to " << path.string() << '\n';
  return 0;
}

inline std::vector<fs::path> collect_artifacts(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& entry : fs::directory_iterator(in)) {
        const auto name = entry.path().filename().string();
        if (entry.path().extension() == ".json" &&
            (name.rfind("nice-", 0) == 0 || name.rfind("eval-", 0) == 0))
          files.push_back(entry.path());
      }
    } else if (fs::exists(in)) {
      files.push_back(in);
    } else {
      throw Error(ErrorCode::kUnreadableFile, "no such artifact " + in);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::kMissingField, "no artifacts to report");
  return files;
}

inline int cmd_report(const Options& o, std::ostream& out) {
  const auto files = collect_artifacts(o.inputs);
  std::vector<Json> nice_reports, evals;
  std::string hash, backend_hash;
  for (const auto& f : files) {
    Json j = read_json_file(f);
    const auto h = j.value("config_hash", std::string{});
    if (h.empty()) throw Error(ErrorCode::kMissingField, f.string() + ": no config_hash");
    if (hash.empty()) hash = h;
    if (h != hash)
      throw Error(ErrorCode::kConfigMismatch, f.string() + " has config " + h + ", expected " + hash);
    const auto bh = j.value("backend_hash", std::string{});
    if (backend_hash.empty()) backend_hash = bh;
    if (bh != backend_hash)
      throw Error(ErrorCode::kConfigMismatch, f.string() + " was produced by a different backend");
    const auto kind = j.value("artifact", std::string{});
    if (kind == "nice")
      nice_reports.push_back(std::move(j));
    else if (kind == "eval")
      evals.push_back(std::move(j));
    else
      throw Error(ErrorCode::kInvalidValue, f.string() + ": unknown artifact type '" + kind + "'");
  }

  out << "config " << hash.substr(0, 16) << '\n';
  out << std::fixed << std::setprecision(4);
  if (!nice_reports.empty()) {
    out << '\n'
        << std::left << std::setw(16) << "task" << std::setw(8) << "instr" << std::setw(10) << "labels"
        << std::right << std::setw(10) << "NICE" << "  verdict\n";
    for (const auto& j : nice_reports) {
      const auto r = nice_report_from_json(j);
      const auto mode = r.config.at("estimator").value("label_mode", std::string("gold"));
      out << std::left << std::setw(16) << r.task << std::setw(8) << to_string(r.instruction_kind)
          << std::setw(10) << mode << std::right << std::setw(10);
      if (r.nice)
        out << *r.nice;
      else
        out << "n/a";
      out << "  " << to_string(r.verdict) << '\n';
    }
    for (const auto& j : nice_reports) out << '\n' << render_table(nice_report_from_json(j));
  }
  if (!evals.empty()) {
    out << '\n'
        << std::left << std::setw(16) << "task" << std::setw(13) << "selector" << std::setw(8) << "instr"
        << std::setw(10) << "labels" << std::right << std::setw(10) << "score" << std::setw(8) << "n" << '\n';
    for (const auto& j : evals)
      out << std::left << std::setw(16) << j.value("task", std::string{}) << std::setw(13)
          << j.value("selector", std::string{}) << std::setw(8) << j.value("instruction_kind", std::string{})
          << std::setw(10) << j.value("label_mode", std::string{}) << std::right << std::setw(10)
          << j.value("mean_score", 0.0) << std::setw(8) << j.value("num_queries", 0) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline void add_bundle_options(CLI::App* app, Options& o) {
  app->add_option("--task", o.task, "task spec JSON");
  app->add_option("--pool", o.pool, "candidate pool JSONL");
  app->add_option("--queries", o.queries, "query set JSONL");
  app->add_option("--instruction-kind", o.instruction_kind, "ni, td, td-ls, td-lm, td-r or di");
  app->add_option("--instructions", o.instructions, "instruction fragment JSON");
  app->add_option("--label-map", o.label_map, "relabel outputs with a from/to JSONL map");
  app->add_option("--embeddings", o.embeddings, "embedding sidecar JSONL");
  app->add_option("--embed-url", o.embed_url, "remote embedding endpoint");
  app->add_option("--embed-dim", o.embed_dim, "expected remote embedding dimension");
  app->add_option("--bins", o.bins, "number of bins (default: task spec)");
  app->add_option("--k", o.k, "demonstrations per prompt (default: task spec)");
  app->add_option("--samples", o.samples, "samples per bin");
  app->add_option("--queries-n", o.queries_n, "queries to sample");
  app->add_option("--label-mode", o.label_mode, "gold, random or shuffle");
  app->add_option("--seed", o.seed, "base seed");
  app->add_option("--low-threshold", o.low, "NICE below this: optimize examples");
  app->add_option("--high-threshold", o.high, "NICE above this: optimize the instruction");
  app->add_option("--max-inflight", o.max_inflight, "concurrent completions");
  app->add_option("--out", o.out, "run directory");
}

inline void add_backend_options(CLI::App* app, Options& o) {
  app->add_option("--backend", o.backend, "mock or remote");
  app->add_option("--mock-oracle", o.mock_oracle, "mock oracle JSON");
  app->add_option("--remote-url", o.remote_url, "OpenAI-compatible base URL");
  app->add_option("--model", o.model, "remote model name");
  app->add_option("--temperature", o.temperature, "sampling temperature");
  app->add_option("--max-tokens", o.max_tokens, "completion token limit");
  app->add_option("--timeout", o.timeout_s, "request timeout in seconds");
  app->add_option("--token-env", o.token_env, "environment variable holding the bearer token");
  app->add_option("--cache", o.cache, "response cache directory");
}

inline void add_selector_options(CLI::App* app, Options& o) {
  app->add_option("--selector", o.selector, "random, topk, bm25 or dpp");
  app->add_option("--dpp-scale", o.dpp_scale, "DPP relevance scale");
  app->add_option("--demos", o.demos, "demo sets written by `select`");
}

inline void print_error(std::ostream& err, const std::string& code, const std::string& message) {
  err << Json{{"error", code}, {"message", message}}.dump() << '\n';
}

inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"nicekit: measure how much in-context example choice matters"};
  app.require_subcommand(1, 1);
  auto* validate = app.add_subcommand("validate", "check inputs and bin feasibility");
  auto* bins = app.add_subcommand("bins", "write per-query bin partitions");
  auto* nice = app.add_subcommand("nice", "estimate bin scores and NICE");
  auto* select = app.add_subcommand("select", "write demo sets for a selector");
  auto* eval = app.add_subcommand("eval", "score selector or stored demo sets on the task measure");
  auto* perturb = app.add_subcommand("perturb", "write label-perturbed demo sets");
  auto* report = app.add_subcommand("report", "render tables from stored artifacts");
  for (auto* sub : {validate, bins, nice, select, eval, perturb}) add_bundle_options(sub, o);
  for (auto* sub : {nice, eval}) add_backend_options(sub, o);
  for (auto* sub : {select, eval, perturb}) add_selector_options(sub, o);
  report->add_option("inputs", o.inputs, "artifact files or run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, "UsageError", e.what());
    return 1;
  }

  try {
    if (*validate) return cmd_validate(o, out);
    if (*bins) return cmd_bins(o, out);
    if (*nice) return cmd_nice(o, out);
    if (*select) return cmd_select(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*perturb) return cmd_perturb(o, out);
    if (*report) return cmd_report(o, out);
  } catch (const Error& e) {
    print_error(err, std::string(to_string(e.code())), e.what());
    return is_validation_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    print_error(err, "RuntimeError", e.what());
    return 2;
  }
  return 2;
}

inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"nicekit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_command(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace nicekit::cli
