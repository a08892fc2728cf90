#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "nicekit/corpus.hpp"
#include "nicekit/error.hpp"
#include "nicekit/metrics.hpp"
#include "nicekit/model.hpp"
#include "nicekit/prompting.hpp"
#include "nicekit/random.hpp"
#include "nicekit/similarity.hpp"

namespace nicekit {

// ---------------------------------------------------------------------------
// NICE and friends over a vector of bin scores

/// Mean over bins divided by the max over bins. Computed as the mean of
/// S[j] / max S so that flat vectors give exactly 1, one-hot vectors exactly
/// 1/|B|, and rounding can never push the value above 1.
inline double compute_nice(const std::vector<double>& scores) {
  if (scores.empty()) throw Error(ErrorCode::kInvalidValue, "no bin scores");
  double max = 0.0;
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0)
      throw Error(ErrorCode::kInvalidValue, "bin scores must be finite and non-negative");
    max = std::max(max, s);
  }
  if (max == 0.0) throw Error(ErrorCode::kAllBinsZero, "every bin scored 0; NICE is undefined");
  double sum = 0.0;
  for (double s : scores) sum += s / max;
  return sum / static_cast<double>(scores.size());
}

/// Non-negative bin weights, normalized to sum to 1.
class WeightVector {
 public:
  explicit WeightVector(std::vector<double> w) : w_(std::move(w)) {
    double total = 0.0;
    for (double x : w_) {
      if (!std::isfinite(x) || x < 0.0) throw Error(ErrorCode::kInvalidValue, "weights must be >= 0");
      total += x;
    }
    if (total == 0.0) throw Error(ErrorCode::kInvalidValue, "weights are all zero");
    for (double& x : w_) x /= total;
  }

  static WeightVector uniform(std::size_t n) { return WeightVector(std::vector<double>(n, 1.0)); }

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  const std::vector<double>& values() const { return w_; }

 private:
  std::vector<double> w_;
};

inline double weighted_objective(const std::vector<double>& scores, const WeightVector& w) {
  if (scores.size() != w.size())
    throw Error(ErrorCode::kDimensionMismatch, std::to_string(scores.size()) + " scores vs " +
                                                   std::to_string(w.size()) + " weights");
  double total = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) total += w[j] * scores[j];
  return total;
}

enum class Dominance { kADominates, kBDominates, kEqual, kIncomparable };

inline std::string to_string(Dominance d) {
  switch (d) {
    case Dominance::kADominates: return "a_dominates";
    case Dominance::kBDominates: return "b_dominates";
    case Dominance::kEqual: return "equal";
    case Dominance::kIncomparable: return "incomparable";
  }
  return "unknown";
}

inline Dominance pareto_compare(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::kDimensionMismatch, std::to_string(a.size()) + " bins vs " + std::to_string(b.size()));
  bool a_better = false, b_better = false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    a_better = a_better || a[j] > b[j];
    b_better = b_better || b[j] > a[j];
  }
  if (a_better && b_better) return Dominance::kIncomparable;
  if (a_better) return Dominance::kADominates;
  if (b_better) return Dominance::kBDominates;
  return Dominance::kEqual;
}

enum class Verdict { kOptimizeIce, kIndeterminate, kOptimizeInstruction };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kOptimizeIce: return "optimize_ice";
    case Verdict::kIndeterminate: return "indeterminate";
    case Verdict::kOptimizeInstruction: return "optimize_instruction";
  }
  return "unknown";
}

struct Thresholds {
  double low = 0.4;
  double high = 0.85;

  void validate() const {
    if (!(low > 0.0 && low < high && high <= 1.0))
      throw Error(ErrorCode::kBadThresholds,
                  "need 0 < low < high <= 1, got low=" + std::to_string(low) + " high=" + std::to_string(high));
  }
};

/// Low NICE: examples matter, spend on ICE selection. High NICE: examples
/// barely matter, spend on the instruction.
inline Verdict decide(double nice_value, const Thresholds& t = {}) {
  t.validate();
  if (nice_value < t.low) return Verdict::kOptimizeIce;
  if (nice_value > t.high) return Verdict::kOptimizeInstruction;
  return Verdict::kIndeterminate;
}

// ---------------------------------------------------------------------------
// Monte-Carlo bin-score estimation

struct EstimatorConfig {
  std::size_t num_queries = 50;
  std::size_t samples_per_bin = 10;
  std::size_t k_shots = 4;
  std::size_t num_bins = 10;
  std::uint64_t seed = 0;
  LabelMode label_mode = LabelMode::kGold;
  PromptTemplate prompt_template;
  std::size_t max_inflight = 4;

  void validate(const TaskSpec& task) const {
    if (num_queries < 1 || samples_per_bin < 1 || k_shots < 1 || max_inflight < 1)
      throw Error(ErrorCode::kInvalidValue, "estimator counts must be >= 1");
    if (num_bins < 2) throw Error(ErrorCode::kInvalidValue, "num_bins must be >= 2");
    check_label_mode(label_mode, task);
    if (label_mode == LabelMode::kShuffleOutputs && k_shots < 2)
      throw Error(ErrorCode::kTooFewDemos, "shuffle_outputs needs k_shots >= 2");
  }

  static EstimatorConfig for_task(const TaskSpec& task) {
    EstimatorConfig c;
    c.k_shots = static_cast<std::size_t>(task.k_shots);
    c.num_bins = static_cast<std::size_t>(task.num_bins);
    return c;
  }
};

inline Json to_json(const EstimatorConfig& c) {
  return {{"num_queries", c.num_queries},
          {"samples_per_bin", c.samples_per_bin},
          {"k_shots", c.k_shots},
          {"num_bins", c.num_bins},
          {"seed", c.seed},
          {"label_mode", to_string(c.label_mode)},
          {"prompt_template",
           {{"demo_format", c.prompt_template.demo_format},
            {"separator", c.prompt_template.separator},
            {"query_cue", c.prompt_template.query_cue}}}};
}

/// Per-bin estimates with every raw outcome, raw[bin][query][sample].
struct BinScoreMatrix {
  std::vector<double> scores;
  std::vector<std::vector<std::vector<double>>> raw;
  std::vector<std::string> query_ids;
  std::vector<std::size_t> bins;  // bin index of each row
  InstructionKind instruction_kind = InstructionKind::kNone;
  Json config;
};

/// Everything a run needs besides the data.
struct RunContext {
  Backend* backend = nullptr;
  ResponseCache* cache = nullptr;  // optional
};

struct GridStats {
  std::size_t cells = 0;
  std::size_t distinct_prompts = 0;
  std::string cache_keys_digest;
};

namespace detail {

struct GridCell {
  std::size_t bin_row = 0;
  std::size_t query_row = 0;
  std::size_t sample = 0;
  std::string prompt;
  CompletionMeta meta;
  std::string key;
};

inline std::vector<std::size_t> draw_from_bin(std::size_t bin_size, std::size_t k, std::uint64_t seed,
                                              const std::string& query_id, std::size_t bin, std::size_t sample) {
  Rng rng(derive_seed(seed, {string_key("bin_draw"), string_key(query_id), bin, sample}));
  auto picks = rng.sample_indices(bin_size, k);
  std::sort(picks.begin(), picks.end());  // rank order: most similar first
  return picks;
}

/// Runs each distinct prompt once, in parallel, and returns one response per
/// key. Failures are collected; the first one is rethrown after all workers
/// stop, leaving completed records in the cache.
inline std::unordered_map<std::string, std::string> complete_distinct(
    const std::vector<const GridCell*>& firsts, const RunContext& ctx, std::size_t max_inflight) {
  std::vector<std::string> responses(firsts.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failures{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < firsts.size(); i = next.fetch_add(1)) {
      const GridCell& cell = *firsts[i];
      try {
        responses[i] = ctx.cache ? cached_complete(*ctx.cache, *ctx.backend, cell.prompt, cell.meta)
                                 : ctx.backend->complete(cell.prompt, cell.meta);
      } catch (...) {
        failures.fetch_add(1);
        std::lock_guard lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(max_inflight, std::max<std::size_t>(firsts.size(), 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const Error& e) {
      throw Error(e.code(), std::to_string(failures.load()) + " of " + std::to_string(firsts.size()) +
                                " completions failed; first: " + e.what());
    }
  }
  std::unordered_map<std::string, std::string> out;
  for (std::size_t i = 0; i < firsts.size(); ++i) out.emplace(firsts[i]->key, std::move(responses[i]));
  return out;
}

}  // namespace detail

/// Estimates S for each requested bin: for every query, samples_per_bin
/// independent k-shot draws from that query's bin, label perturbation,
/// prompt assembly, completion and scoring. S is the mean over queries of
/// the per-query sample means. Identical prompts are completed once per run.
inline BinScoreMatrix estimate_bins(const TaskSpec& task, const Instruction& instruction,
                                    const std::vector<std::size_t>& bins, const CandidatePool& pool,
                                    const QuerySet& queries, const std::vector<BinPartition>& partitions,
                                    const EstimatorConfig& cfg, const RunContext& ctx,
                                    GridStats* stats = nullptr) {
  cfg.validate(task);
  if (!ctx.backend) throw Error(ErrorCode::kInvalidValue, "no backend");
  if (partitions.size() != queries.size())
    throw Error(ErrorCode::kInvalidValue, "one bin partition per query is required");

  std::vector<detail::GridCell> cells;
  cells.reserve(bins.size() * queries.size() * cfg.samples_per_bin);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const std::size_t bin = bins[b];
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const Query& query = queries.queries[q];
      const BinPartition& part = partitions[q];
      if (part.query_id != query.id)
        throw Error(ErrorCode::kInvalidValue, "partition order does not match query order");
      if (bin >= part.bins.size())
        throw Error(ErrorCode::kInvalidValue, "bin " + std::to_string(bin) + " out of range");
      const auto& members = part.bins[bin];
      if (members.size() < cfg.k_shots)
        throw Error(ErrorCode::kBinTooSmall, "query '" + query.id + "' bin " + std::to_string(bin + 1) +
                                                 " holds " + std::to_string(members.size()) + " < k=" +
                                                 std::to_string(cfg.k_shots));
      for (std::size_t s = 0; s < cfg.samples_per_bin; ++s) {
        DemoSet set{{}, DemoSource::kBinSample, cfg.seed};
        for (std::size_t i : detail::draw_from_bin(members.size(), cfg.k_shots, cfg.seed, query.id, bin, s))
          set.demos.push_back(members[i]);
        auto demos = perturb_labels(
            materialize(pool, set), task, cfg.label_mode,
            derive_seed(cfg.seed, {string_key("bin_perturb"), string_key(query.id), bin, s}));
        detail::GridCell cell;
        cell.bin_row = b;
        cell.query_row = q;
        cell.sample = s;
        cell.prompt = assemble_prompt(instruction, demos, query.input_text, cfg.prompt_template);
        cell.meta = {query.id, bin, s, instruction.kind, query.gold_output};
        cell.key = cache_key(*ctx.backend, cell.prompt);
        cells.push_back(std::move(cell));
      }
    }
  }

  // First cell (in grid order) of each distinct prompt supplies the meta.
  std::vector<const detail::GridCell*> firsts;
  {
    std::unordered_map<std::string, bool> seen;
    for (const auto& c : cells)
      if (!seen[c.key]) {
        seen[c.key] = true;
        firsts.push_back(&c);
      }
  }
  auto responses = detail::complete_distinct(firsts, ctx, cfg.max_inflight);

  BinScoreMatrix m;
  m.instruction_kind = instruction.kind;
  m.config = to_json(cfg);
  m.bins = bins;
  for (const auto& q : queries.queries) m.query_ids.push_back(q.id);
  m.raw.assign(bins.size(), std::vector<std::vector<double>>(
                                queries.size(), std::vector<double>(cfg.samples_per_bin, 0.0)));
  for (const auto& c : cells)
    m.raw[c.bin_row][c.query_row][c.sample] =
        score_prediction(task, responses.at(c.key), c.meta.gold_output).score;
  for (const auto& per_bin : m.raw) {
    double total = 0.0;
    for (const auto& per_query : per_bin)
      total += std::accumulate(per_query.begin(), per_query.end(), 0.0) / static_cast<double>(per_query.size());
    m.scores.push_back(per_bin.empty() ? 0.0 : total / static_cast<double>(per_bin.size()));
  }

  if (stats) {
    stats->cells = cells.size();
    stats->distinct_prompts = firsts.size();
    std::vector<std::string> keys;
    for (const auto* c : firsts) keys.push_back(c->key);
    std::sort(keys.begin(), keys.end());
    std::string joined;
    for (const auto& k : keys) joined += k;
    stats->cache_keys_digest = sha256_hex(joined);
  }
  return m;
}

struct BinEstimate {
  double score = 0.0;
  std::vector<std::vector<double>> raw;  // [query][sample]
};

inline BinEstimate estimate_bin_score(const TaskSpec& task, const Instruction& instruction, std::size_t bin,
                                      const CandidatePool& pool, const QuerySet& queries,
                                      const std::vector<BinPartition>& partitions, const EstimatorConfig& cfg,
                                      const RunContext& ctx) {
  auto m = estimate_bins(task, instruction, {bin}, pool, queries, partitions, cfg, ctx);
  return {m.scores[0], std::move(m.raw[0])};
}

inline double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

/// Error bar of one bin: the per-query standard deviation over samples,
/// averaged over queries.
inline double mean_within_query_std(const std::vector<std::vector<double>>& per_query) {
  if (per_query.empty()) return 0.0;
  double total = 0.0;
  for (const auto& samples : per_query) total += population_std(samples);
  return total / static_cast<double>(per_query.size());
}

/// Spread of the per-query sample means.
inline double across_query_std(const std::vector<std::vector<double>>& per_query) {
  std::vector<double> means;
  for (const auto& samples : per_query)
    means.push_back(samples.empty() ? 0.0
                                    : std::accumulate(samples.begin(), samples.end(), 0.0) /
                                          static_cast<double>(samples.size()));
  return population_std(means);
}

// ---------------------------------------------------------------------------
// End-to-end run

struct NiceReport {
  std::string task;
  InstructionKind instruction_kind = InstructionKind::kNone;
  std::optional<double> nice;  // empty when every bin scored 0
  std::vector<double> bin_scores;
  std::vector<double> bin_std;
  std::vector<double> bin_std_across_queries;
  Verdict verdict = Verdict::kIndeterminate;
  Thresholds thresholds;
  Json config;
  Json provenance;

  bool degenerate() const { return !nice.has_value(); }
};

inline Json to_json(const NiceReport& r) {
  return {{"task", r.task},
          {"instruction_kind", to_string(r.instruction_kind)},
          {"nice", r.nice ? Json(*r.nice) : Json(nullptr)},
          {"degenerate", r.degenerate()},
          {"bin_scores", r.bin_scores},
          {"bin_std", r.bin_std},
          {"bin_std_across_queries", r.bin_std_across_queries},
          {"verdict", to_string(r.verdict)},
          {"thresholds", {{"low", r.thresholds.low}, {"high", r.thresholds.high}}},
          {"config", r.config},
          {"provenance", r.provenance}};
}

inline NiceReport nice_report_from_json(const Json& j) {
  NiceReport r;
  r.task = j.at("task").get<std::string>();
  r.instruction_kind = parse_instruction_kind(j.at("instruction_kind").get<std::string>());
  if (!j.at("nice").is_null()) r.nice = j["nice"].get<double>();
  r.bin_scores = j.at("bin_scores").get<std::vector<double>>();
  r.bin_std = j.at("bin_std").get<std::vector<double>>();
  r.bin_std_across_queries = j.value("bin_std_across_queries", std::vector<double>{});
  const auto v = j.at("verdict").get<std::string>();
  for (auto c : {Verdict::kOptimizeIce, Verdict::kIndeterminate, Verdict::kOptimizeInstruction})
    if (to_string(c) == v) r.verdict = c;
  r.thresholds = {j.at("thresholds").at("low").get<double>(), j.at("thresholds").at("high").get<double>()};
  r.config = j.at("config");
  r.provenance = j.at("provenance");
  return r;
}

/// Aligned plain-text rendering of one report.
inline std::string render_table(const NiceReport& r) {
  std::ostringstream os;
  os << "task: " << r.task << "   instruction: " << to_string(r.instruction_kind) << '\n';
  os << std::left << std::setw(6) << "bin" << std::right << std::setw(10) << "score" << std::setw(10) << "std"
     << '\n';
  os << std::fixed << std::setprecision(4);
  for (std::size_t j = 0; j < r.bin_scores.size(); ++j)
    os << std::left << std::setw(6) << (j + 1) << std::right << std::setw(10) << r.bin_scores[j]
       << std::setw(10) << (j < r.bin_std.size() ? r.bin_std[j] : 0.0) << '\n';
  if (r.nice)
    os << "NICE: " << *r.nice;
  else
    os << "NICE: undefined (all bins scored 0)";
  os << "   verdict: " << to_string(r.verdict) << "   thresholds: " << r.thresholds.low << " / "
     << r.thresholds.high << '\n';
  return os.str();
}

struct NiceRun {
  NiceReport report;
  BinScoreMatrix matrix;
  std::vector<BinPartition> partitions;
  QuerySet queries;  // the sampled queries
};

/// Samples queries, bins the pool per query, estimates every bin, and
/// turns the bin scores into NICE and a verdict.
inline NiceRun run_nice(const TaskSpec& task, const Instruction& instruction, const CandidatePool& pool,
                        const QuerySet& queries, const EstimatorConfig& cfg, const RunContext& ctx,
                        const Thresholds& thresholds = {}) {
  task.validate();
  cfg.validate(task);
  thresholds.validate();
  validate_pool_labels(pool, task);
  if (queries.empty()) throw Error(ErrorCode::kInvalidValue, "no queries");

  NiceRun run;
  run.queries = sample_queries(queries, cfg.num_queries, cfg.seed);
  for (const auto& q : run.queries.queries) run.partitions.push_back(partition_bins(pool, q, cfg.num_bins));

  std::vector<std::size_t> bins(cfg.num_bins);
  std::iota(bins.begin(), bins.end(), std::size_t{0});
  GridStats stats;
  run.matrix = estimate_bins(task, instruction, bins, pool, run.queries, run.partitions, cfg, ctx, &stats);

  NiceReport& r = run.report;
  r.task = task.name;
  r.instruction_kind = instruction.kind;
  r.bin_scores = run.matrix.scores;
  for (const auto& per_bin : run.matrix.raw) {
    r.bin_std.push_back(mean_within_query_std(per_bin));
    r.bin_std_across_queries.push_back(across_query_std(per_bin));
  }
  r.thresholds = thresholds;
  try {
    r.nice = compute_nice(r.bin_scores);
    r.verdict = decide(*r.nice, thresholds);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kAllBinsZero) throw;
    r.verdict = Verdict::kIndeterminate;
  }
  r.config = {{"task", to_json(task)},
              {"estimator", to_json(cfg)},
              {"instruction", {{"kind", to_string(instruction.kind)}, {"text", instruction.text}}}};
  Json query_ids = Json::array();
  for (const auto& q : run.queries.queries) query_ids.push_back(q.id);
  r.provenance = {{"seed", cfg.seed},
                  {"config_hash", sha256_hex(r.config.dump())},
                  {"backend", ctx.backend->model_name()},
                  {"cells", stats.cells},
                  {"distinct_prompts", stats.distinct_prompts},
                  {"cache_keys_digest", stats.cache_keys_digest},
                  {"queries", query_ids}};
  if (task.measure == Measure::kQdmrGed)
    r.provenance["score_note"] = "bin scores use 1 - GED/(|V1|+|V2|+|E1|+|E2|), not raw GED";
  return run;
}

}  // namespace nicekit
