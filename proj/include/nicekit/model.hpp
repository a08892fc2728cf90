#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <system_error>
#include <thread>
#include <utility>

#include "nicekit/corpus.hpp"
#include "nicekit/error.hpp"
#include "nicekit/hash.hpp"
#include "nicekit/http.hpp"
#include "nicekit/log.hpp"
#include "nicekit/prompting.hpp"
#include "nicekit/random.hpp"

namespace nicekit {

/// Grid coordinates of one completion; the mock oracle is keyed by them.
struct CompletionMeta {
  std::string query_id;
  std::size_t bin_index = 0;  // 0-based
  std::size_t sample_index = 0;
  InstructionKind instruction_kind = InstructionKind::kNone;
  std::string gold_output;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const std::string& prompt, const CompletionMeta& meta) = 0;
  /// Model identity used in cache keys.
  virtual std::string model_name() const = 0;
  virtual double temperature() const = 0;
  virtual int max_tokens() const = 0;
  /// Number of completions actually served.
  virtual std::size_t calls() const = 0;
};

// ---------------------------------------------------------------------------
// Mock oracle

enum class WrongAnswerPolicy { kFixedWrongToken, kRandomOtherLabel };

struct MockOracle {
  std::vector<double> per_bin_success;
  std::map<InstructionKind, double> instruction_multiplier;
  WrongAnswerPolicy wrong_answer_policy = WrongAnswerPolicy::kFixedWrongToken;
  std::string wrong_token = "<wrong>";
  std::optional<LabelSpace> labels;  // for kRandomOtherLabel
  std::uint64_t seed = 0;

  void validate() const {
    if (per_bin_success.empty())
      throw Error(ErrorCode::kInvalidValue, "mock oracle needs per-bin success probabilities");
    for (double p : per_bin_success)
      if (!(p >= 0.0 && p <= 1.0))
        throw Error(ErrorCode::kInvalidValue, "mock success probability outside [0, 1]");
    for (const auto& [kind, m] : instruction_multiplier)
      if (!(m >= 0.0)) throw Error(ErrorCode::kInvalidValue, "negative instruction multiplier");
  }

  /// multiplier(kind) * p_bin, clamped to 1.
  double success_probability(std::size_t bin, InstructionKind kind) const {
    if (bin >= per_bin_success.size())
      throw Error(ErrorCode::kInvalidValue, "bin " + std::to_string(bin) + " outside the mock profile");
    auto it = instruction_multiplier.find(kind);
    const double m = it == instruction_multiplier.end() ? 1.0 : it->second;
    return std::min(1.0, m * per_bin_success[bin]);
  }

  static MockOracle flat(std::size_t bins, double p, std::uint64_t seed = 0) {
    MockOracle o;
    o.per_bin_success.assign(bins, p);
    o.seed = seed;
    return o;
  }
};

inline std::string to_string(WrongAnswerPolicy p) {
  return p == WrongAnswerPolicy::kFixedWrongToken ? "fixed_wrong_token" : "random_other_label";
}

inline Json to_json(const MockOracle& o) {
  Json mult = Json::object();
  for (const auto& [kind, m] : o.instruction_multiplier) mult[to_string(kind)] = m;
  Json j = {{"per_bin_success", o.per_bin_success},
            {"instruction_multiplier", mult},
            {"wrong_answer_policy", to_string(o.wrong_answer_policy)},
            {"wrong_token", o.wrong_token},
            {"seed", o.seed}};
  if (o.labels) j["labels"] = o.labels->labels;
  return j;
}

inline MockOracle mock_oracle_from_json(const Json& j) {
  MockOracle o;
  o.per_bin_success = j.at("per_bin_success").get<std::vector<double>>();
  if (j.contains("instruction_multiplier"))
    for (const auto& [kind, m] : j["instruction_multiplier"].items())
      o.instruction_multiplier[parse_instruction_kind(kind)] = m.get<double>();
  if (j.value("wrong_answer_policy", std::string("fixed_wrong_token")) == "random_other_label")
    o.wrong_answer_policy = WrongAnswerPolicy::kRandomOtherLabel;
  o.wrong_token = j.value("wrong_token", o.wrong_token);
  if (j.contains("labels")) o.labels = LabelSpace{j["labels"].get<std::vector<std::string>>()};
  o.seed = j.value("seed", std::uint64_t{0});
  o.validate();
  return o;
}

class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockOracle oracle) : oracle_(std::move(oracle)) { oracle_.validate(); }

  std::string complete(const std::string& /*prompt*/, const CompletionMeta& meta) override {
    ++calls_;
    Rng rng(derive_seed(oracle_.seed, {string_key(meta.query_id), meta.bin_index, meta.sample_index}));
    const double p = oracle_.success_probability(meta.bin_index, meta.instruction_kind);
    if (rng.uniform01() < p) return meta.gold_output;
    if (oracle_.wrong_answer_policy == WrongAnswerPolicy::kRandomOtherLabel && oracle_.labels) {
      std::vector<const std::string*> others;
      for (const auto& l : oracle_.labels->labels)
        if (l != meta.gold_output) others.push_back(&l);
      if (!others.empty()) return *others[rng.uniform_index(others.size())];
    }
    return oracle_.wrong_token;
  }

  // Distinct oracle profiles never share cache entries.
  std::string model_name() const override { return "mock-" + sha256_hex(to_json(oracle_).dump()).substr(0, 16); }
  double temperature() const override { return 0.0; }
  int max_tokens() const override { return 0; }
  std::size_t calls() const override { return calls_.load(); }
  const MockOracle& oracle() const { return oracle_; }

 private:
  MockOracle oracle_;
  std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Remote OpenAI-compatible backend

struct RemoteConfig {
  std::string base_url;
  std::string model_name;
  double temperature = 0.0;
  int max_tokens = 256;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  std::string token_env = "NICEKIT_API_KEY";
  std::size_t max_inflight = 4;

  void validate() const {
    if (base_url.empty()) throw Error(ErrorCode::kInvalidValue, "remote backend needs base_url");
    if (model_name.empty()) throw Error(ErrorCode::kInvalidValue, "remote backend needs model_name");
    if (!(temperature >= 0.0)) throw Error(ErrorCode::kInvalidValue, "temperature must be >= 0");
    if (retry.max_attempts < 1 || retry.max_attempts > 20)
      throw Error(ErrorCode::kInvalidValue, "retry attempts must be in [1, 20]");
    if (max_inflight == 0) throw Error(ErrorCode::kInvalidValue, "max_inflight must be >= 1");
  }
};

/// Caps the number of concurrent holders.
class InflightLimiter {
 public:
  explicit InflightLimiter(std::size_t max) : max_(max) {}

  class Slot {
   public:
    explicit Slot(InflightLimiter& l) : l_(l) { l_.acquire(); }
    ~Slot() { l_.release(); }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    InflightLimiter& l_;
  };

  std::size_t peak() const {
    std::lock_guard lock(m_);
    return peak_;
  }

 private:
  void acquire() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return active_ < max_; });
    ++active_;
    peak_ = std::max(peak_, active_);
  }
  void release() {
    {
      std::lock_guard lock(m_);
      --active_;
    }
    cv_.notify_one();
  }

  mutable std::mutex m_;
  std::condition_variable cv_;
  std::size_t max_;
  std::size_t active_ = 0;
  std::size_t peak_ = 0;
};

class RemoteBackend final : public Backend {
 public:
  RemoteBackend(RemoteConfig cfg, std::shared_ptr<HttpTransport> transport,
                Sleeper sleeper = default_sleeper())
      : cfg_(std::move(cfg)), transport_(std::move(transport)), sleep_(std::move(sleeper)),
        limiter_(cfg_.max_inflight) {
    cfg_.validate();
  }

  std::string complete(const std::string& prompt, const CompletionMeta& /*meta*/) override {
    Json body = {{"model", cfg_.model_name},
                 {"messages", Json::array({{{"role", "user"}, {"content", prompt}}})},
                 {"temperature", cfg_.temperature},
                 {"max_tokens", cfg_.max_tokens}};
    std::string url = cfg_.base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    url += "/chat/completions";
    HttpResponse res;
    {
      InflightLimiter::Slot slot(limiter_);
      res = post_with_retry(*transport_, url, body.dump(), bearer_headers(cfg_.token_env),
                            cfg_.timeout, cfg_.retry, sleep_);
    }
    ++calls_;
    try {
      Json j = Json::parse(res.body);
      const Json& content = j.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) throw Error(ErrorCode::kMalformedResponse, "content is not a string");
      return content.get<std::string>();
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kMalformedResponse, url + ": " + e.what());
    }
  }

  std::string model_name() const override { return cfg_.model_name; }
  double temperature() const override { return cfg_.temperature; }
  int max_tokens() const override { return cfg_.max_tokens; }
  std::size_t calls() const override { return calls_.load(); }
  std::size_t peak_inflight() const { return limiter_.peak(); }

 private:
  RemoteConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  Sleeper sleep_;
  InflightLimiter limiter_;
  std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Content-addressed response cache

/// Hash of the canonical encoding of (model, prompt, temperature, max_tokens).
inline std::string cache_key(const std::string& model, const std::string& prompt, double temperature,
                             int max_tokens) {
  return sha256_hex(Json::array({model, prompt, temperature, max_tokens}).dump());
}

inline std::string cache_key(const Backend& b, const std::string& prompt) {
  return cache_key(b.model_name(), prompt, b.temperature(), b.max_tokens());
}

struct CompletionRecord {
  std::string cache_key;
  std::string prompt;
  std::string response;
  std::string backend;
  double temperature = 0.0;
  int max_tokens = 0;
  std::string timestamp;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct CacheStats {
  std::size_t hits = 0;
  std::size_t misses = 0;
  std::size_t corrupt = 0;
};

/// One JSON file per record, named by the hex cache key. Reads are shared,
/// writes exclusive; records land via write-to-temp then rename.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::kCacheIo, "cannot create " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

  /// Stored response, or nullopt on a miss. Corrupted records count as misses.
  std::optional<std::string> lookup(const std::string& key) {
    std::shared_lock lock(mutex_);
    const auto path = path_for(key);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
      Json j = Json::parse(in);
      if (j.at("cache_key").get<std::string>() != key) throw std::runtime_error("key mismatch");
      return j.at("response").get<std::string>();
    } catch (const std::exception& e) {
      corrupt_.fetch_add(1);
      log::warn("corrupted cache record " + path.string() + " treated as a miss (" + e.what() + ")");
      return std::nullopt;
    }
  }

  void store(const CompletionRecord& rec) {
    Json j = {{"cache_key", rec.cache_key}, {"prompt", rec.prompt},       {"response", rec.response},
              {"backend", rec.backend},     {"temperature", rec.temperature},
              {"max_tokens", rec.max_tokens}, {"timestamp", rec.timestamp}};
    std::unique_lock lock(mutex_);
    const auto final_path = path_for(rec.cache_key);
    auto tmp = final_path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error(ErrorCode::kCacheIo, "cannot write " + tmp.string());
      out << j.dump(2) << '\n';
      if (!out) throw Error(ErrorCode::kCacheIo, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, final_path, ec);
    if (ec) throw Error(ErrorCode::kCacheIo, "cannot rename into " + final_path.string() + ": " + ec.message());
  }

  CacheStats stats() const { return {hits_.load(), misses_.load(), corrupt_.load()}; }
  void count_hit() { hits_.fetch_add(1); }
  void count_miss() { misses_.fetch_add(1); }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::atomic<std::size_t> hits_{0}, misses_{0}, corrupt_{0};
};

/// Cache hit returns the stored response without touching the backend; a
/// miss completes and stores the record.
inline std::string cached_complete(ResponseCache& cache, Backend& backend, const std::string& prompt,
                                   const CompletionMeta& meta) {
  const std::string key = cache_key(backend, prompt);
  if (auto hit = cache.lookup(key)) {
    cache.count_hit();
    return *hit;
  }
  cache.count_miss();
  std::string response = backend.complete(prompt, meta);
  cache.store({key, prompt, response, backend.model_name(), backend.temperature(), backend.max_tokens(),
               utc_timestamp()});
  return response;
}

}  // namespace nicekit
