#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nicekit/corpus.hpp"
#include "nicekit/error.hpp"
#include "nicekit/random.hpp"
#include "nicekit/similarity.hpp"

namespace nicekit {

enum class DemoSource { kRandom, kTopKDense, kBm25, kDpp, kBinSample };

inline std::string to_string(DemoSource s) {
  switch (s) {
    case DemoSource::kRandom: return "random";
    case DemoSource::kTopKDense: return "top_k_dense";
    case DemoSource::kBm25: return "bm25";
    case DemoSource::kDpp: return "dpp";
    case DemoSource::kBinSample: return "bin_sample";
  }
  return "unknown";
}

inline DemoSource parse_demo_source(std::string_view s) {
  if (s == "random") return DemoSource::kRandom;
  if (s == "top_k_dense" || s == "topk" || s == "top-k") return DemoSource::kTopKDense;
  if (s == "bm25") return DemoSource::kBm25;
  if (s == "dpp") return DemoSource::kDpp;
  if (s == "bin_sample") return DemoSource::kBinSample;
  throw Error(ErrorCode::kInvalidValue, "unknown selector '" + std::string(s) + "'");
}

struct DemoSet {
  std::vector<std::string> demos;
  DemoSource source = DemoSource::kRandom;
  std::uint64_t seed = 0;

  std::size_t size() const { return demos.size(); }
  bool operator==(const DemoSet&) const = default;
};

inline Json to_json(const DemoSet& d) {
  return {{"demos", d.demos}, {"source", to_string(d.source)}, {"seed", d.seed}};
}

namespace detail {
inline void check_k(std::size_t k, std::size_t pool_size) {
  if (k == 0 || k > pool_size)
    throw Error(ErrorCode::kKTooLarge, "k=" + std::to_string(k) + " outside [1, " +
                                           std::to_string(pool_size) + "]");
}
}  // namespace detail

inline DemoSet select_random(const CandidatePool& pool, std::size_t k, std::uint64_t seed) {
  detail::check_k(k, pool.size());
  Rng rng(derive_seed(seed, {string_key("select_random")}));
  DemoSet out{{}, DemoSource::kRandom, seed};
  for (std::size_t i : rng.sample_indices(pool.size(), k)) out.demos.push_back(pool[i].id);
  return out;
}

/// The k most cosine-similar examples, most similar first.
inline DemoSet select_top_k(const CandidatePool& pool, const Query& query, std::size_t k) {
  detail::check_k(k, pool.size());
  auto ranked = similarity_rank(pool, query);
  DemoSet out{{}, DemoSource::kTopKDense, 0};
  for (std::size_t i = 0; i < k; ++i) out.demos.push_back(ranked[i].id);
  return out;
}

inline DemoSet permute_demos(const DemoSet& demos, std::uint64_t seed) {
  DemoSet out = demos;
  Rng rng(derive_seed(seed, {string_key("permute_demos")}));
  rng.shuffle(out.demos);
  return out;
}

// ---------------------------------------------------------------------------
// BM25

struct Bm25Params {
  double k1 = 1.5;
  double b = 0.75;

  void validate() const {
    if (!(k1 > 0.0)) throw Error(ErrorCode::kInvalidValue, "bm25 k1 must be > 0");
    if (!(b >= 0.0 && b <= 1.0)) throw Error(ErrorCode::kInvalidValue, "bm25 b must be in [0, 1]");
  }
};

// Lowercase, split on runs of non-alphanumeric ASCII. Bytes >= 0x80 count
// as word characters so UTF-8 words stay whole.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

struct CorpusStats {
  std::size_t num_docs = 0;
  double avg_doc_len = 0.0;
  std::unordered_map<std::string, std::size_t> doc_freq;

  static CorpusStats from_documents(const std::vector<std::vector<std::string>>& docs) {
    CorpusStats s;
    s.num_docs = docs.size();
    std::size_t total = 0;
    for (const auto& doc : docs) {
      total += doc.size();
      std::vector<std::string> uniq = doc;
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      for (auto& t : uniq) ++s.doc_freq[t];
    }
    s.avg_doc_len = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
    return s;
  }

  std::size_t df(const std::string& term) const {
    auto it = doc_freq.find(term);
    return it == doc_freq.end() ? 0 : it->second;
  }
};

inline double bm25_idf(std::size_t num_docs, std::size_t df) {
  const double n = static_cast<double>(num_docs), d = static_cast<double>(df);
  return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

/// Okapi BM25 of one document against a tokenized query. Repeated query
/// tokens contribute once per occurrence.
inline double bm25_score(const std::vector<std::string>& query_tokens,
                         const std::vector<std::string>& doc_tokens, const CorpusStats& stats,
                         const Bm25Params& params = {}) {
  if (query_tokens.empty() || doc_tokens.empty()) return 0.0;
  std::unordered_map<std::string_view, std::size_t> tf;
  for (const auto& t : doc_tokens) ++tf[t];
  const double len_norm =
      stats.avg_doc_len > 0.0 ? static_cast<double>(doc_tokens.size()) / stats.avg_doc_len : 1.0;
  const double denom_base = params.k1 * (1.0 - params.b + params.b * len_norm);
  double score = 0.0;
  for (const auto& term : query_tokens) {
    auto it = tf.find(term);
    if (it == tf.end()) continue;
    const double f = static_cast<double>(it->second);
    score += bm25_idf(stats.num_docs, stats.df(term)) * f * (params.k1 + 1.0) / (f + denom_base);
  }
  return score;
}

/// Tokenized pool plus its corpus statistics, reusable across queries.
class Bm25Index {
 public:
  explicit Bm25Index(const CandidatePool& pool, Bm25Params params = {}) : params_(params) {
    params_.validate();
    docs_.reserve(pool.size());
    for (const auto& ex : pool.examples()) {
      ids_.push_back(ex.id);
      docs_.push_back(tokenize(ex.input_text));
    }
    stats_ = CorpusStats::from_documents(docs_);
  }

  std::vector<ScoredId> rank(std::string_view query_text) const {
    auto q = tokenize(query_text);
    std::vector<ScoredId> out;
    out.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i)
      out.push_back({ids_[i], bm25_score(q, docs_[i], stats_, params_), i});
    sort_by_score(out);
    return out;
  }

  const CorpusStats& stats() const { return stats_; }

 private:
  Bm25Params params_;
  std::vector<std::string> ids_;
  std::vector<std::vector<std::string>> docs_;
  CorpusStats stats_;
};

inline DemoSet select_bm25(const Bm25Index& index, std::size_t pool_size, const Query& query,
                           std::size_t k) {
  detail::check_k(k, pool_size);
  auto ranked = index.rank(query.input_text);
  DemoSet out{{}, DemoSource::kBm25, 0};
  for (std::size_t i = 0; i < k; ++i) out.demos.push_back(ranked[i].id);
  return out;
}

inline DemoSet select_bm25(const CandidatePool& pool, const Query& query, std::size_t k,
                           const Bm25Params& params = {}) {
  detail::check_k(k, pool.size());
  return select_bm25(Bm25Index(pool, params), pool.size(), query, k);
}

// ---------------------------------------------------------------------------
// DPP greedy MAP

inline constexpr double kDppJitter = 1e-9;

/// Greedy MAP for an L-ensemble given entry-wise access kernel(i, j).
/// Each step adds the item that maximizes the determinant of the selected
/// principal submatrix; equal gains go to the lower index. Determinant gains
/// are tracked with an incremental Cholesky factorization, so only the
/// columns of selected items are ever evaluated.
template <typename Kernel>
std::vector<std::size_t> dpp_greedy_map(std::size_t n, std::size_t k, Kernel&& kernel,
                                        double jitter = kDppJitter) {
  if (k > n) throw Error(ErrorCode::kKTooLarge, "k exceeds kernel size");
  std::vector<double> gain(n);
  for (std::size_t i = 0; i < n; ++i) gain[i] = kernel(i, i) + jitter;
  std::vector<std::vector<double>> chol(n);
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> selected;
  selected.reserve(k);
  while (selected.size() < k) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i] && (best == n || gain[i] > gain[best])) best = i;
    taken[best] = true;
    selected.push_back(best);
    if (selected.size() == k) break;
    const double pivot = std::sqrt(std::max(gain[best], 0.0));
    const auto& cb = chol[best];
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double e = kernel(best, i);
      const auto& ci = chol[i];
      for (std::size_t t = 0; t < cb.size(); ++t) e -= cb[t] * ci[t];
      e = pivot > 0.0 ? e / pivot : 0.0;
      chol[i].push_back(e);
      gain[i] -= e * e;
    }
  }
  return selected;
}

/// Dense symmetric matrix, row-major.
struct KernelMatrix {
  std::size_t n = 0;
  std::vector<double> data;

  explicit KernelMatrix(std::size_t size) : n(size), data(size * size, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return data[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * n + j]; }
};

inline std::vector<std::size_t> dpp_greedy_map(const KernelMatrix& L, std::size_t k,
                                               double jitter = kDppJitter) {
  return dpp_greedy_map(L.n, k, [&](std::size_t i, std::size_t j) { return L(i, j); }, jitter);
}

/// Query-conditioned kernel L = diag(q) S diag(q) with S = (1 + cos) / 2 and
/// q_i = exp(quality_scale * cos(e_i, query)).
class DppKernel {
 public:
  DppKernel(std::vector<Vector> items, const Vector& query, double quality_scale) {
    unit_.reserve(items.size());
    quality_.reserve(items.size());
    for (auto& v : items) {
      quality_.push_back(std::exp(quality_scale * cosine(v, query)));
      double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      for (double& x : v) x /= norm;
      unit_.push_back(std::move(v));
    }
  }

  std::size_t size() const { return unit_.size(); }

  double similarity(std::size_t i, std::size_t j) const {
    if (i == j) return 1.0;
    double c = std::inner_product(unit_[i].begin(), unit_[i].end(), unit_[j].begin(), 0.0);
    return (1.0 + std::clamp(c, -1.0, 1.0)) / 2.0;
  }

  double operator()(std::size_t i, std::size_t j) const {
    return quality_[i] * similarity(i, j) * quality_[j];
  }

 private:
  std::vector<Vector> unit_;
  std::vector<double> quality_;
};

inline DemoSet select_dpp(const CandidatePool& pool, const Query& query, std::size_t k,
                          double quality_scale = 1.0) {
  detail::check_k(k, pool.size());
  const Vector& q = require_embedding(query.embedding, query.id);
  // Items in ascending id order so determinant ties resolve to the lower id.
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pool[a].id < pool[b].id; });
  std::vector<Vector> items;
  items.reserve(order.size());
  for (std::size_t i : order) items.push_back(require_embedding(pool[i].embedding, pool[i].id));
  DppKernel kernel(std::move(items), q, quality_scale);
  DemoSet out{{}, DemoSource::kDpp, 0};
  for (std::size_t i : dpp_greedy_map(kernel.size(), k, kernel)) out.demos.push_back(pool[order[i]].id);
  return out;
}

}  // namespace nicekit
