#pragma once

// Independent reference implementations used to check the library.

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "nicekit.hpp"

namespace oracle {

// --- BM25 straight from the formula, regex tokenization (ASCII corpora) ---

inline std::vector<std::string> words(const std::string& text) {
  std::string lower = text;
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  static const std::regex re("[a-z0-9]+");
  std::vector<std::string> out;
  for (std::sregex_iterator it(lower.begin(), lower.end(), re), end; it != end; ++it) out.push_back(it->str());
  return out;
}

inline double bm25(const std::string& query, const std::vector<std::string>& docs, std::size_t d,
                   double k1 = 1.5, double b = 0.75) {
  std::vector<std::vector<std::string>> toks;
  double total_len = 0;
  for (const auto& doc : docs) {
    toks.push_back(words(doc));
    total_len += static_cast<double>(toks.back().size());
  }
  const double n = static_cast<double>(docs.size());
  const double avgdl = total_len / n;
  double score = 0;
  for (const auto& term : words(query)) {
    double df = 0;
    for (const auto& t : toks)
      if (std::find(t.begin(), t.end(), term) != t.end()) df += 1;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    const double tf = static_cast<double>(std::count(toks[d].begin(), toks[d].end(), term));
    const double len = static_cast<double>(toks[d].size());
    const double norm = avgdl > 0 ? (1 - b + b * len / avgdl) : 1.0;
    score += idf * tf * (k1 + 1) / (tf + k1 * norm);
  }
  return score;
}

// --- DPP: exhaustive MAP by determinants ---

inline double subset_det(const Eigen::MatrixXd& L, const std::vector<std::size_t>& s) {
  Eigen::MatrixXd sub(s.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) sub(i, j) = L(s[i], s[j]);
  return sub.determinant();
}

inline double exhaustive_map_det(const Eigen::MatrixXd& L, std::size_t k) {
  const std::size_t n = static_cast<std::size_t>(L.rows());
  double best = -std::numeric_limits<double>::infinity();
  std::vector<bool> mask(n, false);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(k), true);
  do {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) s.push_back(i);
    best = std::max(best, subset_det(L, s));
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return best;
}

// --- GED: minimum over every partial injection of V1 into V2 ---

inline std::size_t brute_force_ged(const nicekit::QdmrGraph& g1, const nicekit::QdmrGraph& g2) {
  const std::size_t n1 = g1.nodes.size(), n2 = g2.nodes.size();
  std::set<std::pair<std::size_t, std::size_t>> e1(g1.edges.begin(), g1.edges.end());
  std::set<std::pair<std::size_t, std::size_t>> e2(g2.edges.begin(), g2.edges.end());
  constexpr std::size_t kDeleted = static_cast<std::size_t>(-1);
  std::vector<std::size_t> map(n1, kDeleted);
  std::vector<bool> used(n2, false);
  std::size_t best = std::numeric_limits<std::size_t>::max();

  auto cost_of = [&] {
    std::size_t cost = 0;
    for (std::size_t i = 0; i < n1; ++i)
      cost += map[i] == kDeleted ? 1 : (g1.nodes[i] == g2.nodes[map[i]] ? 0 : 1);
    for (std::size_t j = 0; j < n2; ++j) cost += used[j] ? 0 : 1;
    std::size_t kept = 0;
    for (const auto& [a, c] : e1) {
      if (map[a] != kDeleted && map[c] != kDeleted && e2.count({map[a], map[c]}))
        ++kept;
      else
        ++cost;
    }
    cost += e2.size() - kept;
    return cost;
  };

  std::function<void(std::size_t)> go = [&](std::size_t i) {
    if (i == n1) {
      best = std::min(best, cost_of());
      return;
    }
    map[i] = kDeleted;
    go(i + 1);
    for (std::size_t j = 0; j < n2; ++j) {
      if (used[j]) continue;
      used[j] = true;
      map[i] = j;
      go(i + 1);
      used[j] = false;
      map[i] = kDeleted;
    }
  };
  go(0);
  return best;
}

// --- NICE straight from the definition ---

inline double nice(const std::vector<double>& s) {
  double sum = 0, mx = 0;
  for (double x : s) {
    sum += x;
    mx = std::max(mx, x);
  }
  return (sum / static_cast<double>(s.size())) / mx;
}

}  // namespace oracle

namespace fixture {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    std::string tmpl = (base / "nicekit-test-XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline nicekit::Vector random_vector(nicekit::Rng& rng, std::size_t dim) {
  nicekit::Vector v(dim);
  for (auto& x : v) x = rng.uniform01() * 2.0 - 1.0;
  return v;
}

inline nicekit::CandidatePool labelled_pool(std::size_t n, std::size_t dim, nicekit::Rng& rng,
                                            const std::vector<std::string>& labels = {"positive", "negative"}) {
  std::vector<nicekit::Example> ex;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "e%05zu", i);
    ex.push_back({id, "input " + std::to_string(i), labels[rng.uniform_index(labels.size())],
                  random_vector(rng, dim)});
  }
  return nicekit::CandidatePool(std::move(ex));
}

inline nicekit::QuerySet labelled_queries(std::size_t n, std::size_t dim, nicekit::Rng& rng,
                                          const std::vector<std::string>& labels = {"positive", "negative"}) {
  nicekit::QuerySet qs;
  for (std::size_t i = 0; i < n; ++i)
    qs.queries.push_back({"q" + std::to_string(i), "query " + std::to_string(i),
                          labels[rng.uniform_index(labels.size())], random_vector(rng, dim)});
  return qs;
}

inline nicekit::TaskSpec sentiment_task() {
  nicekit::TaskSpec t;
  t.name = "sentiment";
  t.kind = nicekit::TaskKind::kClassification;
  t.label_space = nicekit::LabelSpace{{"positive", "negative"}};
  t.measure = nicekit::Measure::kAccuracy;
  return t;
}

inline nicekit::TaskSpec generation_task(nicekit::Measure m = nicekit::Measure::kExactMatch) {
  nicekit::TaskSpec t;
  t.name = "generation";
  t.kind = nicekit::TaskKind::kGeneration;
  t.measure = m;
  return t;
}

/// Random QDMR-shaped graph: labels from a small alphabet, back-references only.
inline nicekit::QdmrGraph random_graph(nicekit::Rng& rng, std::size_t max_nodes) {
  static const std::vector<std::string> alphabet = {"a", "b", "c"};
  nicekit::QdmrGraph g;
  const std::size_t n = rng.uniform_index(max_nodes + 1);
  for (std::size_t i = 0; i < n; ++i) {
    g.nodes.push_back(alphabet[rng.uniform_index(alphabet.size())]);
    for (std::size_t k = 0; k < i; ++k)
      if (rng.uniform01() < 0.35) g.edges.emplace_back(i, k);
  }
  return g;
}

}  // namespace fixture
