#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nicekit/corpus.hpp"
#include "nicekit/error.hpp"

namespace nicekit {

/// Score in [0, 1], higher is better, plus diagnostics.
struct MeasureResult {
  double score = 0.0;
  bool unparseable = false;         // prediction could not be interpreted
  std::optional<double> raw;        // e.g. raw graph edit distance
};

// ---------------------------------------------------------------------------
// Text normalization

inline std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending = !out.empty();
    } else {
      if (pending) out.push_back(' ');
      pending = false;
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

inline std::string casefold(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(c));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Accuracy and exact match

inline MeasureResult accuracy_score(std::string_view pred, std::string_view gold, const LabelSpace& labels,
                                    bool case_sensitive = false) {
  auto norm = [&](std::string_view s) {
    return case_sensitive ? collapse_whitespace(s) : casefold(collapse_whitespace(s));
  };
  const std::string p = norm(pred), g = norm(gold);
  bool gold_ok = false, pred_ok = false;
  for (const auto& l : labels.labels) {
    const std::string nl = norm(l);
    gold_ok = gold_ok || nl == g;
    pred_ok = pred_ok || nl == p;
  }
  if (!gold_ok) throw Error(ErrorCode::kLabelOutsideSpace, "gold '" + std::string(gold) + "'");
  return {p == g ? 1.0 : 0.0, !pred_ok, std::nullopt};
}

inline MeasureResult exact_match_score(std::string_view pred, std::string_view gold) {
  return {collapse_whitespace(pred) == collapse_whitespace(gold) ? 1.0 : 0.0, false, std::nullopt};
}

// ---------------------------------------------------------------------------
// Sentence BLEU

/// BLEU-4 with uniform weights and brevity penalty over whitespace tokens.
/// Unigram precision is unsmoothed; orders 2-4 use (matches + 1) / (total + 1).
inline double bleu_score(std::string_view pred, std::string_view gold) {
  const auto hyp = split_whitespace(pred);
  const auto ref = split_whitespace(gold);
  if (hyp.empty()) return 0.0;
  constexpr std::size_t kMaxOrder = 4;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i)
      ++ref_counts[std::vector<std::string>(ref.begin() + i, ref.begin() + i + n)];
    std::map<std::vector<std::string>, std::size_t> hyp_counts;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i)
      ++hyp_counts[std::vector<std::string>(hyp.begin() + i, hyp.begin() + i + n)];
    std::size_t matches = 0, total = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(count, it->second);
    }
    double precision;
    if (n == 1) {
      if (matches == 0) return 0.0;
      precision = static_cast<double>(matches) / static_cast<double>(total);
    } else {
      precision = (static_cast<double>(matches) + 1.0) / (static_cast<double>(total) + 1.0);
    }
    log_sum += std::log(precision) / static_cast<double>(kMaxOrder);
  }
  const double c = static_cast<double>(hyp.size()), r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// QDMR graphs and exact graph edit distance

/// Directed graph of decomposition steps; an edge (i, k) means step i
/// refers to the result of earlier step k (0-based).
struct QdmrGraph {
  std::vector<std::string> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> edges;

  bool operator==(const QdmrGraph&) const = default;
};

/// Steps are ';'-separated, each optionally prefixed by "return"; "#k"
/// refers to step k (1-based) and must point to an earlier step. Empty steps
/// are dropped.
inline QdmrGraph qdmr_parse(std::string_view text) {
  static const std::regex kRef(R"(#(\d+))");
  QdmrGraph g;
  std::size_t start = 0;
  std::vector<std::string> steps;
  while (start <= text.size()) {
    std::size_t end = text.find(';', start);
    if (end == std::string_view::npos) end = text.size();
    std::string step = collapse_whitespace(text.substr(start, end - start));
    if (casefold(step.substr(0, 6)) == "return" && (step.size() == 6 || step[6] == ' '))
      step = trim(step.substr(6));
    if (!step.empty()) steps.push_back(std::move(step));
    start = end + 1;
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    std::set<std::size_t> refs;
    for (std::sregex_iterator it(steps[i].begin(), steps[i].end(), kRef), last; it != last; ++it) {
      const std::string token = (*it)[0].str();
      std::size_t k = 0;
      try {
        k = std::stoul((*it)[1].str());
      } catch (const std::exception&) {
        k = 0;
      }
      if (k == 0 || k > i)
        throw Error(ErrorCode::kMalformedReference,
                    "step " + std::to_string(i + 1) + " references " + token);
      refs.insert(k - 1);
    }
    for (std::size_t k : refs) g.edges.emplace_back(i, k);
    g.nodes.push_back(std::move(steps[i]));
  }
  return g;
}

namespace detail {

struct AdjacencyMatrix {
  std::size_t n = 0;
  std::vector<std::uint8_t> bits;

  explicit AdjacencyMatrix(const QdmrGraph& g) : n(g.nodes.size()), bits(n * n, 0) {
    for (auto [a, b] : g.edges) bits[a * n + b] = 1;
  }
  bool has(std::size_t a, std::size_t b) const { return bits[a * n + b] != 0; }
};

}  // namespace detail

inline constexpr std::size_t kDefaultGedNodeCap = 12;

/// Exact graph edit distance under unit costs (node insert, delete and
/// relabel; edge insert and delete) by A* over partial node mappings.
/// Nodes of the first graph are mapped in order to an unused node of the
/// second graph or deleted; leftover nodes of the second graph are inserted.
inline std::size_t graph_edit_distance(const QdmrGraph& g1, const QdmrGraph& g2,
                                       std::size_t node_cap = kDefaultGedNodeCap) {
  const std::size_t n1 = g1.nodes.size(), n2 = g2.nodes.size();
  if (n1 > node_cap || n2 > node_cap || n2 > 31)
    throw Error(ErrorCode::kGraphTooLarge, std::to_string(std::max(n1, n2)) + " nodes exceeds cap " +
                                               std::to_string(node_cap));
  const detail::AdjacencyMatrix a1(g1), a2(g2);
  constexpr int kDeleted = -1;

  // Label ids shared by both graphs for the multiset bound.
  std::map<std::string, int> label_ids;
  std::vector<int> lab1(n1), lab2(n2);
  for (std::size_t i = 0; i < n1; ++i) lab1[i] = label_ids.emplace(g1.nodes[i], label_ids.size()).first->second;
  for (std::size_t i = 0; i < n2; ++i) lab2[i] = label_ids.emplace(g2.nodes[i], label_ids.size()).first->second;

  // edges of g1 touching nodes >= d, for each d
  std::vector<std::size_t> e1_touching(n1 + 1, 0);
  for (std::size_t d = 0; d <= n1; ++d)
    for (auto [a, b] : g1.edges)
      if (a >= d || b >= d) ++e1_touching[d];

  struct State {
    std::size_t cost;
    std::size_t bound;
    std::vector<int> map;  // map[i] for processed g1 nodes
    std::uint32_t used;
    bool complete;
  };
  auto worse = [](const State& a, const State& b) {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.map.size() < b.map.size();  // prefer deeper states on ties
  };
  std::priority_queue<State, std::vector<State>, decltype(worse)> open(worse);

  auto heuristic = [&](std::size_t d, std::uint32_t used) -> std::size_t {
    std::vector<int> count(label_ids.size(), 0);
    std::size_t r1 = n1 - d, r2 = 0, common = 0;
    for (std::size_t i = d; i < n1; ++i) ++count[lab1[i]];
    for (std::size_t j = 0; j < n2; ++j) {
      if (used >> j & 1u) continue;
      ++r2;
      if (count[lab2[j]] > 0) --count[lab2[j]], ++common;
    }
    std::size_t e2 = 0;
    for (auto [a, b] : g2.edges)
      if (!(used >> a & 1u) || !(used >> b & 1u)) ++e2;
    const std::size_t e1 = e1_touching[d];
    return std::max(r1, r2) - common + (e1 > e2 ? e1 - e2 : e2 - e1);
  };

  auto finish = [&](const State& s) {
    std::size_t extra = 0;
    for (std::size_t j = 0; j < n2; ++j)
      if (!(s.used >> j & 1u)) ++extra;  // node insertions
    for (auto [a, b] : g2.edges)
      if (!(s.used >> a & 1u) || !(s.used >> b & 1u)) ++extra;  // edges at inserted nodes
    return s.cost + extra;
  };

  open.push({0, heuristic(0, 0), {}, 0, false});
  while (!open.empty()) {
    State s = open.top();
    open.pop();
    if (s.complete) return s.cost;
    const std::size_t u = s.map.size();
    if (u == n1) {
      const std::size_t total = finish(s);
      open.push({total, total, std::move(s.map), s.used, true});
      continue;
    }
    auto expand = [&](int target) {
      std::size_t cost = s.cost;
      if (target == kDeleted) {
        cost += 1;
      } else if (lab1[u] != lab2[static_cast<std::size_t>(target)]) {
        cost += 1;
      }
      for (std::size_t w = 0; w < u; ++w) {
        const int tw = s.map[w];
        const bool both = target != kDeleted && tw != kDeleted;
        const auto tu = static_cast<std::size_t>(target), tw_ = static_cast<std::size_t>(tw);
        const bool out2 = both && a2.has(tu, tw_);
        const bool in2 = both && a2.has(tw_, tu);
        cost += (a1.has(u, w) != out2) + (a1.has(w, u) != in2);
      }
      State next{cost, 0, s.map, s.used, false};
      next.map.push_back(target);
      if (target != kDeleted) next.used |= 1u << target;
      next.bound = cost + heuristic(u + 1, next.used);
      open.push(std::move(next));
    };
    for (std::size_t j = 0; j < n2; ++j)
      if (!(s.used >> j & 1u)) expand(static_cast<int>(j));
    expand(kDeleted);
  }
  return 0;  // unreachable: the empty mapping always completes
}

/// 1 - GED / (|V1| + |V2| + |E1| + |E2|), clamped to [0, 1]; raw GED in `raw`.
inline MeasureResult qdmr_ged_score(const QdmrGraph& pred, const QdmrGraph& gold,
                                    std::size_t node_cap = kDefaultGedNodeCap) {
  const double ged = static_cast<double>(graph_edit_distance(pred, gold, node_cap));
  const double denom = static_cast<double>(pred.nodes.size() + gold.nodes.size() +
                                           pred.edges.size() + gold.edges.size());
  const double score = denom == 0.0 ? 1.0 : std::clamp(1.0 - ged / denom, 0.0, 1.0);
  return {score, false, ged};
}

// ---------------------------------------------------------------------------
// GSM8k final-answer and reasoning-format correctness

/// Last number in the text (optional sign, digits with optional thousands
/// commas, optional decimal part). A sign glued to a preceding word or digit
/// is read as an operator, not a sign.
inline std::optional<double> last_number(std::string_view text) {
  static const std::regex kNumber(R"([-+]?\d[\d,]*(?:\.\d+)?)");
  std::string s(text);
  std::optional<double> out;
  for (std::sregex_iterator it(s.begin(), s.end(), kNumber), last; it != last; ++it) {
    std::string tok = (*it)[0].str();
    const auto pos = static_cast<std::size_t>(it->position(0));
    if ((tok[0] == '-' || tok[0] == '+') && pos > 0 &&
        std::isalnum(static_cast<unsigned char>(s[pos - 1])))
      tok.erase(0, 1);
    tok.erase(std::remove(tok.begin(), tok.end(), ','), tok.end());
    try {
      out = std::stod(tok);
    } catch (const std::exception&) {
    }
  }
  return out;
}

inline MeasureResult gsm8k_fac(std::string_view pred, double gold) {
  auto value = last_number(pred);
  if (!value) return {0.0, true, std::nullopt};
  const double tol = 1e-6 * std::max(std::abs(gold), std::abs(*value));
  return {std::abs(*value - gold) <= tol ? 1.0 : 0.0, false, *value};
}

/// 1 iff the text has a "<<expr=value>>" annotation and its last non-empty
/// line is "#### <number>".
inline MeasureResult gsm8k_rfc(std::string_view pred) {
  static const std::regex kAnnotation(R"(<<[^<>=]*=[^<>]*>>)");
  static const std::regex kFinal(R"(\s*####\s*[-+]?\d[\d,]*(?:\.\d+)?\s*)");
  std::string s = trim(pred);
  const bool annotated = std::regex_search(s, kAnnotation);
  const auto nl = s.find_last_of('\n');
  const std::string last_line = nl == std::string::npos ? s : s.substr(nl + 1);
  const bool final_line = std::regex_match(last_line, kFinal);
  return {annotated && final_line ? 1.0 : 0.0, false, std::nullopt};
}

/// Scores one prediction with the task's measure.
inline MeasureResult score_prediction(const TaskSpec& task, std::string_view pred, std::string_view gold) {
  switch (task.measure) {
    case Measure::kAccuracy:
      if (!task.label_space) throw Error(ErrorCode::kModeTaskMismatch, "accuracy needs a label space");
      return accuracy_score(pred, gold, *task.label_space, task.case_sensitive_labels);
    case Measure::kExactMatch:
      return exact_match_score(pred, gold);
    case Measure::kBleu:
      return {bleu_score(pred, gold), false, std::nullopt};
    case Measure::kQdmrGed: {
      const QdmrGraph g = qdmr_parse(gold);
      if (g.nodes.size() > kDefaultGedNodeCap)
        throw Error(ErrorCode::kGraphTooLarge, "gold decomposition has " +
                                                   std::to_string(g.nodes.size()) + " steps");
      QdmrGraph p;
      try {
        p = qdmr_parse(pred);
      } catch (const Error&) {
        return {0.0, true, std::nullopt};
      }
      // An over-long prediction cannot be searched exactly; it scores 0.
      if (p.nodes.size() > kDefaultGedNodeCap) return {0.0, true, std::nullopt};
      return qdmr_ged_score(p, g);
    }
    case Measure::kGsm8kFac: {
      auto g = last_number(gold);
      if (!g) throw Error(ErrorCode::kInvalidValue, "gold '" + std::string(gold) + "' has no number");
      return gsm8k_fac(pred, *g);
    }
    case Measure::kGsm8kRfc:
      return gsm8k_rfc(pred);
  }
  return {};
}

}  // namespace nicekit
