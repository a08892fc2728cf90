#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nicekit/error.hpp"
#include "nicekit/log.hpp"
#include "nicekit/random.hpp"

namespace nicekit {

using Json = nlohmann::json;
using Vector = std::vector<double>;

struct Example {
  std::string id;
  std::string input_text;
  std::string output_text;
  std::optional<Vector> embedding;

  bool operator==(const Example&) const = default;
};

struct LabelSpace {
  std::vector<std::string> labels;

  bool contains(std::string_view label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
  }
  std::size_t size() const { return labels.size(); }
  bool operator==(const LabelSpace&) const = default;

  void validate() const {
    if (labels.empty())
      throw Error(ErrorCode::kInvalidValue, "label space is empty");
    std::unordered_set<std::string> seen;
    for (const auto& l : labels)
      if (!seen.insert(l).second)
        throw Error(ErrorCode::kInvalidValue, "duplicate label '" + l + "'");
  }
};

enum class TaskKind { kClassification, kGeneration };

enum class Measure { kAccuracy, kExactMatch, kBleu, kQdmrGed, kGsm8kFac, kGsm8kRfc };

inline std::string to_string(TaskKind kind) {
  return kind == TaskKind::kClassification ? "classification" : "generation";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "classification") return TaskKind::kClassification;
  if (s == "generation") return TaskKind::kGeneration;
  throw Error(ErrorCode::kInvalidValue, "unknown task kind '" + std::string(s) + "'");
}

inline std::string to_string(Measure m) {
  switch (m) {
    case Measure::kAccuracy: return "accuracy";
    case Measure::kExactMatch: return "exact_match";
    case Measure::kBleu: return "bleu";
    case Measure::kQdmrGed: return "qdmr_ged";
    case Measure::kGsm8kFac: return "gsm8k_fac";
    case Measure::kGsm8kRfc: return "gsm8k_rfc";
  }
  return "unknown";
}

inline Measure parse_measure(std::string_view s) {
  for (Measure m : {Measure::kAccuracy, Measure::kExactMatch, Measure::kBleu,
                    Measure::kQdmrGed, Measure::kGsm8kFac, Measure::kGsm8kRfc})
    if (to_string(m) == s) return m;
  throw Error(ErrorCode::kInvalidValue, "unknown measure '" + std::string(s) + "'");
}

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kClassification;
  std::optional<LabelSpace> label_space;
  Measure measure = Measure::kAccuracy;
  int k_shots = 4;
  int num_bins = 10;
  bool case_sensitive_labels = false;  // set for induced-schema variants

  bool is_classification() const { return kind == TaskKind::kClassification; }

  void validate() const {
    if (is_classification() != label_space.has_value())
      throw Error(ErrorCode::kInvalidValue,
                  "task '" + name + "': label_space must be present iff kind is classification");
    if (label_space) label_space->validate();
    if (k_shots < 1)
      throw Error(ErrorCode::kInvalidValue, "task '" + name + "': k_shots must be >= 1");
    if (num_bins < 2)
      throw Error(ErrorCode::kInvalidValue, "task '" + name + "': num_bins must be >= 2");
  }

  bool operator==(const TaskSpec&) const = default;
};

struct Query {
  std::string id;
  std::string input_text;
  std::string gold_output;
  std::optional<Vector> embedding;

  bool operator==(const Query&) const = default;
};

struct QuerySet {
  std::vector<Query> queries;

  std::size_t size() const { return queries.size(); }
  bool empty() const { return queries.empty(); }
  bool operator==(const QuerySet&) const = default;
};

/// Candidate demonstrations for one task. Immutable after construction.
class CandidatePool {
 public:
  CandidatePool() = default;

  explicit CandidatePool(std::vector<Example> examples,
                         std::optional<std::size_t> expected_dim = std::nullopt)
      : examples_(std::move(examples)), dimension_(expected_dim) {
    index_.reserve(examples_.size());
    for (std::size_t i = 0; i < examples_.size(); ++i) {
      const Example& ex = examples_[i];
      if (!index_.emplace(ex.id, i).second)
        throw Error(ErrorCode::kDuplicateId, "duplicate example id '" + ex.id + "'");
      if (!ex.embedding) continue;
      if (!dimension_) dimension_ = ex.embedding->size();
      if (ex.embedding->size() != *dimension_)
        throw Error(ErrorCode::kDimensionMismatch,
                    "row " + std::to_string(i + 1) + ": got " +
                        std::to_string(ex.embedding->size()) + ", want " +
                        std::to_string(*dimension_));
    }
  }

  const std::vector<Example>& examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const Example& operator[](std::size_t i) const { return examples_[i]; }
  std::optional<std::size_t> dimension() const { return dimension_; }

  const Example* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &examples_[it->second];
  }

  std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool all_embedded() const {
    return std::all_of(examples_.begin(), examples_.end(),
                       [](const Example& e) { return e.embedding.has_value(); });
  }

  bool operator==(const CandidatePool& other) const { return examples_ == other.examples_; }

 private:
  std::vector<Example> examples_;
  std::unordered_map<std::string, std::size_t> index_;
  std::optional<std::size_t> dimension_;
};

namespace detail {

// Parses a newline-delimited JSON file, calling fn(row_number, object) for
// each non-blank line.
template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kUnreadableFile, path.string());
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw Error(ErrorCode::kInvalidValue,
                  path.string() + " row " + std::to_string(row) + ": " + e.what());
    }
    if (!obj.is_object())
      throw Error(ErrorCode::kInvalidValue,
                  path.string() + " row " + std::to_string(row) + ": not an object");
    fn(row, obj);
  }
}

inline std::string require_string(const Json& obj, const char* field, std::size_t row) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string())
    throw Error(ErrorCode::kMissingField,
                "row " + std::to_string(row) + ": field '" + field + "'");
  return it->get<std::string>();
}

inline std::optional<Vector> optional_vector(const Json& obj, const char* field,
                                             std::size_t row) {
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_array())
    throw Error(ErrorCode::kInvalidValue,
                "row " + std::to_string(row) + ": '" + field + "' must be an array");
  Vector v;
  v.reserve(it->size());
  for (const auto& x : *it) {
    if (!x.is_number())
      throw Error(ErrorCode::kInvalidValue,
                  "row " + std::to_string(row) + ": '" + field + "' must hold numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kUnreadableFile, "cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

}  // namespace detail

inline CandidatePool load_pool(const std::filesystem::path& path,
                               std::optional<std::size_t> expected_dim = std::nullopt) {
  std::vector<Example> examples;
  std::unordered_set<std::string> ids;
  std::optional<std::size_t> dim = expected_dim;
  detail::for_each_record(path, [&](std::size_t row, const Json& obj) {
    Example ex;
    ex.id = detail::require_string(obj, "id", row);
    ex.input_text = detail::require_string(obj, "input", row);
    ex.output_text = detail::require_string(obj, "output", row);
    ex.embedding = detail::optional_vector(obj, "embedding", row);
    if (!ids.insert(ex.id).second)
      throw Error(ErrorCode::kDuplicateId, "row " + std::to_string(row) + ": '" + ex.id + "'");
    if (ex.embedding) {
      if (!dim) dim = ex.embedding->size();
      if (ex.embedding->size() != *dim)
        throw Error(ErrorCode::kDimensionMismatch,
                    "row " + std::to_string(row) + ": got " +
                        std::to_string(ex.embedding->size()) + ", want " + std::to_string(*dim));
    }
    examples.push_back(std::move(ex));
  });
  return CandidatePool(std::move(examples), dim);
}

inline Json to_json(const Example& ex) {
  Json j = {{"id", ex.id}, {"input", ex.input_text}, {"output", ex.output_text}};
  if (ex.embedding) j["embedding"] = *ex.embedding;
  return j;
}

inline Json to_json(const Query& q) {
  Json j = {{"id", q.id}, {"input", q.input_text}, {"gold", q.gold_output}};
  if (q.embedding) j["embedding"] = *q.embedding;
  return j;
}

inline void save_pool(const CandidatePool& pool, const std::filesystem::path& path) {
  std::vector<Json> records;
  for (const auto& ex : pool.examples()) records.push_back(to_json(ex));
  detail::write_lines(path, records);
}

inline QuerySet load_queries(const std::filesystem::path& path) {
  QuerySet qs;
  std::unordered_set<std::string> ids;
  std::optional<std::size_t> dim;
  detail::for_each_record(path, [&](std::size_t row, const Json& obj) {
    Query q;
    q.id = detail::require_string(obj, "id", row);
    q.input_text = detail::require_string(obj, "input", row);
    q.gold_output = detail::require_string(obj, "gold", row);
    q.embedding = detail::optional_vector(obj, "embedding", row);
    if (!ids.insert(q.id).second)
      throw Error(ErrorCode::kDuplicateId, "row " + std::to_string(row) + ": '" + q.id + "'");
    if (q.embedding) {
      if (!dim) dim = q.embedding->size();
      if (q.embedding->size() != *dim)
        throw Error(ErrorCode::kDimensionMismatch,
                    "row " + std::to_string(row) + ": got " +
                        std::to_string(q.embedding->size()) + ", want " + std::to_string(*dim));
    }
    qs.queries.push_back(std::move(q));
  });
  if (qs.empty()) log::warn("query file " + path.string() + " holds no queries");
  return qs;
}

inline void save_queries(const QuerySet& qs, const std::filesystem::path& path) {
  std::vector<Json> records;
  for (const auto& q : qs.queries) records.push_back(to_json(q));
  detail::write_lines(path, records);
}

inline Json to_json(const TaskSpec& t) {
  Json j = {{"name", t.name},
            {"kind", to_string(t.kind)},
            {"measure", to_string(t.measure)},
            {"k_shots", t.k_shots},
            {"num_bins", t.num_bins}};
  if (t.label_space) j["label_space"] = t.label_space->labels;
  if (t.case_sensitive_labels) j["case_sensitive_labels"] = true;
  return j;
}

inline TaskSpec task_spec_from_json(const Json& j) {
  auto str = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string())
      throw Error(ErrorCode::kMissingField, std::string("task spec field '") + key + "'");
    return j[key].get<std::string>();
  };
  TaskSpec t;
  t.name = str("name");
  t.kind = parse_task_kind(str("kind"));
  t.measure = parse_measure(str("measure"));
  if (j.contains("label_space") && !j["label_space"].is_null()) {
    LabelSpace ls;
    for (const auto& l : j["label_space"]) ls.labels.push_back(l.get<std::string>());
    t.label_space = std::move(ls);
  }
  if (!j.contains("k_shots")) throw Error(ErrorCode::kMissingField, "task spec field 'k_shots'");
  t.k_shots = j["k_shots"].get<int>();
  t.num_bins = j.value("num_bins", 10);
  t.case_sensitive_labels = j.value("case_sensitive_labels", false);
  t.validate();
  return t;
}

inline TaskSpec load_task_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kUnreadableFile, path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kInvalidValue, path.string() + ": " + e.what());
  }
  return task_spec_from_json(j);
}

/// Rejects classification pools holding outputs outside the label space.
inline void validate_pool_labels(const CandidatePool& pool, const TaskSpec& task) {
  if (!task.is_classification()) return;
  for (const auto& ex : pool.examples())
    if (!task.label_space->contains(ex.output_text))
      throw Error(ErrorCode::kLabelOutsideSpace,
                  "example '" + ex.id + "' has output '" + ex.output_text + "'");
}

/// Uniform sample of min(n, |qs|) queries without replacement, in draw order.
inline QuerySet sample_queries(const QuerySet& qs, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidValue, "sample size must be >= 1");
  Rng rng(derive_seed(seed, {string_key("sample_queries")}));
  QuerySet out;
  for (std::size_t i : rng.sample_indices(qs.size(), n)) out.queries.push_back(qs.queries[i]);
  return out;
}

}  // namespace nicekit
