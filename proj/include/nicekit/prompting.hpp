#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nicekit/corpus.hpp"
#include "nicekit/error.hpp"
#include "nicekit/random.hpp"
#include "nicekit/selectors.hpp"

namespace nicekit {

// ---------------------------------------------------------------------------
// Instruction taxonomy

enum class InstructionKind { kNone, kDefinition, kWithLabelSpace, kWithLabelMeanings, kWithRules, kDelusive };

inline std::string to_string(InstructionKind k) {
  switch (k) {
    case InstructionKind::kNone: return "NI";
    case InstructionKind::kDefinition: return "TD";
    case InstructionKind::kWithLabelSpace: return "TD_LS";
    case InstructionKind::kWithLabelMeanings: return "TD_LM";
    case InstructionKind::kWithRules: return "TD_R";
    case InstructionKind::kDelusive: return "DI";
  }
  return "unknown";
}

/// Accepts "TD_LS", "td-ls", "td_ls" and so on.
inline InstructionKind parse_instruction_kind(std::string_view s) {
  std::string norm;
  for (char c : s) norm.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (auto k : {InstructionKind::kNone, InstructionKind::kDefinition, InstructionKind::kWithLabelSpace,
                 InstructionKind::kWithLabelMeanings, InstructionKind::kWithRules,
                 InstructionKind::kDelusive})
    if (to_string(k) == norm) return k;
  throw Error(ErrorCode::kInvalidValue, "unknown instruction kind '" + std::string(s) + "'");
}

struct Instruction {
  InstructionKind kind = InstructionKind::kNone;
  std::string text;

  bool operator==(const Instruction&) const = default;
};

/// Editable text pieces an instruction is assembled from.
struct InstructionFragments {
  std::string definition;  // without the closing period
  std::string closing = "Below are some demonstrations of the task, look at the examples to understand the task.";
  std::map<std::string, std::string> label_meanings;
  std::string meaning_pattern = "If {meaning}, classify it as \"{label}\".";
  std::string rules_intro = "To do so, you need to abide by the following rules:";
  std::vector<std::string> rules;
};

namespace detail {

// Single-pass placeholder substitution; replacement text is never rescanned.
inline std::string substitute(std::string_view pattern,
                              const std::vector<std::pair<std::string_view, std::string_view>>& slots) {
  std::string out;
  out.reserve(pattern.size() + 64);
  std::size_t i = 0;
  while (i < pattern.size()) {
    bool hit = false;
    if (pattern[i] == '{') {
      for (const auto& [name, value] : slots) {
        if (pattern.substr(i + 1, name.size()) == name && i + 1 + name.size() < pattern.size() &&
            pattern[i + 1 + name.size()] == '}') {
          out.append(value);
          i += name.size() + 2;
          hit = true;
          break;
        }
      }
    }
    if (!hit) out.push_back(pattern[i++]);
  }
  return out;
}

inline std::string quoted_list(const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) out += (i + 1 == labels.size()) ? " or " : ", ";
    out += "\"" + labels[i] + "\"";
  }
  return out;
}

inline std::string meaning_lines(const InstructionFragments& f, const LabelSpace& ls, bool delusive) {
  const auto& labels = ls.labels;
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = f.label_meanings.find(labels[i]);
    if (it == f.label_meanings.end())
      throw Error(ErrorCode::kMissingFragment, "label meaning for '" + labels[i] + "'");
    // Delusive: the meaning of label i is assigned label i+1 (a cyclic
    // derangement; a swap for binary tasks).
    const std::string& shown = delusive ? labels[(i + 1) % labels.size()] : labels[i];
    if (i > 0) out += "\n";
    out += substitute(f.meaning_pattern, {{"meaning", it->second}, {"label", shown}});
  }
  return out;
}

}  // namespace detail

inline Instruction build_instruction(const TaskSpec& task, InstructionKind kind,
                                     const InstructionFragments& f) {
  using K = InstructionKind;
  if (kind == K::kNone) return {kind, ""};
  const bool cls = task.is_classification();
  if ((kind == K::kDelusive || kind == K::kWithLabelSpace || kind == K::kWithLabelMeanings) && !cls)
    throw Error(ErrorCode::kKindTaskMismatch, to_string(kind) + " needs a classification task");
  if (kind == K::kWithRules && cls)
    throw Error(ErrorCode::kKindTaskMismatch, "TD_R needs a generation task");
  if (f.definition.empty()) throw Error(ErrorCode::kMissingFragment, to_string(kind) + ": definition");

  switch (kind) {
    case K::kDefinition:
      return {kind, f.definition + ". " + f.closing};
    case K::kWithLabelSpace:
      return {kind, f.definition + ", into " + detail::quoted_list(task.label_space->labels) + ". " + f.closing};
    case K::kWithLabelMeanings:
    case K::kDelusive: {
      if (f.label_meanings.empty())
        throw Error(ErrorCode::kMissingFragment, to_string(kind) + ": label_meanings");
      return {kind, f.definition + ".\n" +
                        detail::meaning_lines(f, *task.label_space, kind == K::kDelusive) + "\n" +
                        f.closing};
    }
    case K::kWithRules: {
      if (f.rules.empty()) throw Error(ErrorCode::kMissingFragment, "TD_R: rules");
      std::string text = f.definition + ". " + f.rules_intro + "\n\n";
      for (std::size_t i = 0; i < f.rules.size(); ++i)
        text += std::to_string(i + 1) + ". " + f.rules[i] + "\n\n";
      return {kind, text + f.closing};
    }
    case K::kNone:
      break;
  }
  return {kind, ""};
}

inline InstructionFragments fragments_from_json(const Json& j) {
  InstructionFragments f;
  f.definition = j.value("definition", std::string{});
  if (j.contains("closing")) f.closing = j["closing"].get<std::string>();
  if (j.contains("meaning_pattern")) f.meaning_pattern = j["meaning_pattern"].get<std::string>();
  if (j.contains("rules_intro")) f.rules_intro = j["rules_intro"].get<std::string>();
  if (j.contains("label_meanings"))
    for (const auto& [label, meaning] : j["label_meanings"].items())
      f.label_meanings[label] = meaning.get<std::string>();
  if (j.contains("rules")) f.rules = j["rules"].get<std::vector<std::string>>();
  return f;
}

inline InstructionFragments load_instruction_fragments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kUnreadableFile, path.string());
  try {
    return fragments_from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidValue, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Prompt assembly

struct Demo {
  std::string id;
  std::string input;
  std::string output;

  bool operator==(const Demo&) const = default;
};

inline std::vector<Demo> materialize(const CandidatePool& pool, const DemoSet& set) {
  std::vector<Demo> out;
  out.reserve(set.size());
  for (const auto& id : set.demos) {
    const Example* ex = pool.find(id);
    if (!ex) throw Error(ErrorCode::kInvalidValue, "demo id '" + id + "' not in pool");
    out.push_back({ex->id, ex->input_text, ex->output_text});
  }
  return out;
}

struct PromptTemplate {
  std::string demo_format = "{input}: {output}";
  std::string separator = "\n\n";
  std::string query_cue = "{input}: ";

  std::string render_demo(const Demo& d) const {
    return detail::substitute(demo_format, {{"input", d.input}, {"output", d.output}});
  }
  std::string render_query(std::string_view input) const {
    return detail::substitute(query_cue, {{"input", input}, {"output", ""}});
  }
};

/// Instruction (absent for NI), then demos in order, then the query cue.
inline std::string assemble_prompt(const Instruction& instr, const std::vector<Demo>& demos,
                                   std::string_view query_input, const PromptTemplate& tmpl = {}) {
  std::string out;
  auto append = [&](const std::string& piece) {
    if (!out.empty()) out += tmpl.separator;
    out += piece;
  };
  if (instr.kind != InstructionKind::kNone && !instr.text.empty()) append(instr.text);
  for (const auto& d : demos) append(tmpl.render_demo(d));
  append(tmpl.render_query(query_input));
  return out;
}

// ---------------------------------------------------------------------------
// Label perturbations

enum class LabelMode { kGold, kRandomLabel, kShuffleOutputs };

inline std::string to_string(LabelMode m) {
  switch (m) {
    case LabelMode::kGold: return "gold";
    case LabelMode::kRandomLabel: return "random_label";
    case LabelMode::kShuffleOutputs: return "shuffle_outputs";
  }
  return "unknown";
}

inline LabelMode parse_label_mode(std::string_view s) {
  if (s == "gold") return LabelMode::kGold;
  if (s == "random" || s == "random_label") return LabelMode::kRandomLabel;
  if (s == "shuffle" || s == "shuffle_outputs") return LabelMode::kShuffleOutputs;
  throw Error(ErrorCode::kInvalidValue, "unknown label mode '" + std::string(s) + "'");
}

inline void check_label_mode(LabelMode mode, const TaskSpec& task) {
  if (mode == LabelMode::kRandomLabel && !task.label_space)
    throw Error(ErrorCode::kModeTaskMismatch, "random_label needs a label space");
}

inline std::vector<Demo> perturb_labels(std::vector<Demo> demos, const TaskSpec& task,
                                        LabelMode mode, std::uint64_t seed) {
  check_label_mode(mode, task);
  Rng rng(derive_seed(seed, {string_key("perturb_labels")}));
  switch (mode) {
    case LabelMode::kGold:
      break;
    case LabelMode::kRandomLabel: {
      const auto& labels = task.label_space->labels;
      for (auto& d : demos) d.output = labels[rng.uniform_index(labels.size())];
      break;
    }
    case LabelMode::kShuffleOutputs: {
      if (demos.size() < 2)
        throw Error(ErrorCode::kTooFewDemos, "shuffle_outputs needs at least 2 demos");
      std::vector<std::string> outputs;
      for (auto& d : demos) outputs.push_back(std::move(d.output));
      rng.shuffle(outputs);
      for (std::size_t i = 0; i < demos.size(); ++i) demos[i].output = std::move(outputs[i]);
      break;
    }
  }
  return demos;
}

/// Injective relabeling of a label space.
class LabelMap {
 public:
  LabelMap() = default;

  explicit LabelMap(std::vector<std::pair<std::string, std::string>> pairs) : pairs_(std::move(pairs)) {
    std::unordered_set<std::string> from, to;
    for (const auto& [a, b] : pairs_) {
      if (!from.insert(a).second)
        throw Error(ErrorCode::kInvalidValue, "label map lists '" + a + "' twice");
      if (!to.insert(b).second)
        throw Error(ErrorCode::kInvalidValue, "label map is not injective at '" + b + "'");
    }
  }

  static LabelMap identity(const LabelSpace& ls) {
    std::vector<std::pair<std::string, std::string>> p;
    for (const auto& l : ls.labels) p.emplace_back(l, l);
    return LabelMap(std::move(p));
  }

  static LabelMap shuffled(const LabelSpace& ls, std::uint64_t seed) {
    auto targets = ls.labels;
    Rng rng(derive_seed(seed, {string_key("label_map")}));
    rng.shuffle(targets);
    std::vector<std::pair<std::string, std::string>> p;
    for (std::size_t i = 0; i < targets.size(); ++i) p.emplace_back(ls.labels[i], targets[i]);
    return LabelMap(std::move(p));
  }

  std::optional<std::string> lookup(std::string_view label) const {
    for (const auto& [a, b] : pairs_)
      if (a == label) return b;
    return std::nullopt;
  }

  std::string apply(std::string_view label) const {
    auto m = lookup(label);
    if (!m) throw Error(ErrorCode::kUnmappedLabel, "'" + std::string(label) + "'");
    return *m;
  }

  /// Domain must equal the label space.
  void validate_against(const LabelSpace& ls) const {
    if (pairs_.size() != ls.size())
      throw Error(ErrorCode::kUnmappedLabel, "label map domain differs from the label space");
    for (const auto& l : ls.labels)
      if (!lookup(l)) throw Error(ErrorCode::kUnmappedLabel, "'" + l + "'");
  }

  LabelSpace mapped_space(const LabelSpace& ls) const {
    LabelSpace out;
    for (const auto& l : ls.labels) out.labels.push_back(apply(l));
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& pairs() const { return pairs_; }

 private:
  std::vector<std::pair<std::string, std::string>> pairs_;
};

/// The induced-schema rewrites used to give SST outputs an unfamiliar form.
inline LabelMap induced_schema_sst2() {
  return LabelMap({{"negative", "negative"}, {"positive", "POSITIVE"}});
}

inline LabelMap induced_schema_sst5() {
  return LabelMap({{"very negative", "very negative"},
                   {"negative", "negative"},
                   {"neutral", "NeUtRaL"},
                   {"positive", "POSITIVE"},
                   {"very positive", "VERY POSITIVE"}});
}

inline LabelMap load_label_map(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> pairs;
  detail::for_each_record(path, [&](std::size_t row, const Json& obj) {
    pairs.emplace_back(detail::require_string(obj, "from", row), detail::require_string(obj, "to", row));
  });
  return LabelMap(std::move(pairs));
}

/// Applies the map to demo outputs and gold outputs alike.
inline std::pair<std::vector<Demo>, std::vector<std::string>> apply_label_map(
    std::vector<Demo> demos, std::vector<std::string> gold, const LabelMap& map) {
  for (auto& d : demos) d.output = map.apply(d.output);
  for (auto& g : gold) g = map.apply(g);
  return {std::move(demos), std::move(gold)};
}

/// Induced-schema variant of a whole task: pool outputs, query golds and the
/// label space are rewritten through the map.
struct RelabeledTask {
  TaskSpec task;
  CandidatePool pool;
  QuerySet queries;
};

inline RelabeledTask relabel_task(const TaskSpec& task, const CandidatePool& pool,
                                  const QuerySet& queries, const LabelMap& map) {
  if (!task.label_space) throw Error(ErrorCode::kModeTaskMismatch, "label maps need a label space");
  map.validate_against(*task.label_space);
  RelabeledTask out{task, {}, queries};
  out.task.label_space = map.mapped_space(*task.label_space);
  // The rewrite may differ from the original only by case.
  out.task.case_sensitive_labels = true;
  std::vector<Example> examples = pool.examples();
  for (auto& ex : examples) ex.output_text = map.apply(ex.output_text);
  out.pool = CandidatePool(std::move(examples), pool.dimension());
  for (auto& q : out.queries.queries) q.gold_output = map.apply(q.gold_output);
  return out;
}

}  // namespace nicekit
