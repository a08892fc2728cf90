// Runs NICE end to end against two mock oracles on a synthetic pool.
#include <iostream>

#include "nicekit.hpp"

using namespace nicekit;

namespace {

CandidatePool synthetic_pool(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<Example> examples;
  for (std::size_t i = 0; i < n; ++i) {
    Vector v(dim);
    for (auto& x : v) x = rng.uniform01() - 0.5;
    const std::string label = rng.uniform_index(2) ? "positive" : "negative";
    examples.push_back({"ex" + std::to_string(i), "review " + std::to_string(i), label, v});
  }
  return CandidatePool(std::move(examples));
}

QuerySet synthetic_queries(std::size_t n, std::size_t dim, Rng& rng) {
  QuerySet qs;
  for (std::size_t i = 0; i < n; ++i) {
    Vector v(dim);
    for (auto& x : v) x = rng.uniform01() - 0.5;
    qs.queries.push_back({"q" + std::to_string(i), "query " + std::to_string(i),
                          rng.uniform_index(2) ? "positive" : "negative", v});
  }
  return qs;
}

}  // namespace

int main() {
  Rng rng(42);
  const auto pool = synthetic_pool(400, 16, rng);
  const auto queries = synthetic_queries(60, 16, rng);

  TaskSpec task;
  task.name = "toy-sentiment";
  task.label_space = LabelSpace{{"positive", "negative"}};

  InstructionFragments fragments;
  fragments.definition = "Your task is to classify the given movie review based on the sentiment expressed";
  const auto instruction = build_instruction(task, InstructionKind::kWithLabelSpace, fragments);

  auto cfg = EstimatorConfig::for_task(task);
  cfg.seed = 1;

  MockOracle spike = MockOracle::flat(10, 0.05, 3);
  spike.per_bin_success[0] = 0.9;

  for (const auto& [name, oracle] : {std::pair{"flat 0.7", MockOracle::flat(10, 0.7, 3)}, std::pair{"spike", spike}}) {
    MockBackend backend(oracle);
    const auto run = run_nice(task, instruction, pool, queries, cfg, RunContext{&backend, nullptr});
    std::cout << "== mock oracle: " << name << '\n' << render_table(run.report) << '\n';
  }
}
