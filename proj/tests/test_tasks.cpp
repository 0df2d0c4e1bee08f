#include <doctest.h>

#include <algorithm>
#include <random>
#include <unordered_set>

#include "deltasub/pet.hpp"
#include "deltasub/tasks.hpp"

using namespace deltasub;

namespace {

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.seed = 11;
  return cfg;
}

// Independent reimplementation of each family's labeling rule.
int rule_oracle(const TaskSpec& spec, const std::vector<int>& tokens) {
  switch (spec.family) {
    case TaskFamily::ContainsToken:
      return std::count(tokens.begin(), tokens.end(), spec.target_token) > 0 ? 1 : 0;
    case TaskFamily::MajorityClass: {
      auto a = std::count(tokens.begin(), tokens.end(), spec.target_token);
      auto b = std::count(tokens.begin(), tokens.end(), spec.second_token);
      return a > b ? 1 : 0;
    }
    case TaskFamily::PositionProbe:
      return tokens[spec.probe_position] == spec.target_token ? 1 : 0;
    case TaskFamily::PatternMatch: {
      for (size_t i = 0; i + 1 < tokens.size(); ++i)
        if (tokens[i] == spec.target_token && tokens[i + 1] == spec.second_token) return 1;
      return 0;
    }
    default:
      return std::count(tokens.begin(), tokens.end(), spec.target_token) % 2;
  }
}

}  // namespace

TEST_CASE("task generation is deterministic") {
  auto cfg = desk_config();
  TaskSpec spec;
  spec.family = TaskFamily::PatternMatch;
  spec.name = "pat";
  spec.seed = 3;
  spec.target_token = 5;
  spec.second_token = 9;
  auto a = generate_task(spec, cfg);
  auto b = generate_task(spec, cfg);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].tokens == b.train[i].tokens);
    CHECK(a.train[i].label_index == b.train[i].label_index);
  }
}

TEST_CASE("degenerate contains-token spec is rejected") {
  auto cfg = desk_config();
  TaskSpec spec;
  spec.family = TaskFamily::ContainsToken;
  spec.name = "degenerate";
  spec.target_token = 0;  // reserved label token: can never appear in content
  CHECK_THROWS_AS(generate_task(spec, cfg), InfeasibleSpecError);
}

TEST_CASE("every generated label matches the family rule oracle") {
  auto cfg = desk_config();
  auto reg = registry(RegistryMode::Multi, 5, cfg);
  for (const auto& spec : reg.train_tasks) {
    auto task = generate_task(spec, cfg);
    for (auto split : {Split::Train, Split::Dev, Split::Test})
      for (const auto& ex : task.split(split))
        CHECK(rule_oracle(spec, ex.tokens) == ex.label_index);
  }
}

TEST_CASE("parity task label distribution is balanced") {
  auto cfg = desk_config();
  TaskSpec spec;
  spec.family = TaskFamily::Parity;
  spec.name = "parity_balance";
  spec.target_token = 7;
  spec.n_train = 1000;
  auto task = generate_task(spec, cfg);
  int ones = 0;
  for (const auto& ex : task.train) ones += ex.label_index;
  CHECK(ones >= 450);
  CHECK(ones <= 550);
}

TEST_CASE("splits are disjoint") {
  auto cfg = desk_config();
  TaskSpec spec;
  spec.family = TaskFamily::ContainsToken;
  spec.name = "disjoint";
  spec.target_token = 6;
  auto task = generate_task(spec, cfg);
  std::unordered_set<uint64_t> seen;
  auto digest = [](const std::vector<int>& v) {
    return fnv1a64(v.data(), v.size() * sizeof(int));
  };
  for (auto split : {Split::Train, Split::Dev, Split::Test})
    for (const auto& ex : task.split(split)) CHECK(seen.insert(digest(ex.tokens)).second);
}

TEST_CASE("untrained hooks score near chance; order permutation changes nothing") {
  auto cfg = desk_config();
  auto w = BackboneWeights::init(cfg);
  TaskSpec spec;
  spec.family = TaskFamily::Parity;
  spec.name = "chance";
  spec.target_token = 9;
  auto task = generate_task(spec, cfg);

  PetHyper hyper;
  auto sol = init_pet(PetKind::Adapter, hyper, cfg, task.spec.name, 77);
  auto hooks = hooks_from_flat(sol.flat, sol.layout, cfg);
  double acc = evaluate(w, hooks, task, Split::Test);
  CHECK(acc > 0.4);
  CHECK(acc < 0.6);

  Task shuffled = task;
  std::mt19937 rng(4);
  std::shuffle(shuffled.test.begin(), shuffled.test.end(), rng);
  CHECK(evaluate(w, hooks, shuffled, Split::Test) == doctest::Approx(acc));
}

TEST_CASE("evaluate rejects empty splits and caps sample counts") {
  auto cfg = desk_config();
  auto w = BackboneWeights::init(cfg);
  TaskSpec spec;
  spec.family = TaskFamily::ContainsToken;
  spec.name = "cap";
  spec.target_token = 4;
  auto task = generate_task(spec, cfg);
  Task empty = task;
  empty.dev.clear();
  CHECK_THROWS_AS(evaluate(w, PetHooks{}, empty, Split::Dev), EmptySplitError);
  CHECK(evaluate(w, PetHooks{}, task, Split::Test, 16) ==
        doctest::Approx(evaluate(w, PetHooks{}, task, Split::Test, 16)));
}

TEST_CASE("registry modes cover the contract") {
  auto cfg = desk_config();
  auto single = registry(RegistryMode::Single, 3, cfg);
  CHECK(single.train_tasks.size() == 1);
  CHECK(single.test_tasks.size() >= 1);
  for (const auto& t : single.test_tasks) {
    CHECK(t.category == single.train_tasks[0].category);
    CHECK(t.name != single.train_tasks[0].name);
  }

  auto multi = registry(RegistryMode::Multi, 3, cfg);
  CHECK(multi.train_tasks.size() == 12);
  CHECK(multi.test_tasks.size() == 4);
  std::unordered_set<std::string> families;
  std::unordered_set<std::string> names;
  for (const auto& t : multi.train_tasks) {
    families.insert(t.category);
    CHECK(names.insert(t.name).second);
  }
  CHECK(families.size() >= 4);
  for (const auto& t : multi.test_tasks) CHECK(names.insert(t.name).second);
}

TEST_CASE("serialized examples are line oriented") {
  auto cfg = desk_config();
  TaskSpec spec;
  spec.family = TaskFamily::PositionProbe;
  spec.name = "serial";
  spec.target_token = 5;
  spec.second_token = 8;
  spec.probe_position = 1;
  spec.n_dev = 4;
  auto task = generate_task(spec, cfg);
  auto text = serialize_examples(task, Split::Dev);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(std::count(text.begin(), text.end(), '\t') == 4);
}
