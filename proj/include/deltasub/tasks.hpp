#pragma once

#include <string>
#include <vector>

#include "deltasub/backbone.hpp"

namespace deltasub {

enum class TaskFamily { ContainsToken, MajorityClass, PositionProbe, PatternMatch, Parity };

const char* family_name(TaskFamily f);

enum class Split { Train, Dev, Test };

// Synthetic desk-scale text-to-text task. Label tokens live in the model
// vocabulary; sequence tokens are drawn from [2, vocab) so labels stay
// distinct from content.
struct TaskSpec {
  TaskFamily family = TaskFamily::ContainsToken;
  std::string name;
  std::string category;
  uint64_t seed = 1;
  int seq_len = 12;
  int n_train = 192;
  int n_dev = 96;
  int n_test = 192;
  int target_token = 2;
  int second_token = 3;
  int probe_position = 2;
  std::vector<int> label_tokens{0, 1};
};

struct Example {
  std::vector<int> tokens;
  int label_index;  // index into spec.label_tokens
};

struct Task {
  TaskSpec spec;
  std::vector<Example> train, dev, test;

  const std::vector<Example>& split(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Dev: return dev;
      default: return test;
    }
  }
};

// Deterministic dataset from the spec seed. Splits are disjoint, classes
// balanced by construction, and every family admits a small-transformer
// decision rule.
Task generate_task(const TaskSpec& spec, const ModelConfig& cfg);

// Accuracy: fraction of examples whose highest label-token logit picks the
// right label. cap > 0 evaluates only the first cap examples of the split.
double evaluate(const BackboneWeights& w, const PetHooks& hooks, const Task& task, Split split,
                int cap = -1);

struct TaskRegistry {
  std::vector<TaskSpec> train_tasks;
  std::vector<TaskSpec> test_tasks;
};

enum class RegistryMode { Single, Multi };

// Single mode: one training task plus same-category test tasks. Multi mode:
// 12 training tasks across five families plus 4 held-out test tasks whose
// rules mirror a training task under a shifted data distribution.
TaskRegistry registry(RegistryMode mode, uint64_t seed, const ModelConfig& cfg, int seq_len = 12);

// Line-oriented text dump: space-separated token ids, a tab, the label token.
std::string serialize_examples(const Task& task, Split split);

}  // namespace deltasub
