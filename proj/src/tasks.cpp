#include "deltasub/tasks.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_set>

#include "deltasub/rng.hpp"

namespace deltasub {

const char* family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::ContainsToken: return "contains-token";
    case TaskFamily::MajorityClass: return "majority-class";
    case TaskFamily::PositionProbe: return "position-probe";
    case TaskFamily::PatternMatch: return "pattern-match";
    default: return "parity";
  }
}

namespace {

constexpr int kContentStart = 2;  // tokens below this are reserved for labels

struct Alphabet {
  int lo, hi;  // [lo, hi)
  int size() const { return hi - lo; }
};

int draw(std::mt19937& rng, const Alphabet& a, const std::vector<int>& exclude) {
  for (int attempt = 0; attempt < 256; ++attempt) {
    int t = a.lo + static_cast<int>(rng() % a.size());
    if (std::find(exclude.begin(), exclude.end(), t) == exclude.end()) return t;
  }
  throw InfeasibleSpecError("alphabet too small for requested exclusions");
}

void validate_spec(const TaskSpec& spec, const ModelConfig& cfg) {
  if (spec.seq_len < 4 || spec.seq_len > cfg.max_len)
    throw InfeasibleSpecError("seq_len must be in [4, max_len]");
  if (spec.label_tokens.size() < 2) throw InfeasibleSpecError("need at least two label tokens");
  for (int t : spec.label_tokens)
    if (t < 0 || t >= cfg.vocab) throw InfeasibleSpecError("label token outside vocabulary");
  const Alphabet content{kContentStart, cfg.vocab};
  if (content.size() < 4) throw InfeasibleSpecError("content alphabet too small");
  auto in_content = [&](int t) { return t >= content.lo && t < content.hi; };
  switch (spec.family) {
    case TaskFamily::ContainsToken:
    case TaskFamily::Parity:
      if (!in_content(spec.target_token))
        throw InfeasibleSpecError(
            "target token can never occur in content: every example would share one label");
      break;
    case TaskFamily::MajorityClass:
    case TaskFamily::PatternMatch:
      if (!in_content(spec.target_token) || !in_content(spec.second_token) ||
          spec.target_token == spec.second_token)
        throw InfeasibleSpecError("family needs two distinct content tokens");
      break;
    case TaskFamily::PositionProbe:
      if (!in_content(spec.target_token) || !in_content(spec.second_token) ||
          spec.target_token == spec.second_token)
        throw InfeasibleSpecError("probe needs two distinct content tokens");
      if (spec.probe_position < 0 || spec.probe_position >= spec.seq_len)
        throw InfeasibleSpecError("probe position outside the sequence");
      break;
  }
}

}  // namespace

Task generate_task(const TaskSpec& spec, const ModelConfig& cfg) {
  validate_spec(spec, cfg);
  const Alphabet content{kContentStart, cfg.vocab};
  auto rng = make_rng(spec.seed, "task-" + spec.name);

  auto build = [&](int label) {
    std::vector<int> seq(spec.seq_len, 0);
    switch (spec.family) {
      case TaskFamily::ContainsToken: {
        for (auto& t : seq) t = draw(rng, content, {spec.target_token});
        if (label == 1) {
          int count = 1 + static_cast<int>(rng() % 3);
          for (int c = 0; c < count; ++c) seq[rng() % seq.size()] = spec.target_token;
        }
        break;
      }
      case TaskFamily::MajorityClass: {
        for (auto& t : seq) t = draw(rng, content, {spec.target_token, spec.second_token});
        // five marked slots, majority decides; 3-2 or 4-1 splits
        std::vector<size_t> slots;
        while (slots.size() < 5) {
          size_t p = rng() % seq.size();
          if (std::find(slots.begin(), slots.end(), p) == slots.end()) slots.push_back(p);
        }
        int majority_count = 3 + static_cast<int>(rng() % 2);
        int major = label == 1 ? spec.target_token : spec.second_token;
        int minor = label == 1 ? spec.second_token : spec.target_token;
        for (size_t i = 0; i < slots.size(); ++i)
          seq[slots[i]] = static_cast<int>(i) < majority_count ? major : minor;
        break;
      }
      case TaskFamily::PositionProbe: {
        for (auto& t : seq) t = draw(rng, content, {spec.target_token, spec.second_token});
        seq[spec.probe_position] = label == 1 ? spec.target_token : spec.second_token;
        break;
      }
      case TaskFamily::PatternMatch: {
        for (auto& t : seq) t = draw(rng, content, {spec.target_token, spec.second_token});
        if (label == 1) {
          size_t p = rng() % (seq.size() - 1);
          seq[p] = spec.target_token;
          seq[p + 1] = spec.second_token;
        } else {
          // both tokens present but never adjacent in that order
          for (int attempt = 0; attempt < 256; ++attempt) {
            size_t p1 = rng() % seq.size();
            size_t p2 = rng() % seq.size();
            if (p1 == p2 || p2 == p1 + 1) continue;
            seq[p1] = spec.target_token;
            seq[p2] = spec.second_token;
            break;
          }
        }
        break;
      }
      case TaskFamily::Parity: {
        for (auto& t : seq) t = draw(rng, content, {spec.target_token});
        int count = label == 1 ? (rng() % 2 ? 1 : 3) : (rng() % 2 ? 0 : 2);
        std::vector<size_t> slots;
        while (static_cast<int>(slots.size()) < count) {
          size_t p = rng() % seq.size();
          if (std::find(slots.begin(), slots.end(), p) == slots.end()) slots.push_back(p);
        }
        for (size_t p : slots) seq[p] = spec.target_token;
        break;
      }
    }
    return seq;
  };

  Task task;
  task.spec = spec;
  std::unordered_set<uint64_t> seen;
  auto emit = [&](std::vector<Example>& out, int count) {
    for (int i = 0; i < count; ++i) {
      const int label = i % 2;  // exact class balance
      std::vector<int> seq;
      bool fresh = false;
      for (int attempt = 0; attempt < 512; ++attempt) {
        seq = build(label);
        uint64_t h = fnv1a64(seq.data(), seq.size() * sizeof(int));
        if (seen.insert(h).second) {
          fresh = true;
          break;
        }
      }
      if (!fresh) throw InfeasibleSpecError("could not generate enough distinct examples");
      out.push_back(Example{std::move(seq), label});
    }
  };
  emit(task.train, spec.n_train);
  emit(task.dev, spec.n_dev);
  emit(task.test, spec.n_test);
  return task;
}

double evaluate(const BackboneWeights& w, const PetHooks& hooks, const Task& task, Split split,
                int cap) {
  const auto& examples = task.split(split);
  if (examples.empty()) throw EmptySplitError("empty split for task " + task.spec.name);
  size_t n = examples.size();
  if (cap > 0) n = std::min(n, static_cast<size_t>(cap));
  const auto& labels = task.spec.label_tokens;

  NoGradGuard guard;
  size_t correct = 0;
  for (size_t i = 0; i < n; ++i) {
    Tensor logits = label_logits(w, examples[i].tokens, hooks);
    size_t best = 0;
    for (size_t k = 1; k < labels.size(); ++k)
      if (logits.at(0, labels[k]) > logits.at(0, labels[best])) best = k;
    if (static_cast<int>(best) == examples[i].label_index) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

TaskRegistry registry(RegistryMode mode, uint64_t seed, const ModelConfig& cfg, int seq_len) {
  auto rng = make_rng(seed, "registry");
  const int content_lo = kContentStart;
  const int content_n = cfg.vocab - content_lo;
  auto pick_token = [&](std::set<int>& used) {
    for (int attempt = 0; attempt < 1024; ++attempt) {
      int t = content_lo + static_cast<int>(rng() % content_n);
      if (used.insert(t).second) return t;
    }
    throw InfeasibleSpecError("vocabulary for registry too small");
  };

  auto spec_of = [&](TaskFamily fam, const std::string& name, int a, int b, int pos, int len) {
    TaskSpec s;
    s.family = fam;
    s.name = name;
    s.category = family_name(fam);
    s.seed = derive_seed(seed, "spec-" + name);
    s.seq_len = len;
    s.target_token = a;
    s.second_token = b;
    s.probe_position = pos;
    return s;
  };
  // Held-out tasks keep a training task's labeling rule but shift the data
  // distribution: fresh generation seed and a shorter sequence length. This
  // mirrors same-category evaluation at full scale, where train and test
  // datasets share semantics but not examples.
  const int held_len = std::max(4, seq_len - 2);

  TaskRegistry reg;
  if (mode == RegistryMode::Single) {
    std::set<int> used;
    int a = pick_token(used);
    reg.train_tasks.push_back(
        spec_of(TaskFamily::ContainsToken, "contains_train", a, 0, 0, seq_len));
    reg.test_tasks.push_back(
        spec_of(TaskFamily::ContainsToken, "contains_test_a", a, 0, 0, held_len));
    reg.test_tasks.push_back(
        spec_of(TaskFamily::ContainsToken, "contains_test_b", a, 0, 0, seq_len));
    return reg;
  }

  std::set<int> used;
  auto tok = [&] { return pick_token(used); };
  int i = 0;
  auto name = [&](const char* base) { return std::string(base) + "_" + std::to_string(i++); };
  // 12 training tasks across the five families
  const int c0 = tok(), c1 = tok(), c2 = tok();
  const int m0a = tok(), m0b = tok(), m1a = tok(), m1b = tok();
  const int p0a = tok(), p0b = tok(), p1a = tok(), p1b = tok(), p2a = tok(), p2b = tok();
  const int q0a = tok(), q0b = tok(), q1a = tok(), q1b = tok();
  const int y0 = tok(), y1 = tok();
  reg.train_tasks.push_back(spec_of(TaskFamily::ContainsToken, name("contains"), c0, 0, 0, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::ContainsToken, name("contains"), c1, 0, 0, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::ContainsToken, name("contains"), c2, 0, 0, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::MajorityClass, name("majority"), m0a, m0b, 0, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::MajorityClass, name("majority"), m1a, m1b, 0, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::PositionProbe, name("probe"), p0a, p0b, 1, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::PositionProbe, name("probe"), p1a, p1b, 4, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::PositionProbe, name("probe"), p2a, p2b, 7, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::PatternMatch, name("pattern"), q0a, q0b, 0, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::PatternMatch, name("pattern"), q1a, q1b, 0, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::Parity, name("parity"), y0, 0, 0, seq_len));
  reg.train_tasks.push_back(spec_of(TaskFamily::Parity, name("parity"), y1, 0, 0, seq_len));
  // 4 held-out test tasks mirroring one rule per family under a shifted
  // distribution (new seed via the distinct name, shorter sequences)
  reg.test_tasks.push_back(
      spec_of(TaskFamily::ContainsToken, name("contains_held"), c1, 0, 0, held_len));
  reg.test_tasks.push_back(
      spec_of(TaskFamily::PositionProbe, name("probe_held"), p1a, p1b, 4, held_len));
  reg.test_tasks.push_back(
      spec_of(TaskFamily::MajorityClass, name("majority_held"), m0a, m0b, 0, held_len));
  reg.test_tasks.push_back(
      spec_of(TaskFamily::PatternMatch, name("pattern_held"), q0a, q0b, 0, held_len));
  return reg;
}

std::string serialize_examples(const Task& task, Split split) {
  std::ostringstream out;
  for (const auto& ex : task.split(split)) {
    for (size_t i = 0; i < ex.tokens.size(); ++i) {
      if (i) out << ' ';
      out << ex.tokens[i];
    }
    out << '\t' << task.spec.label_tokens[ex.label_index] << '\n';
  }
  return out.str();
}

}  // namespace deltasub
