#pragma once

#include <string>
#include <vector>

#include "deltasub/backbone.hpp"
#include "deltasub/tasks.hpp"

namespace deltasub {

enum class PetKind { Adapter, Prefix, Lora, FullFineTune };

const char* kind_name(PetKind k);
PetKind kind_from_name(const std::string& name);

struct PetHyper {
  int r_adapter = 6;       // adapter bottleneck r_A
  int r_lora = 6;          // LoRA rank r_L
  int prefix_tokens = 8;   // virtual tokens m
  int prefix_hidden = 8;   // prefix-MLP hidden dim d_P
  float lora_scale = 1.6f; // LoRA scaling s
};

struct LayoutEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
  size_t offset = 0;
  size_t extent() const { return static_cast<size_t>(rows) * cols; }
};

// Ordered flat layout of one tuning method's parameter vector.
class PetLayout {
 public:
  static PetLayout make(PetKind kind, const PetHyper& hyper, const ModelConfig& cfg);

  PetKind kind() const { return kind_; }
  const PetHyper& hyper() const { return hyper_; }
  const std::vector<LayoutEntry>& entries() const { return entries_; }
  size_t total() const { return total_; }
  const LayoutEntry& entry(const std::string& name) const;

 private:
  PetKind kind_ = PetKind::Adapter;
  PetHyper hyper_;
  std::vector<LayoutEntry> entries_;
  size_t total_ = 0;
};

size_t pet_param_count(PetKind kind, const PetHyper& hyper, const ModelConfig& cfg);

// LoRA parameter count at arbitrary scale: per attention module, Q and V each
// carry W_A (d x r) and W_B (r x d).
size_t lora_param_count_at(int d, int r_lora, int attention_modules);

// |theta_A| == |theta_P| == |theta_L| must hold exactly.
void check_parity(const PetHyper& hyper, const ModelConfig& cfg);

// One tuning method's solution: the flat parameter vector plus its layout.
// unflatten(flatten(p)) is the identity because hooks are views into `flat`.
struct PetSolution {
  PetKind kind = PetKind::Adapter;
  Tensor flat;  // 1 x |theta|
  PetHyper hyper;
  std::string task_id;
  PetLayout layout;

  uint64_t content_hash() const { return tensor_hash(flat); }
};

// Gaussian init (sigma) for adapter/prefix weights and LoRA W_A; LoRA W_B is
// zero so the hook starts as the identity.
PetSolution init_pet(PetKind kind, const PetHyper& hyper, const ModelConfig& cfg,
                     const std::string& task_id, uint64_t seed, float sigma = 0.02f);

// Builds forward hooks whose tensors are autodiff views into `flat` (a leaf
// during training, or a reconstructed vector during subspace stages).
PetHooks hooks_from_flat(const Tensor& flat, const PetLayout& layout, const ModelConfig& cfg);

// theta_0 + unflattened delta, for the fine-tuning extension. Tensors of the
// result are graph nodes, so gradients flow back into delta_flat.
BackboneWeights weights_with_delta(const BackboneWeights& base, const Tensor& delta_flat);

struct PetTrainConfig {
  int steps = 400;
  float lr = 1e-2f;
  int batch = 8;
  int eval_every = 25;
  uint64_t seed = 1;
  float init_sigma = 0.02f;
};

struct PetTrainResult {
  PetSolution solution;  // best-dev snapshot
  double e_dev = 0.0;    // best dev accuracy seen
  double e_test = 0.0;   // test accuracy of the selected snapshot
  std::vector<std::pair<int, double>> dev_curve;
};

// Original-space training of one method on one task; the backbone stays
// frozen (FullFineTune trains a throwaway clone and stores the delta).
PetTrainResult train_pet(const BackboneWeights& w, const Task& task, PetKind kind,
                         const PetHyper& hyper, const PetTrainConfig& tcfg);

}  // namespace deltasub
