#pragma once

#include <cstdint>
#include <vector>

#include "deltasub/tensor.hpp"

namespace deltasub {

struct ModelConfig {
  int n_layers = 2;
  int d = 32;       // model dimension
  int n_heads = 4;  // d must be divisible by n_heads
  int d_m = 64;     // FFN inner dimension, > d
  int vocab = 32;
  int max_len = 16;
  uint64_t seed = 42;

  int d_head() const { return d / n_heads; }
  void validate() const;
};

struct LayerWeights {
  std::vector<Tensor> w_q, w_k, w_v;  // per head: d x d_head
  Tensor w_o;                         // d x d
  Tensor w1, b1;                      // d x d_m, 1 x d_m
  Tensor w2, b2;                      // d_m x d, 1 x d
};

// Pre-trained weights (theta_0). Frozen for every pipeline stage; the output
// head is tied to the token embedding.
struct BackboneWeights {
  ModelConfig config;
  Tensor token_embedding;     // vocab x d
  Tensor position_embedding;  // max_len x d
  std::vector<LayerWeights> layers;

  static BackboneWeights init(const ModelConfig& cfg, bool requires_grad = false);

  // Fixed enumeration order used for hashing, checkpoints and the flat
  // full-model parameter layout.
  std::vector<Tensor> all_tensors() const;
  size_t parameter_count() const;
  uint64_t content_hash() const;
  void freeze();
  BackboneWeights clone(bool requires_grad) const;
};

struct AdapterParams {
  Tensor w_down;  // d x r_A
  Tensor w_up;    // r_A x d
};

struct LoraParams {
  Tensor a_q, b_q;  // d x r_L, r_L x d (column slice h gives the head delta)
  Tensor a_v, b_v;
};

// Generated prefix key/value blocks for one layer, one m x d_head per head.
struct LayerPrefix {
  std::vector<Tensor> p_k, p_v;
};

// Everything a PET injects into the forward pass. Empty containers mean the
// bare frozen backbone.
struct PetHooks {
  std::vector<AdapterParams> adapters;  // 2*n_layers: after MHA, after FFN
  std::vector<LoraParams> lora;         // n_layers
  std::vector<LayerPrefix> prefix;      // n_layers
  float lora_scale = 1.0f;

  bool empty() const { return adapters.empty() && lora.empty() && prefix.empty(); }
};

// Multi-head attention for one layer. With a prefix the per-head keys/values
// become [P_K;K] and [P_V;V]; with LoRA the Q and V projections gain
// s * X W_A W_B. Scores are scaled by 1/sqrt(d_head).
Tensor mha_forward(const BackboneWeights& w, const Tensor& x, int layer,
                   const LayerPrefix* prefix, const LoraParams* lora, float lora_scale);

Tensor ffn_forward(const BackboneWeights& w, const Tensor& x, int layer);

// Layer order: MHA (+prefix/LoRA) -> residual -> adapter -> FFN -> residual
// -> adapter; embedding in, tied output head out. Returns n x vocab logits.
Tensor model_forward(const BackboneWeights& w, const std::vector<int>& tokens,
                     const PetHooks& hooks);

// Logits of the final position only, 1 x vocab.
Tensor label_logits(const BackboneWeights& w, const std::vector<int>& tokens,
                    const PetHooks& hooks);

// Brief language-model training on synthetic bigram sequences so theta_0 has
// usable structure before freezing.
void pretrain_backbone(BackboneWeights& w, int steps, float lr, int batch, uint64_t seed);

}  // namespace deltasub
