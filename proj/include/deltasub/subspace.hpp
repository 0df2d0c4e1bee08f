#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "deltasub/tensor.hpp"

namespace deltasub {

// Coordinate of a solution in the unified subspace, plus the identity of the
// artifact set that defines that subspace.
struct IntrinsicVector {
  std::vector<float> values;
  uint64_t artifact_id = 0;

  int y() const { return static_cast<int>(values.size()); }
};

// Two-layer bias-free MLP theta -> y with tanh between the layers.
struct DownProjection {
  Tensor layer1;  // |theta| x y
  Tensor layer2;  // y x y
};

// Single bias-free linear map y -> |theta|.
struct UpProjection {
  Tensor weight;  // y x |theta|
  uint64_t artifact_id = 0;
};

DownProjection init_down_projection(size_t theta_len, int y, std::mt19937& rng);
UpProjection init_up_projection(size_t theta_len, int y, std::mt19937& rng, float sigma);

// layer2(tanh(layer1(theta))): 1 x |theta| -> 1 x y.
Tensor project_down(const DownProjection& dp, const Tensor& theta_row);

// 1 x y -> 1 x |theta|.
Tensor project_up(const UpProjection& up, const Tensor& intrinsic_row);

// alpha*I_A + beta*I_P + (1-alpha-beta)*I_L with alpha in [0,1], beta in
// [0,1-alpha].
Tensor interpolate(const Tensor& i_a, const Tensor& i_p, const Tensor& i_l, float alpha,
                   float beta);

// alpha uniform on [0,1]; beta uniform on [0,1-alpha].
std::pair<float, float> sample_ratios(std::mt19937& rng);

// In-place unnormalized fast Walsh-Hadamard transform (H_2n = [[H,H],[H,-H]]).
void fwht_inplace(std::span<float> v);
std::vector<float> fwht(std::vector<float> v);

// Structured projection mapping an intrinsic vector to a delta over every
// tunable backbone weight. Blocks of size y' = next power of two >= y; each
// block owns sign flips B, a permutation Pi and a trainable diagonal G. Only
// G carries gradients.
class FastfoodProjector {
 public:
  // gain rescales every output; ||G|| cancels out of the normalization, so
  // without it the delta magnitude per unit ||I|| is pinned at 1/sqrt(y') per
  // coordinate, far above useful weight-update scales on a small backbone.
  static FastfoodProjector create(int y, size_t output_dim, uint64_t seed, float gain = 1.0f);
  // Reassembles a persisted projector; buffers must match the dimensions.
  static FastfoodProjector restore(int y, size_t output_dim, uint64_t seed, float gain,
                                   std::vector<float> sign_flips, std::vector<int32_t> permutation,
                                   std::vector<float> g_values);

  int y() const { return y_; }
  int y_padded() const { return y_padded_; }
  size_t output_dim() const { return output_dim_; }
  size_t blocks() const { return blocks_; }
  uint64_t seed() const { return seed_; }
  float gain() const { return gain_; }
  const Tensor& g() const { return g_; }
  const std::vector<float>& sign_flips() const { return sign_flips_; }
  const std::vector<int32_t>& permutation() const { return permutation_; }
  uint64_t artifact_id = 0;

  // delta = concat_b fwht(G_b o Pi_b(fwht(B_b o I_pad))) / (y' |G_b| sqrt(blocks)),
  // truncated to output_dim. Differentiable in I and G.
  Tensor delta(const Tensor& intrinsic_row) const;

 private:
  int y_ = 0;
  int y_padded_ = 0;
  size_t output_dim_ = 0;
  size_t blocks_ = 0;
  uint64_t seed_ = 0;
  float gain_ = 1.0f;
  Tensor g_;                        // 1 x blocks*y', trainable
  std::vector<float> sign_flips_;   // blocks*y', entries +-1
  std::vector<int32_t> permutation_;  // blocks*y', block-local indices
};

}  // namespace deltasub
