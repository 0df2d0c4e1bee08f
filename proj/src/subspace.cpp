#include "deltasub/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deltasub/rng.hpp"

namespace deltasub {

DownProjection init_down_projection(size_t theta_len, int y, std::mt19937& rng) {
  DownProjection dp;
  const float sigma1 = 1.0f / std::sqrt(static_cast<float>(theta_len));
  const float sigma2 = 1.0f / std::sqrt(static_cast<float>(y));
  dp.layer1 = Tensor::randn(static_cast<int>(theta_len), y, rng, sigma1, true);
  dp.layer2 = Tensor::randn(y, y, rng, sigma2, true);
  return dp;
}

UpProjection init_up_projection(size_t theta_len, int y, std::mt19937& rng, float sigma) {
  UpProjection up;
  up.weight = Tensor::randn(y, static_cast<int>(theta_len), rng, sigma, true);
  return up;
}

Tensor project_down(const DownProjection& dp, const Tensor& theta_row) {
  if (theta_row.rows() != 1 || theta_row.cols() != dp.layer1.rows())
    throw ShapeMismatchError("project_down: input must be 1 x |theta|");
  return matmul(deltasub::tanh(matmul(theta_row, dp.layer1)), dp.layer2);
}

Tensor project_up(const UpProjection& up, const Tensor& intrinsic_row) {
  if (intrinsic_row.rows() != 1 || intrinsic_row.cols() != up.weight.rows())
    throw ShapeMismatchError("project_up: input must be 1 x y");
  return matmul(intrinsic_row, up.weight);
}

Tensor interpolate(const Tensor& i_a, const Tensor& i_p, const Tensor& i_l, float alpha,
                   float beta) {
  if (alpha < 0.0f || alpha > 1.0f || beta < 0.0f || beta > 1.0f - alpha)
    throw RatioOutOfRangeError("need alpha in [0,1] and beta in [0,1-alpha]");
  return add(add(scale(i_a, alpha), scale(i_p, beta)), scale(i_l, 1.0f - alpha - beta));
}

std::pair<float, float> sample_ratios(std::mt19937& rng) {
  const float alpha = uniform_float(rng, 0.0f, 1.0f);
  const float beta = uniform_float(rng, 0.0f, 1.0f) * (1.0f - alpha);
  return {alpha, beta};
}

void fwht_inplace(std::span<float> v) {
  const size_t n = v.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw NotPowerOfTwoError("fwht needs a power-of-two length, got " + std::to_string(n));
  for (size_t half = 1; half < n; half *= 2) {
    for (size_t start = 0; start < n; start += 2 * half) {
      for (size_t i = start; i < start + half; ++i) {
        const float a = v[i];
        const float b = v[i + half];
        v[i] = a + b;
        v[i + half] = a - b;
      }
    }
  }
}

std::vector<float> fwht(std::vector<float> v) {
  fwht_inplace(v);
  return v;
}

namespace {

void fwht_double(std::vector<double>& v) {
  const size_t n = v.size();
  for (size_t half = 1; half < n; half *= 2)
    for (size_t start = 0; start < n; start += 2 * half)
      for (size_t i = start; i < start + half; ++i) {
        const double a = v[i];
        const double b = v[i + half];
        v[i] = a + b;
        v[i + half] = a - b;
      }
}

int next_pow2(int y) {
  int p = 1;
  while (p < y) p *= 2;
  return p;
}

}  // namespace

FastfoodProjector FastfoodProjector::create(int y, size_t output_dim, uint64_t seed, float gain) {
  if (y < 1 || output_dim == 0) throw ConfigInvalidError("fastfood needs y >= 1 and output > 0");
  if (gain <= 0.0f) throw ConfigInvalidError("fastfood gain must be positive");
  FastfoodProjector ff;
  ff.y_ = y;
  ff.y_padded_ = next_pow2(y);
  ff.output_dim_ = output_dim;
  ff.blocks_ = (output_dim + ff.y_padded_ - 1) / ff.y_padded_;
  ff.seed_ = seed;
  ff.gain_ = gain;
  const size_t n = ff.blocks_ * ff.y_padded_;

  auto rng = make_rng(seed, "fastfood");
  ff.sign_flips_.resize(n);
  for (auto& b : ff.sign_flips_) b = (rng() & 1u) ? 1.0f : -1.0f;
  ff.permutation_.resize(n);
  for (size_t blk = 0; blk < ff.blocks_; ++blk) {
    auto* p = &ff.permutation_[blk * ff.y_padded_];
    std::iota(p, p + ff.y_padded_, 0);
    std::shuffle(p, p + ff.y_padded_, rng);
  }
  ff.g_ = Tensor::randn(1, static_cast<int>(n), rng, 1.0f, true);  // standard normal, trained
  return ff;
}

FastfoodProjector FastfoodProjector::restore(int y, size_t output_dim, uint64_t seed, float gain,
                                             std::vector<float> sign_flips,
                                             std::vector<int32_t> permutation,
                                             std::vector<float> g_values) {
  FastfoodProjector ff;
  ff.y_ = y;
  ff.y_padded_ = next_pow2(y);
  ff.output_dim_ = output_dim;
  ff.blocks_ = (output_dim + ff.y_padded_ - 1) / ff.y_padded_;
  ff.seed_ = seed;
  ff.gain_ = gain;
  const size_t n = ff.blocks_ * ff.y_padded_;
  if (sign_flips.size() != n || permutation.size() != n || g_values.size() != n)
    throw CorruptCheckpointError("fastfood buffers do not match projector dimensions");
  ff.sign_flips_ = std::move(sign_flips);
  ff.permutation_ = std::move(permutation);
  ff.g_ = Tensor::from_flat(1, static_cast<int>(n), std::move(g_values), true);
  return ff;
}

Tensor FastfoodProjector::delta(const Tensor& intrinsic_row) const {
  if (intrinsic_row.rows() != 1 || intrinsic_row.cols() != y_)
    throw ShapeMismatchError("fastfood delta: intrinsic vector must be 1 x y");
  const int yp = y_padded_;
  const size_t blocks = blocks_;
  const double sqrt_blocks = std::sqrt(static_cast<double>(blocks));

  // Forward, cached intermediates per block for the backward closure.
  std::vector<double> ipad(yp, 0.0);
  for (int i = 0; i < y_; ++i) ipad[i] = intrinsic_row.data()[i];

  std::vector<double> permuted(blocks * yp);   // p = Pi(fwht(B o I))
  std::vector<double> transformed(blocks * yp);  // r = fwht(G o p)
  std::vector<double> denoms(blocks);
  std::vector<float> out(output_dim_);
  const float* gd = g_.data().data();

  std::vector<double> buf(yp);
  for (size_t b = 0; b < blocks; ++b) {
    const size_t base = b * yp;
    for (int i = 0; i < yp; ++i) buf[i] = sign_flips_[base + i] * ipad[i];
    fwht_double(buf);
    for (int i = 0; i < yp; ++i) permuted[base + i] = buf[permutation_[base + i]];
    double g_norm_sq = 0.0;
    for (int i = 0; i < yp; ++i) {
      buf[i] = static_cast<double>(gd[base + i]) * permuted[base + i];
      g_norm_sq += static_cast<double>(gd[base + i]) * gd[base + i];
    }
    fwht_double(buf);
    denoms[b] = yp * std::sqrt(g_norm_sq) * sqrt_blocks / gain_;
    for (int i = 0; i < yp; ++i) {
      transformed[base + i] = buf[i];
      const size_t j = base + i;
      if (j < output_dim_) out[j] = static_cast<float>(buf[i] / denoms[b]);
    }
  }
  if (!all_finite(out)) throw NonFiniteError("fastfood delta produced a non-finite value");

  auto* in_node = intrinsic_row.node();
  auto* g_node = g_.node();
  const auto& signs = sign_flips_;
  const auto& perm = permutation_;
  const size_t out_dim = output_dim_;
  const int y_dim = y_;

  auto backward_fn = [in_node, g_node, signs, perm, permuted, transformed, denoms, yp, blocks,
                      out_dim, y_dim](detail::TensorNode& self) {
    std::vector<double> gr(yp), gq(yp), gw(yp);
    std::vector<double> gi(yp, 0.0);
    const bool want_g = g_node->requires_grad;
    const bool want_i = in_node->requires_grad;
    if (want_g) g_node->ensure_grad();
    for (size_t b = 0; b < blocks; ++b) {
      const size_t base = b * yp;
      double g_norm_sq = 0.0;
      for (int i = 0; i < yp; ++i)
        g_norm_sq += static_cast<double>(g_node->data[base + i]) * g_node->data[base + i];
      double dot_out = 0.0;  // sum_j gout_j * out_j within this block
      for (int i = 0; i < yp; ++i) {
        const size_t j = base + i;
        const double go = j < out_dim ? self.grad[j] : 0.0;
        gr[i] = go / denoms[b];
        if (j < out_dim) dot_out += go * (transformed[j] / denoms[b]);
      }
      for (int i = 0; i < yp; ++i) gq[i] = gr[i];
      fwht_double(gq);  // H^T = H
      if (want_g) {
        for (int i = 0; i < yp; ++i) {
          // product rule through G o p, plus the G-dependence of the norm
          double gg = gq[i] * permuted[base + i];
          gg -= dot_out * static_cast<double>(g_node->data[base + i]) / g_norm_sq;
          g_node->grad[base + i] += static_cast<float>(gg);
        }
      }
      if (want_i) {
        for (int i = 0; i < yp; ++i)
          gw[perm[base + i]] = gq[i] * static_cast<double>(g_node->data[base + i]);
        fwht_double(gw);
        for (int i = 0; i < yp; ++i) gi[i] += signs[base + i] * gw[i];
      }
    }
    if (want_i) {
      in_node->ensure_grad();
      for (int i = 0; i < y_dim; ++i) in_node->grad[i] += static_cast<float>(gi[i]);
    }
  };

  auto node = detail::make_node(1, static_cast<int>(output_dim_), std::move(out),
                                {intrinsic_row, g_}, std::move(backward_fn));
  if (detail::precise_eval()) {
    auto ih = detail::hi_of(intrinsic_row);
    auto gh = detail::hi_of(g_);
    node->hi.resize(output_dim_);
    std::vector<double> pad(yp, 0.0);
    for (int i = 0; i < y_; ++i) pad[i] = ih[i];
    std::vector<double> hbuf(yp);
    for (size_t b = 0; b < blocks; ++b) {
      const size_t base = b * yp;
      for (int i = 0; i < yp; ++i) hbuf[i] = signs[base + i] * pad[i];
      fwht_double(hbuf);
      std::vector<double> hperm(yp);
      for (int i = 0; i < yp; ++i) hperm[i] = hbuf[perm[base + i]];
      double g_norm_sq = 0.0;
      for (int i = 0; i < yp; ++i) {
        hbuf[i] = gh[base + i] * hperm[i];
        g_norm_sq += gh[base + i] * gh[base + i];
      }
      fwht_double(hbuf);
      const double denom = yp * std::sqrt(g_norm_sq) * sqrt_blocks / gain_;
      for (int i = 0; i < yp; ++i) {
        const size_t j = base + i;
        if (j < output_dim_) node->hi[j] = hbuf[i] / denom;
      }
    }
  }
  return Tensor(std::move(node));
}

}  // namespace deltasub
