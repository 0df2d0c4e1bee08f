#pragma once

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deltasub/errors.hpp"

namespace deltasub {

class Tensor;

namespace detail {

// One record of the dynamically built compute graph. Forward values are
// cached in `data`; `backward_fn` scatters this node's grad into its parents.
struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;
  std::vector<float> grad;  // allocated on first touch during backward
  bool requires_grad = false;
  // Scalar reductions keep their 64-bit accumulator so finite-difference
  // oracles are not limited by the final float32 rounding of the loss.
  double precise = 0.0;
  bool has_precise = false;
  // Populated only while a PreciseEvalGuard is active: float64 shadow of
  // `data`, giving finite-difference oracles a 64-bit forward evaluation.
  std::vector<double> hi;
  std::vector<Tensor> parents;
  std::function<void(TensorNode&)> backward_fn;

  size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

std::shared_ptr<TensorNode> make_node(int rows, int cols, std::vector<float> data,
                                      std::vector<Tensor> parents,
                                      std::function<void(TensorNode&)> backward_fn);

bool grad_enabled();
bool precise_eval();

// Switches ops into dual float32/float64 forward evaluation (thread-local).
struct PreciseEvalGuard {
  PreciseEvalGuard();
  ~PreciseEvalGuard();
  PreciseEvalGuard(const PreciseEvalGuard&) = delete;
  PreciseEvalGuard& operator=(const PreciseEvalGuard&) = delete;
};

// Shadow values of t: its float64 buffer when present, else widened data.
std::vector<double> hi_of(const Tensor& t);

}  // namespace detail

// Dense 2-D float32 tensor with reverse-mode autodiff. Copies are handles to
// the same storage; values are immutable once written by an op. Vectors are
// represented as 1xN, scalars as 1x1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor scalar(float value);
  static Tensor from_flat(int rows, int cols, std::vector<float> data, bool requires_grad = false);
  static Tensor from_rows(const std::vector<std::vector<float>>& rows, bool requires_grad = false);
  static Tensor randn(int rows, int cols, std::mt19937& rng, float stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  size_t size() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  float at(int r, int c) const { return node_->data[static_cast<size_t>(r) * node_->cols + c]; }
  float item() const;
  // item() at reduction precision when available, else the float32 value.
  double item_precise() const;

  // Spans view into the node buffer; binding them to a temporary Tensor would
  // dangle, so rvalue access is disabled.
  std::span<const float> data() const& { return node_->data; }
  std::span<const float> data() const&& = delete;
  // Mutable access for leaf tensors (initialization, optimizer updates).
  // Mutating a non-leaf between forward and backward corrupts the graph.
  std::span<float> raw_data() & { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const& { return node_->grad; }
  std::span<const float> grad() const&& = delete;
  std::span<float> raw_grad() { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0f);
  }

  detail::TensorNode* node() const { return node_.get(); }

  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Disables graph recording (thread-local) for evaluation-only forwards.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// --- forward ops -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or b broadcast as 1xC row
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, float c);
Tensor silu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
Tensor sum(const Tensor& a);  // 1x1
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor slice_rows(const Tensor& a, int r0, int r1);
// View [offset, offset + rows*cols) of a 1xN tensor as a rows x cols matrix.
Tensor slice_reshape(const Tensor& flat, size_t offset, int rows, int cols);
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

// --- backward --------------------------------------------------------------

// Populates grads of every requires_grad tensor reachable from `loss`.
// Each graph node is visited exactly once; contributions accumulate.
void backward(const Tensor& loss);

// Max over all coordinates of |analytic - central difference| /
// max(|analytic|, |fd|, 1e-8). `f` must be deterministic; params are the leaf
// tensors it closes over.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, float eps);

// --- small utilities -------------------------------------------------------

bool all_finite(std::span<const float> v);
uint64_t fnv1a64(const void* bytes, size_t n);
uint64_t tensor_hash(const Tensor& t);

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
                float eps = 1e-8f);
  void step();
  void zero_grad();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  float lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace deltasub
