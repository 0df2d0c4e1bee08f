#include "deltasub/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace deltasub {

namespace detail {

namespace {
thread_local int no_grad_depth = 0;
thread_local int precise_depth = 0;
}

bool grad_enabled() { return no_grad_depth == 0; }
bool precise_eval() { return precise_depth > 0; }

PreciseEvalGuard::PreciseEvalGuard() { ++precise_depth; }
PreciseEvalGuard::~PreciseEvalGuard() { --precise_depth; }

std::vector<double> hi_of(const Tensor& t) {
  auto* n = t.node();
  if (!n->hi.empty()) return n->hi;
  return std::vector<double>(n->data.begin(), n->data.end());
}

std::shared_ptr<TensorNode> make_node(int rows, int cols, std::vector<float> data,
                                      std::vector<Tensor> parents,
                                      std::function<void(TensorNode&)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->rows = rows;
  node->cols = cols;
  node->data = std::move(data);
  bool any_parent = false;
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        any_parent = true;
        break;
      }
    }
  }
  if (any_parent) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

}  // namespace detail

NoGradGuard::NoGradGuard() { ++detail::no_grad_depth; }
NoGradGuard::~NoGradGuard() { --detail::no_grad_depth; }

namespace {

void check_shape(bool cond, const std::string& what) {
  if (!cond) throw ShapeMismatchError(what);
}

void check_output_finite(const char* op, std::span<const float> v) {
  if (!all_finite(v)) throw NonFiniteError(std::string(op) + " produced a non-finite value");
}

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

double scalar_precise(const Tensor& t) {
  auto* n = t.node();
  if (!n->hi.empty()) return n->hi[0];
  return n->has_precise ? n->precise : static_cast<double>(n->data[0]);
}

bool is_scalar(const Tensor& t) { return t.rows() == 1 && t.cols() == 1; }

void set_precise(const Tensor& t, double v) {
  t.node()->precise = v;
  t.node()->has_precise = true;
}

}  // namespace

bool all_finite(std::span<const float> v) {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

uint64_t fnv1a64(const void* bytes, size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t tensor_hash(const Tensor& t) {
  return fnv1a64(t.data().data(), t.size() * sizeof(float));
}

// --- construction ------------------------------------------------------------

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->rows = rows;
  node->cols = cols;
  node->data.assign(static_cast<size_t>(rows) * cols, 0.0f);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value) {
  auto t = zeros(1, 1, false);
  t.raw_data()[0] = value;
  return t;
}

Tensor Tensor::from_flat(int rows, int cols, std::vector<float> data, bool requires_grad) {
  check_shape(static_cast<size_t>(rows) * cols == data.size(), "from_flat: data length mismatch");
  auto node = std::make_shared<detail::TensorNode>();
  node->rows = rows;
  node->cols = cols;
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_rows(const std::vector<std::vector<float>>& rows, bool requires_grad) {
  int r = static_cast<int>(rows.size());
  int c = r > 0 ? static_cast<int>(rows[0].size()) : 0;
  std::vector<float> flat;
  flat.reserve(static_cast<size_t>(r) * c);
  for (const auto& row : rows) {
    check_shape(static_cast<int>(row.size()) == c, "from_rows: ragged rows");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return from_flat(r, c, std::move(flat), requires_grad);
}

Tensor Tensor::randn(int rows, int cols, std::mt19937& rng, float stddev, bool requires_grad) {
  auto t = zeros(rows, cols, requires_grad);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& x : t.raw_data()) x = dist(rng);
  return t;
}

float Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw NonScalarLossError("item() on non-scalar tensor");
  return node_->data[0];
}

double Tensor::item_precise() const {
  if (rows() != 1 || cols() != 1) throw NonScalarLossError("item_precise() on non-scalar tensor");
  if (!node_->hi.empty()) return node_->hi[0];
  return node_->has_precise ? node_->precise : static_cast<double>(node_->data[0]);
}

// --- ops ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_shape(a.cols() == b.rows(), "matmul: inner dimensions differ (" +
                                        std::to_string(a.cols()) + " vs " +
                                        std::to_string(b.rows()) + ")");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<float> out(static_cast<size_t>(m) * n);
  const float* ad = a.data().data();
  const float* bd = b.data().data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += static_cast<double>(ad[i * k + p]) * bd[p * n + j];
      out[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
    }
  }
  check_output_finite("matmul", out);
  auto* an = a.node();
  auto* bn = b.node();
  auto node = detail::make_node(
      m, n, std::move(out), {a, b}, [an, bn, m, k, n](detail::TensorNode& self) {
        // dA = dC * B^T, dB = A^T * dC
        if (an->requires_grad) {
          an->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              double acc = 0.0;
              for (int j = 0; j < n; ++j)
                acc += static_cast<double>(self.grad[i * n + j]) * bn->data[p * n + j];
              an->grad[i * k + p] += static_cast<float>(acc);
            }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int p = 0; p < k; ++p)
            for (int j = 0; j < n; ++j) {
              double acc = 0.0;
              for (int i = 0; i < m; ++i)
                acc += static_cast<double>(an->data[i * k + p]) * self.grad[i * n + j];
              bn->grad[p * n + j] += static_cast<float>(acc);
            }
        }
      });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    auto bh = detail::hi_of(b);
    node->hi.resize(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += ah[i * k + p] * bh[p * n + j];
        node->hi[static_cast<size_t>(i) * n + j] = acc;
      }
  }
  return Tensor(std::move(node));
}

Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<float> out(static_cast<size_t>(m) * n);
  const float* ad = a.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = ad[i * n + j];
  auto* an = a.node();
  auto node = detail::make_node(n, m, std::move(out), {a}, [an, m, n](detail::TensorNode& self) {
    an->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[static_cast<size_t>(j) * m + i];
  });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    node->hi.resize(ah.size());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) node->hi[static_cast<size_t>(j) * m + i] = ah[i * n + j];
  }
  return Tensor(std::move(node));
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = (b.rows() == 1 && a.cols() == b.cols() && a.rows() != 1);
  check_shape(broadcast || (a.rows() == b.rows() && a.cols() == b.cols()),
              "add: incompatible shapes");
  const int m = a.rows(), n = a.cols();
  std::vector<float> out(a.data().begin(), a.data().end());
  const float* bd = b.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += bd[broadcast ? j : i * n + j];
  check_output_finite("add", out);
  auto* an = a.node();
  auto* bn = b.node();
  auto node = detail::make_node(
      m, n, std::move(out), {a, b}, [an, bn, m, n, broadcast](detail::TensorNode& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          if (broadcast) {
            for (int j = 0; j < n; ++j) {
              double acc = 0.0;
              for (int i = 0; i < m; ++i) acc += self.grad[static_cast<size_t>(i) * n + j];
              bn->grad[j] += static_cast<float>(acc);
            }
          } else {
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
          }
        }
      });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    auto bh = detail::hi_of(b);
    node->hi = ah;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) node->hi[static_cast<size_t>(i) * n + j] += bh[broadcast ? j : i * n + j];
  }
  Tensor result(std::move(node));
  if (is_scalar(result)) set_precise(result, scalar_precise(a) + scalar_precise(b));
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub: incompatible shapes");
  std::vector<float> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  check_output_finite("sub", out);
  auto* an = a.node();
  auto* bn = b.node();
  auto node =
      detail::make_node(a.rows(), a.cols(), std::move(out), {a, b}, [an, bn](detail::TensorNode& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
      });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    auto bh = detail::hi_of(b);
    node->hi.resize(ah.size());
    for (size_t i = 0; i < ah.size(); ++i) node->hi[i] = ah[i] - bh[i];
  }
  Tensor result(std::move(node));
  if (is_scalar(result)) set_precise(result, scalar_precise(a) - scalar_precise(b));
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul: incompatible shapes");
  std::vector<float> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  check_output_finite("mul", out);
  auto* an = a.node();
  auto* bn = b.node();
  auto node =
      detail::make_node(a.rows(), a.cols(), std::move(out), {a, b}, [an, bn](detail::TensorNode& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
        }
      });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    auto bh = detail::hi_of(b);
    node->hi.resize(ah.size());
    for (size_t i = 0; i < ah.size(); ++i) node->hi[i] = ah[i] * bh[i];
  }
  Tensor result(std::move(node));
  if (is_scalar(result)) set_precise(result, scalar_precise(a) * scalar_precise(b));
  return result;
}

Tensor scale(const Tensor& a, float c) {
  std::vector<float> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  check_output_finite("scale", out);
  auto* an = a.node();
  auto node = detail::make_node(a.rows(), a.cols(), std::move(out), {a},
                                [an, c](detail::TensorNode& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                    an->grad[i] += self.grad[i] * c;
                                });
  if (detail::precise_eval()) {
    node->hi = detail::hi_of(a);
    for (auto& x : node->hi) x *= static_cast<double>(c);
  }
  Tensor result(std::move(node));
  if (is_scalar(result)) set_precise(result, scalar_precise(a) * static_cast<double>(c));
  return result;
}

Tensor silu(const Tensor& a) {
  std::vector<float> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    float x = a.data()[i];
    out[i] = x * sigmoidf(x);
  }
  check_output_finite("silu", out);
  auto* an = a.node();
  auto node = detail::make_node(a.rows(), a.cols(), std::move(out), {a},
                                [an](detail::TensorNode& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i) {
                                    float x = an->data[i];
                                    float s = sigmoidf(x);
                                    an->grad[i] += self.grad[i] * (s * (1.0f + x * (1.0f - s)));
                                  }
                                });
  if (detail::precise_eval()) {
    node->hi = detail::hi_of(a);
    for (auto& x : node->hi) x = x / (1.0 + std::exp(-x));
  }
  return Tensor(std::move(node));
}

Tensor tanh(const Tensor& a) {
  std::vector<float> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  check_output_finite("tanh", out);
  auto* an = a.node();
  auto node = detail::make_node(a.rows(), a.cols(), std::move(out), {a},
                                [an](detail::TensorNode& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i) {
                                    float t = self.data[i];
                                    an->grad[i] += self.grad[i] * (1.0f - t * t);
                                  }
                                });
  if (detail::precise_eval()) {
    node->hi = detail::hi_of(a);
    for (auto& x : node->hi) x = std::tanh(x);
  }
  return Tensor(std::move(node));
}

Tensor relu(const Tensor& a) {
  std::vector<float> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0f, a.data()[i]);
  auto* an = a.node();
  auto node = detail::make_node(a.rows(), a.cols(), std::move(out), {a},
                                [an](detail::TensorNode& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                    an->grad[i] += an->data[i] > 0.0f ? self.grad[i] : 0.0f;
                                });
  if (detail::precise_eval()) {
    node->hi = detail::hi_of(a);
    for (auto& x : node->hi) x = std::max(0.0, x);
  }
  return Tensor(std::move(node));
}

Tensor softmax_rows(const Tensor& a) {
  if (!all_finite(a.data())) throw NonFiniteError("softmax_rows: non-finite input");
  const int m = a.rows(), n = a.cols();
  std::vector<float> out(a.size());
  const float* ad = a.data().data();
  for (int i = 0; i < m; ++i) {
    float mx = ad[i * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, ad[i * n + j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(static_cast<double>(ad[i * n + j]) - mx);
      out[static_cast<size_t>(i) * n + j] = static_cast<float>(e);
      denom += e;
    }
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] =
          static_cast<float>(out[static_cast<size_t>(i) * n + j] / denom);
  }
  check_output_finite("softmax_rows", out);
  auto* an = a.node();
  auto node = detail::make_node(
      m, n, std::move(out), {a}, [an, m, n](detail::TensorNode& self) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i) {
          double dot = 0.0;
          for (int j = 0; j < n; ++j)
            dot += static_cast<double>(self.grad[i * n + j]) * self.data[i * n + j];
          for (int j = 0; j < n; ++j) {
            size_t idx = static_cast<size_t>(i) * n + j;
            an->grad[idx] +=
                static_cast<float>(self.data[idx] * (static_cast<double>(self.grad[idx]) - dot));
          }
        }
      });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    node->hi.resize(ah.size());
    for (int i = 0; i < m; ++i) {
      double mx = ah[static_cast<size_t>(i) * n];
      for (int j = 1; j < n; ++j) mx = std::max(mx, ah[static_cast<size_t>(i) * n + j]);
      double denom = 0.0;
      for (int j = 0; j < n; ++j) {
        double e = std::exp(ah[static_cast<size_t>(i) * n + j] - mx);
        node->hi[static_cast<size_t>(i) * n + j] = e;
        denom += e;
      }
      for (int j = 0; j < n; ++j) node->hi[static_cast<size_t>(i) * n + j] /= denom;
    }
  }
  return Tensor(std::move(node));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  const int n = logits.rows(), v = logits.cols();
  check_shape(static_cast<int>(targets.size()) == n, "cross_entropy: one target per row required");
  for (int t : targets) {
    if (t < 0 || t >= v)
      throw TargetOutOfRangeError("target " + std::to_string(t) + " outside [0, " +
                                  std::to_string(v) + ")");
  }
  const float* ld = logits.data().data();
  // mean over rows of -log softmax(row)[target], log-sum-exp in doubles
  double total = 0.0;
  std::vector<float> probs(logits.size());
  for (int i = 0; i < n; ++i) {
    float mx = ld[i * v];
    for (int j = 1; j < v; ++j) mx = std::max(mx, ld[i * v + j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) {
      double e = std::exp(static_cast<double>(ld[i * v + j]) - mx);
      probs[static_cast<size_t>(i) * v + j] = static_cast<float>(e);
      denom += e;
    }
    for (int j = 0; j < v; ++j)
      probs[static_cast<size_t>(i) * v + j] =
          static_cast<float>(probs[static_cast<size_t>(i) * v + j] / denom);
    total += std::log(denom) - (static_cast<double>(ld[i * v + targets[i]]) - mx);
  }
  std::vector<float> out{static_cast<float>(total / n)};
  check_output_finite("cross_entropy", out);
  auto* ln = logits.node();
  auto node = detail::make_node(
      1, 1, std::move(out), {logits},
      [ln, n, v, targets, probs = std::move(probs)](detail::TensorNode& self) {
        ln->ensure_grad();
        const float g = self.grad[0] / static_cast<float>(n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < v; ++j) {
            size_t idx = static_cast<size_t>(i) * v + j;
            ln->grad[idx] += g * (probs[idx] - (j == targets[i] ? 1.0f : 0.0f));
          }
      });
  if (detail::precise_eval()) {
    auto lh = detail::hi_of(logits);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double mx = lh[static_cast<size_t>(i) * v];
      for (int j = 1; j < v; ++j) mx = std::max(mx, lh[static_cast<size_t>(i) * v + j]);
      double denom = 0.0;
      for (int j = 0; j < v; ++j) denom += std::exp(lh[static_cast<size_t>(i) * v + j] - mx);
      acc += std::log(denom) - (lh[static_cast<size_t>(i) * v + targets[i]] - mx);
    }
    node->hi = {acc / n};
  }
  Tensor result(std::move(node));
  set_precise(result, total / n);
  return result;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float x : a.data()) acc += x;
  std::vector<float> out{static_cast<float>(acc)};
  check_output_finite("sum", out);
  auto* an = a.node();
  auto node = detail::make_node(1, 1, std::move(out), {a}, [an](detail::TensorNode& self) {
    an->ensure_grad();
    for (auto& g : an->grad) g += self.grad[0];
  });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    double hacc = 0.0;
    for (double x : ah) hacc += x;
    node->hi = {hacc};
  }
  Tensor result(std::move(node));
  set_precise(result, acc);
  return result;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check_shape(a.cols() == b.cols(), "concat_rows: column counts differ");
  const int n = a.cols();
  std::vector<float> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  auto* an = a.node();
  auto* bn = b.node();
  const size_t asz = a.size();
  auto node = detail::make_node(a.rows() + b.rows(), n, std::move(out), {a, b},
                                [an, bn, asz](detail::TensorNode& self) {
                                  if (an->requires_grad) {
                                    an->ensure_grad();
                                    for (size_t i = 0; i < asz; ++i) an->grad[i] += self.grad[i];
                                  }
                                  if (bn->requires_grad) {
                                    bn->ensure_grad();
                                    for (size_t i = 0; i < bn->grad.size(); ++i)
                                      bn->grad[i] += self.grad[asz + i];
                                  }
                                });
  if (detail::precise_eval()) {
    node->hi = detail::hi_of(a);
    auto bh = detail::hi_of(b);
    node->hi.insert(node->hi.end(), bh.begin(), bh.end());
  }
  return Tensor(std::move(node));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check_shape(!parts.empty(), "concat_cols: no parts");
  const int m = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    check_shape(p.rows() == m, "concat_cols: row counts differ");
    total += p.cols();
  }
  std::vector<float> out(static_cast<size_t>(m) * total);
  int off = 0;
  for (const auto& p : parts) {
    const int c = p.cols();
    for (int i = 0; i < m; ++i)
      std::memcpy(&out[static_cast<size_t>(i) * total + off], &p.data()[static_cast<size_t>(i) * c],
                  sizeof(float) * c);
    off += c;
  }
  std::vector<detail::TensorNode*> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  auto node = detail::make_node(
      m, total, std::move(out), parts,
      [nodes = std::move(nodes), widths = std::move(widths), m, total](detail::TensorNode& self) {
        int off = 0;
        for (size_t k = 0; k < nodes.size(); ++k) {
          const int c = widths[k];
          if (nodes[k]->requires_grad) {
            nodes[k]->ensure_grad();
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < c; ++j)
                nodes[k]->grad[static_cast<size_t>(i) * c + j] +=
                    self.grad[static_cast<size_t>(i) * total + off + j];
          }
          off += c;
        }
      });
  if (detail::precise_eval()) {
    node->hi.resize(static_cast<size_t>(m) * total);
    int hoff = 0;
    for (const auto& p : parts) {
      auto ph = detail::hi_of(p);
      const int c = p.cols();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j)
          node->hi[static_cast<size_t>(i) * total + hoff + j] = ph[static_cast<size_t>(i) * c + j];
      hoff += c;
    }
  }
  return Tensor(std::move(node));
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check_shape(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
  const int m = a.rows(), n = a.cols(), w = c1 - c0;
  std::vector<float> out(static_cast<size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    std::memcpy(&out[static_cast<size_t>(i) * w], &a.data()[static_cast<size_t>(i) * n + c0],
                sizeof(float) * w);
  auto* an = a.node();
  auto node = detail::make_node(m, w, std::move(out), {a},
                                [an, m, n, w, c0](detail::TensorNode& self) {
                                  an->ensure_grad();
                                  for (int i = 0; i < m; ++i)
                                    for (int j = 0; j < w; ++j)
                                      an->grad[static_cast<size_t>(i) * n + c0 + j] +=
                                          self.grad[static_cast<size_t>(i) * w + j];
                                });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    node->hi.resize(static_cast<size_t>(m) * w);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        node->hi[static_cast<size_t>(i) * w + j] = ah[static_cast<size_t>(i) * n + c0 + j];
  }
  return Tensor(std::move(node));
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  check_shape(0 <= r0 && r0 < r1 && r1 <= a.rows(), "slice_rows: bad range");
  const int n = a.cols(), h = r1 - r0;
  std::vector<float> out(a.data().begin() + static_cast<size_t>(r0) * n,
                         a.data().begin() + static_cast<size_t>(r1) * n);
  auto* an = a.node();
  auto node = detail::make_node(h, n, std::move(out), {a},
                                [an, n, r0](detail::TensorNode& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                    an->grad[static_cast<size_t>(r0) * n + i] += self.grad[i];
                                });
  if (detail::precise_eval()) {
    auto ah = detail::hi_of(a);
    node->hi.assign(ah.begin() + static_cast<size_t>(r0) * n,
                    ah.begin() + static_cast<size_t>(r1) * n);
  }
  return Tensor(std::move(node));
}

Tensor slice_reshape(const Tensor& flat, size_t offset, int rows, int cols) {
  check_shape(flat.rows() == 1, "slice_reshape: source must be 1xN");
  const size_t extent = static_cast<size_t>(rows) * cols;
  check_shape(offset + extent <= flat.size(), "slice_reshape: range exceeds source");
  std::vector<float> out(flat.data().begin() + offset, flat.data().begin() + offset + extent);
  auto* fn = flat.node();
  auto node = detail::make_node(rows, cols, std::move(out), {flat},
                                [fn, offset](detail::TensorNode& self) {
                                  fn->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                    fn->grad[offset + i] += self.grad[i];
                                });
  if (detail::precise_eval()) {
    auto fh = detail::hi_of(flat);
    node->hi.assign(fh.begin() + offset, fh.begin() + offset + extent);
  }
  return Tensor(std::move(node));
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  const int n = table.cols();
  for (int id : ids)
    check_shape(0 <= id && id < table.rows(), "gather_rows: row index out of range");
  std::vector<float> out(ids.size() * n);
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(&out[i * n], &table.data()[static_cast<size_t>(ids[i]) * n], sizeof(float) * n);
  auto* tn = table.node();
  auto node = detail::make_node(static_cast<int>(ids.size()), n, std::move(out), {table},
                                [tn, ids, n](detail::TensorNode& self) {
                                  tn->ensure_grad();
                                  for (size_t i = 0; i < ids.size(); ++i)
                                    for (int j = 0; j < n; ++j)
                                      tn->grad[static_cast<size_t>(ids[i]) * n + j] +=
                                          self.grad[i * n + j];
                                });
  if (detail::precise_eval()) {
    auto th = detail::hi_of(table);
    node->hi.resize(ids.size() * n);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < n; ++j) node->hi[i * n + j] = th[static_cast<size_t>(ids[i]) * n + j];
  }
  return Tensor(std::move(node));
}

// --- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw NonScalarLossError("backward requires a 1x1 loss tensor");
  auto* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; each node enters `order` exactly once.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<detail::TensorNode*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      auto* child = top.first->parents[top.second].node();
      ++top.second;
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, float eps) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);

  std::vector<std::vector<float>> analytic;
  for (auto& p : params) {
    if (p.has_grad())
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    else
      analytic.emplace_back(p.size(), 0.0f);
  }

  double max_rel = 0.0;
  NoGradGuard no_grad;
  detail::PreciseEvalGuard precise;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].raw_data();
    for (size_t i = 0; i < data.size(); ++i) {
      const float saved = data[i];
      data[i] = saved + eps;
      const double xp = data[i];
      double fp = f().item_precise();
      data[i] = saved - eps;
      const double xm = data[i];
      double fm = f().item_precise();
      data[i] = saved;
      double fd = (fp - fm) / (xp - xm);
      double a = analytic[pi][i];
      double denom = std::max({std::fabs(a), std::fabs(fd), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - fd) / denom);
    }
  }
  return max_rel;
}

// --- Adam ----------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0f);
    v_.emplace_back(p.size(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.has_grad()) continue;
    auto data = p.raw_data();
    auto grad = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < data.size(); ++i) {
      const float g = grad[i];
      m[i] = beta1_ * m[i] + (1.0f - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0f - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

}  // namespace deltasub
