#pragma once

// Independent double-precision reference implementations used as test
// oracles. Nothing here may call into the library's compute paths.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracles {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
  size_t m = a.size(), k = b.size(), n = b[0].size();
  Mat c(m, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j)
      for (size_t p = 0; p < k; ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double denom = 0.0;
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    denom += out[i];
  }
  for (auto& v : out) v /= denom;
  return out;
}

inline double cross_entropy(const Mat& logits, const std::vector<int>& targets) {
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    auto p = softmax(logits[i]);
    total += -std::log(p[targets[i]]);
  }
  return total / static_cast<double>(logits.size());
}

inline Mat transpose(const Mat& a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat concat_rows(const Mat& a, const Mat& b) {
  Mat out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Single-head attention with optional prefix rows already prepended to k/v.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, double inv_sqrt_dh,
                     Mat* weights_out = nullptr) {
  Mat scores = matmul(q, transpose(k));
  for (auto& row : scores)
    for (auto& s : row) s *= inv_sqrt_dh;
  Mat weights(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) weights[i] = softmax(scores[i]);
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

// Unnormalized Hadamard matrix of size n (power of two), built recursively.
inline Mat hadamard(size_t n) {
  Mat h{{1.0}};
  for (size_t s = 1; s < n; s *= 2) {
    Mat next(2 * s, std::vector<double>(2 * s));
    for (size_t i = 0; i < s; ++i)
      for (size_t j = 0; j < s; ++j) {
        next[i][j] = h[i][j];
        next[i][j + s] = h[i][j];
        next[i + s][j] = h[i][j];
        next[i + s][j + s] = -h[i][j];
      }
    h = std::move(next);
  }
  return h;
}

// Numerical rank via Gaussian elimination with partial pivoting.
inline int matrix_rank(Mat a, double tol = 1e-6) {
  if (a.empty()) return 0;
  const size_t m = a.size(), n = a[0].size();
  int rank = 0;
  size_t row = 0;
  for (size_t col = 0; col < n && row < m; ++col) {
    size_t pivot = row;
    for (size_t i = row + 1; i < m; ++i)
      if (std::fabs(a[i][col]) > std::fabs(a[pivot][col])) pivot = i;
    if (std::fabs(a[pivot][col]) < tol) continue;
    std::swap(a[row], a[pivot]);
    for (size_t i = 0; i < m; ++i) {
      if (i == row) continue;
      double f = a[i][col] / a[row][col];
      for (size_t j = col; j < n; ++j) a[i][j] -= f * a[row][j];
    }
    ++rank;
    ++row;
  }
  return rank;
}

inline Mat tanh_mat(Mat a) {
  for (auto& row : a)
    for (auto& x : row) x = std::tanh(x);
  return a;
}

}  // namespace oracles
