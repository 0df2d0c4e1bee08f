#include "deltasub/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

namespace deltasub {

namespace {

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double norm(const std::vector<float>& a) { return std::sqrt(dot(a, a)); }

}  // namespace

LandscapeAxes orthonormal_axes(const IntrinsicVector& i_a, const IntrinsicVector& i_p,
                               const IntrinsicVector& i_l) {
  if (i_a.y() != i_p.y() || i_a.y() != i_l.y())
    throw ShapeMismatchError("intrinsic vectors must share dimension");
  const int y = i_a.y();
  std::vector<float> u(y), vt(y);
  for (int i = 0; i < y; ++i) {
    u[i] = i_p.values[i] - i_a.values[i];
    vt[i] = i_l.values[i] - i_a.values[i];
  }
  const double nu = norm(u);
  if (nu < 1e-8) throw DegenerateGeometryError("prefix solution coincides with the origin");
  for (auto& x : u) x = static_cast<float>(x / nu);
  const double proj = dot(vt, u);
  for (int i = 0; i < y; ++i) vt[i] = static_cast<float>(vt[i] - proj * u[i]);
  const double nv = norm(vt);
  if (nv < 1e-8) throw DegenerateGeometryError("third solution is collinear with the first axis");
  for (auto& x : vt) x = static_cast<float>(x / nv);

  LandscapeAxes axes;
  axes.origin = i_a;
  axes.u = std::move(u);
  axes.v = std::move(vt);
  return axes;
}

namespace {

constexpr std::array<PetKind, 3> kLandscapeKinds{PetKind::Adapter, PetKind::Prefix, PetKind::Lora};

Tensor point_tensor(const LandscapeAxes& axes, double alpha, double beta) {
  const int y = axes.origin.y();
  std::vector<float> p(y);
  for (int i = 0; i < y; ++i)
    p[i] = static_cast<float>(axes.origin.values[i] + alpha * axes.u[i] + beta * axes.v[i]);
  return Tensor::from_flat(1, y, std::move(p), false);
}

}  // namespace

double landscape_value(const BackboneWeights& w, const SubspaceArtifacts& art, const Task& task,
                       const LandscapeAxes& axes, double alpha, double beta, double e_pet,
                       int cap) {
  if (e_pet <= 0.0) throw ZeroBaselineError("average original-space performance must be positive");
  Tensor point = point_tensor(axes, alpha, beta);
  double acc = 0.0;
  for (PetKind kind : kLandscapeKinds)
    acc += evaluate_intrinsic(w, art, kind, point, task, Split::Test, cap) / e_pet;
  return acc / 3.0;
}

LandscapeGrid landscape_grid(const BackboneWeights& w, const SubspaceArtifacts& art,
                             const Task& task, const IntrinsicVector& i_a,
                             const IntrinsicVector& i_p, const IntrinsicVector& i_l, double e_pet,
                             double range, double step, int cap, int threads) {
  auto axes = orthonormal_axes(i_a, i_p, i_l);
  LandscapeGrid grid;
  grid.origin = axes.origin;
  grid.u = axes.u;
  grid.v = axes.v;
  grid.range = range;
  grid.step = step;
  grid.side = static_cast<int>(std::lround(2.0 * range / step)) + 1;
  grid.e_pet = e_pet;
  grid.values.assign(static_cast<size_t>(grid.side) * grid.side, 0.0);

  // coordinates of the solutions in the grid frame
  const int y = axes.origin.y();
  std::vector<float> dp(y), dl(y);
  for (int i = 0; i < y; ++i) {
    dp[i] = i_p.values[i] - i_a.values[i];
    dl[i] = i_l.values[i] - i_a.values[i];
  }
  grid.solution_coords[0] = {0.0, 0.0};
  grid.solution_coords[1] = {dot(dp, grid.u), dot(dp, grid.v)};
  grid.solution_coords[2] = {dot(dl, grid.u), dot(dl, grid.v)};

  const size_t total = grid.values.size();
  int n_threads = threads > 0 ? threads
                              : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  n_threads = std::min<int>(n_threads, static_cast<int>(total));

  auto worker = [&](size_t begin, size_t end) {
    for (size_t idx = begin; idx < end; ++idx) {
      const int i = static_cast<int>(idx) / grid.side;
      const int j = static_cast<int>(idx) % grid.side;
      grid.values[idx] =
          landscape_value(w, art, task, axes, grid.alpha_at(i), grid.beta_at(j), e_pet, cap);
    }
  };
  if (n_threads <= 1) {
    worker(0, total);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (total + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const size_t begin = t * chunk;
      const size_t end = std::min(total, begin + chunk);
      if (begin < end) pool.emplace_back(worker, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return grid;
}

std::string landscape_csv(const LandscapeGrid& grid) {
  std::string out = "alpha,beta,P\n";
  char line[96];
  for (int i = 0; i < grid.side; ++i)
    for (int j = 0; j < grid.side; ++j) {
      std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f\n", grid.alpha_at(i), grid.beta_at(j),
                    grid.value_at(i, j));
      out += line;
    }
  return out;
}

}  // namespace deltasub
